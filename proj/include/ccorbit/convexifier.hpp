#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "ccorbit/blockstats.hpp"
#include "ccorbit/core.hpp"
#include "ccorbit/specfun.hpp"

namespace ccorbit {

/// m_N(eps) = Q_N(1 - eps), the standard-normal upper quantile used by the
/// hyperplane chance-constraint tightening. Valid for eps in (0, 0.5).
inline double gaussian_quantile_coeff(double eps) {
    if (!(eps > 0.0 && eps < 0.5))
        throw ModelError("gaussian_quantile_coeff: eps must be in (0, 0.5)");
    return -normal_quantile(eps);  // Q(1-eps) = -Q(eps), evaluated in the precise tail
}

/// m_chi2(eps, n) = sqrt(Q_{chi2(n)}(1 - eps)) for vector-norm tightenings.
inline double chi2_quantile_coeff(double eps, int n) {
    if (!(eps > 0.0 && eps < 1.0)) throw ModelError("chi2_quantile_coeff: eps must be in (0,1)");
    if (n < 1) throw ModelError("chi2_quantile_coeff: n must be >= 1");
    return std::sqrt(chi2_quantile(1.0 - eps, static_cast<double>(n)));
}

/// Risk allocation for the chance constraints.
struct RiskBudget {
    double eps_x = 1e-3;
    double eps_u = 1e-3;
    double quantile_p = 0.99;             // cost quantile level
    std::vector<double> eps_x_alloc;      // optional per-hyperplane split of eps_x

    void validate(std::size_t n_hyperplanes = 0) const {
        if (!(eps_x > 0 && eps_x < 0.5) || !(eps_u > 0 && eps_u < 0.5))
            throw ModelError("RiskBudget: risk bounds must be in (0, 0.5)");
        if (!(quantile_p > 0.5 && quantile_p < 1.0))
            throw ModelError("RiskBudget: quantile level must be in (0.5, 1)");
        if (!eps_x_alloc.empty()) {
            if (eps_x_alloc.size() != n_hyperplanes)
                throw ModelError("RiskBudget: allocation size mismatch");
            double sum = 0;
            for (double e : eps_x_alloc) {
                if (!(e > 0 && e < 0.5)) throw ModelError("RiskBudget: bad allocation entry");
                sum += e;
            }
            if (sum > eps_x + 1e-15) throw ModelError("RiskBudget: allocations exceed eps_x");
        }
    }
};

struct Hyperplane {
    VecX a;
    double b = 0.0;
};

struct TubeSpec {
    MatX H;            // n_h x nx selector
    double d_max = 0;  // deviation bound
};

struct TerminalSpec {
    VecX x_f;
    MatX P_f;
};

struct ApproachConeSpec {
    MatX A_cone;     // n_c x 3
    VecX b_cone;     // 3
    MatX H_r;        // 3 x nx position selector
    double r_trigger = 0.0;
};

struct ConstraintSet {
    std::vector<Hyperplane> hyperplanes;   // applied at every node
    std::optional<TubeSpec> tube;
    std::optional<double> u_max;
    std::optional<double> du_max;
    std::optional<TerminalSpec> terminal;
    std::optional<ApproachConeSpec> stc;
};

/// A sparse affine scalar expression over the decision variables.
struct LinExpr {
    double constant = 0.0;
    std::vector<std::pair<int, double>> terms;

    LinExpr() = default;
    explicit LinExpr(double c) : constant(c) {}
    static LinExpr variable(int v, double coeff = 1.0) {
        LinExpr e;
        e.terms.emplace_back(v, coeff);
        return e;
    }
    void add_term(int v, double coeff) {
        if (v >= 0 && coeff != 0.0) terms.emplace_back(v, coeff);
    }
    double evaluate(const VecX& x) const {
        double v = constant;
        for (const auto& [i, c] : terms) v += c * x[i];
        return v;
    }
};

/// Conic program under construction. Every probabilistic cost/constraint is
/// reduced to linear expressions, second-order cones over compressed factor
/// rows, and the linear objective.
struct ConvexProgram {
    int n_vars = 0;
    std::vector<double> obj;      // dense objective coefficients
    std::vector<LinExpr> eq;      // expr == 0
    std::vector<LinExpr> ineq;    // expr >= 0

    /// t_expr >= || R [1; x_vars] ||_2, columns of R ordered [constant, vars...]
    struct Soc {
        LinExpr t;
        MatX R;
        std::vector<int> vars;
    };
    std::vector<Soc> socs;

    int new_var(double obj_coeff = 0.0) {
        obj.push_back(obj_coeff);
        return n_vars++;
    }
    void add_obj(int var, double coeff) { obj[var] += coeff; }

    void validate() const {
        auto check_expr = [&](const LinExpr& e) {
            for (const auto& [v, c] : e.terms) {
                if (v < 0 || v >= n_vars) throw ModelError("ConvexProgram: bad variable index");
                if (!std::isfinite(c)) throw ModelError("ConvexProgram: non-finite coefficient");
            }
        };
        for (const auto& e : eq) check_expr(e);
        for (const auto& e : ineq) check_expr(e);
        for (const auto& s : socs) {
            check_expr(s.t);
            if (s.R.cols() != static_cast<Eigen::Index>(s.vars.size()) + 1)
                throw ModelError("ConvexProgram: soc width mismatch");
            if (!s.R.allFinite()) throw ModelError("ConvexProgram: non-finite soc rows");
            for (int v : s.vars)
                if (v < 0 || v >= n_vars) throw ModelError("ConvexProgram: bad soc variable");
        }
    }
};

/// Index map from policy entries (nominal controls and feedback-gain entries at
/// maneuver nodes) to program variables.
struct PolicyVars {
    int N = 0, nx = 0, nu = 0;
    std::vector<bool> maneuver_mask;                  // per segment
    std::vector<std::vector<int>> u_idx;              // [k][i], empty if masked
    std::vector<std::vector<int>> K_idx;              // [k][i*nx+j] row-major, empty if masked

    bool active(int k) const { return !u_idx[k].empty(); }
};

/// Shared state for the constraint builders: block operators, filter schedule,
/// the assembled program, and cached pieces of the covariance-factor algebra.
class ProgramContext {
public:
    ProgramContext(const BlockOperators& ops, const FilterSchedule& sched, const VecX& x0_mean,
                   const std::vector<bool>& maneuver_mask)
        : ops_(&ops), sched_(&sched) {
        const int N = ops.N;
        pv.N = N;
        pv.nx = ops.nx;
        pv.nu = ops.nu;
        pv.maneuver_mask = maneuver_mask.empty() ? std::vector<bool>(N, true) : maneuver_mask;
        if (static_cast<int>(pv.maneuver_mask.size()) != N)
            throw ModelError("ProgramContext: mask length");
        pv.u_idx.resize(N);
        pv.K_idx.resize(N);
        for (int k = 0; k < N; ++k) {
            if (!pv.maneuver_mask[k]) continue;
            for (int i = 0; i < ops.nu; ++i) pv.u_idx[k].push_back(prog.new_var());
            for (int i = 0; i < ops.nu * ops.nx; ++i) pv.K_idx[k].push_back(prog.new_var());
        }
        mean_const_ = ops.A * x0_mean + ops.c;
        ptilde_half_.resize(N + 1);
        for (int k = 0; k <= N; ++k) ptilde_half_[k] = psd_factor(sched.P_tilde[k]);
    }

    const BlockOperators& ops() const { return *ops_; }
    const FilterSchedule& sched() const { return *sched_; }
    const VecX& mean_const() const { return mean_const_; }
    const MatX& ptilde_half(int k) const { return ptilde_half_[k]; }

    /// Affine expressions for W * xbar_k (W is rows x nx).
    std::vector<LinExpr> mean_rows(const MatX& w_node, int k) const {
        const int nx = pv.nx, nu = pv.nu;
        const MatX wb = w_node * ops_->B.middleRows(nx * k, nx);  // rows x N*nu
        const VecX cpart = w_node * mean_const_.segment(nx * k, nx);
        std::vector<LinExpr> rows(w_node.rows());
        for (int r = 0; r < w_node.rows(); ++r) {
            rows[r].constant = cpart[r];
            for (int m = 0; m < std::min(k, pv.N); ++m) {
                if (!pv.active(m)) continue;
                for (int a = 0; a < nu; ++a)
                    rows[r].add_term(pv.u_idx[m][a], wb(r, nu * m + a));
            }
        }
        return rows;
    }

    /// Gram-compressed factor rows for || W (P-hat-part affine in K) ||_F, with
    /// the constant P_tilde block appended when requested:
    ///   M(v) = [ W E_xk (I + B K(v)) S_half ,  (W Ptilde_k^{1/2}) ].
    /// Returns R and the involved variables with ||M(v)||_F = ||R [1; v]||_2.
    ConvexProgram::Soc factor_rows(const MatX& w_node, int k, bool include_ptilde) const {
        const int nx = pv.nx, nu = pv.nu;
        const MatX wb = w_node * ops_->B.middleRows(nx * k, nx);      // rows x N*nu
        const MatX t0s = w_node * ops_->S.middleRows(nx * k, nx);     // rows x (N+1)nx

        std::vector<int> vars;
        std::vector<int> vrow;   // S-row index of each variable's rank-one factor
        std::vector<VecX> vcol;  // left factor W B column
        for (int m = 0; m < std::min(k, pv.N); ++m) {
            if (!pv.active(m)) continue;
            for (int a = 0; a < nu; ++a)
                for (int b = 0; b < nx; ++b) {
                    vars.push_back(pv.K_idx[m][a * nx + b]);
                    vrow.push_back(nx * m + b);
                    vcol.push_back(wb.col(nu * m + a));
                }
        }
        const int nv = static_cast<int>(vars.size());
        MatX gram = MatX::Zero(nv + 1, nv + 1);
        gram(0, 0) = (t0s.middleCols(nx * k, nx) * w_node.transpose()).trace();
        if (include_ptilde) gram(0, 0) += (w_node * ptilde_half_[k]).squaredNorm();
        for (int v = 0; v < nv; ++v) {
            const double g0v = vcol[v].dot(t0s.col(vrow[v]));
            gram(0, v + 1) = g0v;
            gram(v + 1, 0) = g0v;
            for (int u = 0; u <= v; ++u) {
                const double guv = ops_->S(vrow[u], vrow[v]) * vcol[u].dot(vcol[v]);
                gram(u + 1, v + 1) = guv;
                gram(v + 1, u + 1) = guv;
            }
        }
        ConvexProgram::Soc soc;
        soc.R = psd_factor(gram).transpose();
        soc.vars = std::move(vars);
        return soc;
    }

    /// Gram-compressed rows for || sum_j sign_j K_{k_j} S_half[block k_j] ||_F
    /// (control-covariance factors and their differences).
    ConvexProgram::Soc u_factor_rows(const std::vector<std::pair<int, double>>& nodes) const {
        const int nx = pv.nx, nu = pv.nu;
        std::vector<int> vars;
        std::vector<int> vrow;
        std::vector<int> va;
        std::vector<double> vsign;
        for (const auto& [k, sign] : nodes) {
            if (k < 0 || k >= pv.N) throw ModelError("u_factor_rows: bad node");
            if (!pv.active(k)) continue;
            for (int a = 0; a < nu; ++a)
                for (int b = 0; b < nx; ++b) {
                    vars.push_back(pv.K_idx[k][a * nx + b]);
                    vrow.push_back(nx * k + b);
                    va.push_back(a);
                    vsign.push_back(sign);
                }
        }
        const int nv = static_cast<int>(vars.size());
        MatX gram = MatX::Zero(nv + 1, nv + 1);
        for (int v = 0; v < nv; ++v)
            for (int u = 0; u <= v; ++u) {
                const double guv = (va[u] == va[v])
                                       ? vsign[u] * vsign[v] * ops_->S(vrow[u], vrow[v])
                                       : 0.0;
                gram(u + 1, v + 1) = guv;
                gram(v + 1, u + 1) = guv;
            }
        ConvexProgram::Soc soc;
        soc.R = psd_factor(gram).transpose();
        soc.vars = std::move(vars);
        return soc;
    }

    /// Emit t >= ||R [1; vars]|| with a fresh epigraph variable; returns it.
    int add_norm_epigraph(ConvexProgram::Soc soc) {
        const int t = prog.new_var();
        soc.t = LinExpr::variable(t);
        prog.socs.push_back(std::move(soc));
        return t;
    }

    /// Emit t >= || rows(v) || for affine rows; returns the epigraph variable.
    int add_affine_norm_epigraph(const std::vector<LinExpr>& rows) {
        // collect the variable set
        std::vector<int> vars;
        for (const auto& r : rows)
            for (const auto& [v, c] : r.terms) vars.push_back(v);
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        MatX R = MatX::Zero(rows.size(), vars.size() + 1);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            R(r, 0) = rows[r].constant;
            for (const auto& [v, c] : rows[r].terms) {
                const auto it = std::lower_bound(vars.begin(), vars.end(), v);
                R(r, 1 + (it - vars.begin())) += c;
            }
        }
        ConvexProgram::Soc soc;
        soc.R = std::move(R);
        soc.vars = std::move(vars);
        const int t = prog.new_var();
        soc.t = LinExpr::variable(t);
        prog.socs.push_back(std::move(soc));
        return t;
    }

    ConvexProgram prog;
    PolicyVars pv;

private:
    const BlockOperators* ops_;
    const FilterSchedule* sched_;
    VecX mean_const_;
    std::vector<MatX> ptilde_half_;
};

/// Handles to the per-node cost epigraphs (shared with the control-magnitude
/// constraint, which bounds the same two norms).
struct CostHandles {
    std::vector<int> s_norm;   // per node: -1 or epigraph of ||ubar_k||
    std::vector<int> t_norm;   // per node: -1 or epigraph of ||P_u_k^{1/2}||_F
    double m_p = 0.0;          // chi2 coefficient at the cost quantile
};

/// J_ub = sum_k [ ||ubar_k|| + m_chi2(1-p, nu) ||P_uk^{1/2}|| ] (x dt_k for zoh).
inline CostHandles build_cost(ProgramContext& ctx, double quantile_p, bool continuous,
                              const std::vector<double>& dt) {
    if (!(quantile_p > 0.5 && quantile_p < 1.0)) throw ModelError("build_cost: bad quantile");
    const int N = ctx.pv.N;
    CostHandles h;
    h.s_norm.assign(N, -1);
    h.t_norm.assign(N, -1);
    h.m_p = chi2_quantile_coeff(1.0 - quantile_p, ctx.pv.nu);
    for (int k = 0; k < N; ++k) {
        if (!ctx.pv.active(k)) continue;
        const double wk = continuous ? dt.at(k) : 1.0;
        std::vector<LinExpr> rows;
        for (int a = 0; a < ctx.pv.nu; ++a)
            rows.push_back(LinExpr::variable(ctx.pv.u_idx[k][a]));
        h.s_norm[k] = ctx.add_affine_norm_epigraph(rows);
        h.t_norm[k] = ctx.add_norm_epigraph(ctx.u_factor_rows({{k, 1.0}}));
        ctx.prog.add_obj(h.s_norm[k], wk);
        ctx.prog.add_obj(h.t_norm[k], wk * h.m_p);
    }
    return h;
}

/// ||ubar_k|| + m_chi2(eps_u, nu) ||P_uk^{1/2}|| <= u_max at every maneuver node.
inline void build_control_mag_cc(ProgramContext& ctx, const CostHandles& h, double u_max,
                                 double eps_u) {
    const double m = chi2_quantile_coeff(eps_u, ctx.pv.nu);
    for (int k = 0; k < ctx.pv.N; ++k) {
        if (h.s_norm[k] < 0) continue;
        LinExpr e(u_max);
        e.add_term(h.s_norm[k], -1.0);
        e.add_term(h.t_norm[k], -m);
        ctx.prog.ineq.push_back(std::move(e));
    }
}

/// ||(E_{u_{k+1}} - E_{u_k}) Ubar|| + m ||(E_{u_{k+1}} - E_{u_k}) K S^{1/2}|| <= du_max.
inline void build_control_rate_cc(ProgramContext& ctx, double du_max, double eps_u) {
    const double m = chi2_quantile_coeff(eps_u, ctx.pv.nu);
    for (int k = 0; k + 1 < ctx.pv.N; ++k) {
        if (!ctx.pv.active(k) && !ctx.pv.active(k + 1)) continue;
        std::vector<LinExpr> rows(ctx.pv.nu);
        for (int a = 0; a < ctx.pv.nu; ++a) {
            if (ctx.pv.active(k + 1)) rows[a].add_term(ctx.pv.u_idx[k + 1][a], 1.0);
            if (ctx.pv.active(k)) rows[a].add_term(ctx.pv.u_idx[k][a], -1.0);
        }
        const int r1 = ctx.add_affine_norm_epigraph(rows);
        const int r2 =
            ctx.add_norm_epigraph(ctx.u_factor_rows({{k, -1.0}, {k + 1, 1.0}}));
        LinExpr e(du_max);
        e.add_term(r1, -1.0);
        e.add_term(r2, -m);
        ctx.prog.ineq.push_back(std::move(e));
    }
}

/// ||H (xbar_k - x*_k)|| + m_chi2(eps_x, n_h) ||H P_k^{1/2}|| <= d_max at node k.
inline void build_tube_cc(ProgramContext& ctx, int k, const TubeSpec& tube, const VecX& x_ref_k,
                          double eps_x) {
    const int n_h = static_cast<int>(tube.H.rows());
    auto rows = ctx.mean_rows(tube.H, k);
    const VecX offset = tube.H * x_ref_k;
    for (int r = 0; r < n_h; ++r) rows[r].constant -= offset[r];
    const int t1 = ctx.add_affine_norm_epigraph(rows);
    const int t2 = ctx.add_norm_epigraph(ctx.factor_rows(tube.H, k, true));
    LinExpr e(tube.d_max);
    e.add_term(t1, -1.0);
    e.add_term(t2, -chi2_quantile_coeff(eps_x, n_h));
    ctx.prog.ineq.push_back(std::move(e));
}

/// a^T xbar_k + b + m_N(eps_j) || a^T P_k^{1/2} || <= 0 at node k.
inline void build_hyperplane_cc(ProgramContext& ctx, int k, const Hyperplane& hp, double eps_j) {
    const MatX a_row = hp.a.transpose();
    const int q = ctx.add_norm_epigraph(ctx.factor_rows(a_row, k, true));
    LinExpr mean = ctx.mean_rows(a_row, k)[0];
    LinExpr e(-(mean.constant + hp.b));
    for (auto& [v, c] : mean.terms) e.add_term(v, -c);
    e.add_term(q, -gaussian_quantile_coeff(eps_j));
    ctx.prog.ineq.push_back(std::move(e));
}

/// Terminal mean equality and covariance cone:
///   E_xN (A xbar0 + B Ubar + C) = x_f,
///   || (P_f - Ptilde_N)^{-1/2} E_xN (I + BK) S^{1/2} || <= 1.
inline void build_terminal(ProgramContext& ctx, const TerminalSpec& term) {
    const int N = ctx.pv.N, nx = ctx.pv.nx;
    auto mean = ctx.mean_rows(MatX::Identity(nx, nx), N);
    for (int r = 0; r < nx; ++r) {
        mean[r].constant -= term.x_f[r];
        ctx.prog.eq.push_back(std::move(mean[r]));
    }
    const MatX q = symmetrize(term.P_f - ctx.sched().P_tilde[N]);
    Eigen::SelfAdjointEigenSolver<MatX> es(q);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw ModelError("infeasible terminal covariance: filter floor exceeds target");
    const MatX q_inv_half = es.eigenvectors() *
                            es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                            es.eigenvectors().transpose();
    auto soc = ctx.factor_rows(q_inv_half, N, false);
    soc.t = LinExpr(1.0);
    ctx.prog.socs.push_back(std::move(soc));
}

/// State-triggered approach-cone constraint at node k, linearized at the
/// previous-iterate mean. Returns false when the trigger is inactive there
/// (constraint vacuous, nothing emitted).
inline bool build_stc(ProgramContext& ctx, int k, const ApproachConeSpec& cone, double eps_x,
                      const VecX& prev_mean_k, int zeta_var) {
    const double g_trig = (cone.H_r * prev_mean_k).norm() - cone.r_trigger;
    const double phi = -std::min(g_trig, 0.0);
    if (phi <= 0.0) return false;

    const MatX ahr = cone.A_cone * cone.H_r;            // n_c x nx
    const MatX bhr = cone.b_cone.transpose() * cone.H_r;  // 1 x nx

    const int n1 = ctx.add_affine_norm_epigraph(ctx.mean_rows(ahr, k));
    const int n2 = ctx.add_norm_epigraph(ctx.factor_rows(ahr, k, true));
    const int n3 = ctx.add_norm_epigraph(ctx.factor_rows(bhr, k, true));
    const double m2 = chi2_quantile_coeff(0.5 * eps_x, static_cast<int>(cone.A_cone.rows()));
    const double m3 = gaussian_quantile_coeff(0.5 * eps_x);

    // zeta_k - phi * c_stc(xbar_k, P_k^{1/2}) >= 0
    LinExpr mean_b = ctx.mean_rows(bhr, k)[0];
    LinExpr e(phi * mean_b.constant);
    for (auto& [v, c] : mean_b.terms) e.add_term(v, phi * c);
    e.add_term(n1, -phi);
    e.add_term(n2, -phi * m2);
    e.add_term(n3, -phi * m3);
    e.add_term(zeta_var, 1.0);
    ctx.prog.ineq.push_back(std::move(e));
    return true;
}

}  // namespace ccorbit
