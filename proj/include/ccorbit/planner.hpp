#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ccorbit/conic.hpp"
#include "ccorbit/convexifier.hpp"

namespace ccorbit {

enum class PlanStatus { optimal, infeasible, max_iter, numerical };

inline const char* to_string(PlanStatus s) {
    switch (s) {
        case PlanStatus::optimal: return "optimal";
        case PlanStatus::infeasible: return "infeasible";
        case PlanStatus::max_iter: return "max_iter";
        default: return "numerical";
    }
}

struct SolverOptions {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    int max_iters = 200;
    bool verbose = false;

    ConicSettings conic() const {
        ConicSettings s;
        s.feastol = feastol;
        s.abstol = abstol;
        s.reltol = reltol;
        s.max_iters = max_iters;
        s.verbose = verbose;
        return s;
    }
};

struct ScpOptions {
    double eps_tol = 1e-3;
    int max_iter = 15;
    double penalty_weight = 0.0;  // 0: scaled automatically from the stc-free solve
};

/// Everything the planner needs about one scenario horizon.
struct PlannerInputs {
    const BlockOperators* ops = nullptr;
    const FilterSchedule* sched = nullptr;
    InitialUncertainty init;            // mean + initial covariances
    std::vector<bool> maneuver_mask;    // per segment; empty = all true
    std::vector<bool> constraint_mask;  // nodes with tube/hyperplane; empty = all true
    std::vector<VecX> x_ref;            // per-node reference states (tube/stc frame)
    ConstraintSet constraints;
    RiskBudget risk;
    bool continuous = false;
    std::vector<double> dt;             // per segment, used for the zoh cost weights

    const VecX& x0_mean() const { return init.x0_mean; }

    void validate() const {
        if (!ops || !sched) throw ModelError("PlannerInputs: missing operators");
        if (init.x0_mean.size() != ops->nx) throw ModelError("PlannerInputs: mean size");
        init.validate();
        if (!x_ref.empty() && static_cast<int>(x_ref.size()) != ops->N + 1)
            throw ModelError("PlannerInputs: reference node count");
        if (continuous && static_cast<int>(dt.size()) != ops->N)
            throw ModelError("PlannerInputs: dt count");
        risk.validate(constraints.hyperplanes.size());
    }
    bool node_constrained(int k) const {
        return constraint_mask.empty() || constraint_mask[k];
    }
};

/// Post-hoc constraint margins evaluated independently of the conic encoding
/// (dense Proposition-1 factors, policy norm convention). Positive = satisfied.
struct PlanMargins {
    std::vector<double> control_mag;
    std::vector<double> control_rate;
    std::vector<double> tube;
    std::vector<double> hyperplane;
    double terminal_cov = std::numeric_limits<double>::quiet_NaN();
    VecX terminal_mean_err;
    std::vector<double> stc;
    double worst = std::numeric_limits<double>::quiet_NaN();
};

struct PlanSolution {
    PlanStatus status = PlanStatus::numerical;
    Policy policy;
    VecX zeta;
    double j_ub = std::numeric_limits<double>::quiet_NaN();           // Frobenius policy
    double j_ub_spectral = std::numeric_limits<double>::quiet_NaN();  // tighter readout
    double penalty = 0.0;
    double penalty_weight = 0.0;
    std::string norm_encoding = "frobenius";
    PlanMargins margins;
    VecX mean_traj;  // stacked mean under the solved policy

    std::string solver_status;
    int solver_iters = 0;
    double solver_gap = 0, solver_pres = 0, solver_dres = 0;
    std::string infeasible_family;

    struct ScpIter {
        double dx_inf = 0, du_inf = 0, j_ub = 0, j_penalty = 0;
        int solver_iters = 0;
        std::string solver_status;
    };
    std::vector<ScpIter> trace;
    std::vector<int> stc_active_nodes;
};

namespace planner_detail {

/// Lower the assembled program to the standard-form conic problem.
inline ConicProblem to_conic(const ConvexProgram& prog) {
    prog.validate();
    ConicProblem cp;
    cp.n = prog.n_vars;
    cp.c = VecX::Zero(cp.n);
    for (int i = 0; i < cp.n; ++i) cp.c[i] = prog.obj[i];

    cp.A = MatX::Zero(prog.eq.size(), cp.n);
    cp.b = VecX::Zero(prog.eq.size());
    for (std::size_t r = 0; r < prog.eq.size(); ++r) {
        cp.b[r] = -prog.eq[r].constant;
        for (const auto& [v, c] : prog.eq[r].terms) cp.A(r, v) += c;
    }

    for (const auto& e : prog.ineq) {
        ConicProblem::Block blk;
        blk.soc = false;
        std::vector<int> vars;
        for (const auto& [v, c] : e.terms) vars.push_back(v);
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        blk.vars = vars;
        blk.G = MatX::Zero(1, vars.size());
        blk.h = VecX::Constant(1, e.constant);
        for (const auto& [v, c] : e.terms) {
            const auto it = std::lower_bound(vars.begin(), vars.end(), v);
            blk.G(0, it - vars.begin()) -= c;
        }
        cp.blocks.push_back(std::move(blk));
    }

    for (const auto& s : prog.socs) {
        ConicProblem::Block blk;
        blk.soc = true;
        std::vector<int> vars = s.vars;
        for (const auto& [v, c] : s.t.terms) vars.push_back(v);
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        const int m = static_cast<int>(s.R.rows());
        blk.vars = vars;
        blk.G = MatX::Zero(m + 1, vars.size());
        blk.h = VecX::Zero(m + 1);
        blk.h[0] = s.t.constant;
        auto col_of = [&](int v) {
            return std::lower_bound(vars.begin(), vars.end(), v) - vars.begin();
        };
        for (const auto& [v, c] : s.t.terms) blk.G(0, col_of(v)) -= c;
        for (int r = 0; r < m; ++r) {
            blk.h[r + 1] = s.R(r, 0);
            for (std::size_t j = 0; j < s.vars.size(); ++j)
                blk.G(r + 1, col_of(s.vars[j])) -= s.R(r, 1 + j);
        }
        cp.blocks.push_back(std::move(blk));
    }
    return cp;
}

inline Policy extract_policy(const ProgramContext& ctx, const VecX& x) {
    Policy pol;
    const int N = ctx.pv.N, nx = ctx.pv.nx, nu = ctx.pv.nu;
    pol.maneuver_mask = ctx.pv.maneuver_mask;
    for (int k = 0; k < N; ++k) {
        VecX u = VecX::Zero(nu);
        MatX kk = MatX::Zero(nu, nx);
        if (ctx.pv.active(k)) {
            for (int a = 0; a < nu; ++a) u[a] = x[ctx.pv.u_idx[k][a]];
            for (int a = 0; a < nu; ++a)
                for (int b = 0; b < nx; ++b) kk(a, b) = x[ctx.pv.K_idx[k][a * nx + b]];
        }
        pol.ubar.push_back(u);
        pol.K.push_back(kk);
    }
    return pol;
}

inline double policy_norm(const MatX& m, bool spectral) {
    return spectral ? spectral_norm(m) : m.norm();
}

}  // namespace planner_detail

/// Independent feasibility/cost evaluation of a policy against the inputs.
/// Dense Proposition-1 factors; does not reuse any conic-encoding machinery.
inline void evaluate_plan(const PlannerInputs& in, PlanSolution& sol,
                          const std::vector<VecX>* stc_prev_mean = nullptr) {
    const auto& ops = *in.ops;
    const auto& sched = *in.sched;
    const int N = ops.N;
    const auto& pol = sol.policy;
    const auto& cs = in.constraints;
    sol.mean_traj = state_mean(ops, in.x0_mean(), pol.stacked_ubar());

    std::vector<NodeFactors> f(N + 1);
    for (int k = 0; k <= N; ++k) f[k] = sqrt_covariances(ops, sched, pol, k);

    const double m_p = chi2_quantile_coeff(1.0 - in.risk.quantile_p, ops.nu);
    const double m_u = chi2_quantile_coeff(in.risk.eps_u, ops.nu);
    sol.j_ub = 0;
    sol.j_ub_spectral = 0;
    auto& mg = sol.margins;
    mg = PlanMargins{};
    double worst = std::numeric_limits<double>::infinity();
    auto track = [&](double v) {
        worst = std::min(worst, v);
        return v;
    };

    for (int k = 0; k < N; ++k) {
        if (!pol.maneuver_at(k)) continue;
        const double wk = in.continuous ? in.dt[k] : 1.0;
        const double un = pol.ubar[k].norm();
        sol.j_ub += wk * (un + m_p * f[k].P_u_half.norm());
        sol.j_ub_spectral += wk * (un + m_p * spectral_norm(f[k].P_u_half));
        if (cs.u_max)
            mg.control_mag.push_back(track(*cs.u_max - un - m_u * f[k].P_u_half.norm()));
    }
    if (cs.du_max) {
        for (int k = 0; k + 1 < N; ++k) {
            if (!pol.maneuver_at(k) && !pol.maneuver_at(k + 1)) continue;
            const VecX du = pol.ubar[k + 1] - pol.ubar[k];
            const MatX dks = pol.K[k + 1] * ops.S_half.middleRows(ops.nx * (k + 1), ops.nx) -
                             pol.K[k] * ops.S_half.middleRows(ops.nx * k, ops.nx);
            mg.control_rate.push_back(track(*cs.du_max - du.norm() - m_u * dks.norm()));
        }
    }
    if (cs.tube) {
        const double m_x = chi2_quantile_coeff(in.risk.eps_x,
                                               static_cast<int>(cs.tube->H.rows()));
        for (int k = 0; k <= N; ++k) {
            if (!in.node_constrained(k)) continue;
            const VecX dev = cs.tube->H * (VecX(ops.x_block(sol.mean_traj, k)) - in.x_ref[k]);
            mg.tube.push_back(track(cs.tube->d_max - dev.norm() -
                                    m_x * (cs.tube->H * f[k].P_half).norm()));
        }
    }
    if (!cs.hyperplanes.empty()) {
        for (std::size_t j = 0; j < cs.hyperplanes.size(); ++j) {
            const double eps_j = in.risk.eps_x_alloc.empty()
                                     ? in.risk.eps_x / cs.hyperplanes.size()
                                     : in.risk.eps_x_alloc[j];
            const double m_n = gaussian_quantile_coeff(eps_j);
            const auto& hp = cs.hyperplanes[j];
            for (int k = 0; k <= N; ++k) {
                if (!in.node_constrained(k)) continue;
                const double mean = hp.a.dot(VecX(ops.x_block(sol.mean_traj, k))) + hp.b;
                const double sig = (hp.a.transpose() * f[k].P_half).norm();
                mg.hyperplane.push_back(track(-(mean + m_n * sig)));
            }
        }
    }
    if (cs.terminal) {
        mg.terminal_mean_err =
            VecX(ops.x_block(sol.mean_traj, N)) - cs.terminal->x_f;
        const MatX q = symmetrize(cs.terminal->P_f - sched.P_tilde[N]);
        Eigen::SelfAdjointEigenSolver<MatX> es(q);
        if (es.eigenvalues().minCoeff() > 0) {
            const MatX q_inv_half = es.eigenvectors() *
                                    es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                                    es.eigenvectors().transpose();
            mg.terminal_cov = track(1.0 - (q_inv_half * f[N].P_hat_half).norm());
        } else {
            mg.terminal_cov = track(-1.0);
        }
    }
    if (cs.stc && stc_prev_mean) {
        const auto& cone = *cs.stc;
        const double m2 = chi2_quantile_coeff(0.5 * in.risk.eps_x,
                                              static_cast<int>(cone.A_cone.rows()));
        const double m3 = gaussian_quantile_coeff(0.5 * in.risk.eps_x);
        sol.stc_active_nodes.clear();
        for (int k = 0; k <= N; ++k) {
            const double g = (cone.H_r * (*stc_prev_mean)[k]).norm() - cone.r_trigger;
            const double phi = -std::min(g, 0.0);
            if (phi <= 0.0) continue;
            sol.stc_active_nodes.push_back(k);
            const VecX xk = ops.x_block(sol.mean_traj, k);
            const double c_stc = (cone.A_cone * cone.H_r * xk).norm() -
                                 cone.b_cone.dot(cone.H_r * xk) +
                                 m2 * (cone.A_cone * cone.H_r * f[k].P_half).norm() +
                                 m3 * (cone.b_cone.transpose() * cone.H_r * f[k].P_half).norm();
            const double zeta_k = sol.zeta.size() > k ? sol.zeta[k] : 0.0;
            mg.stc.push_back(track(zeta_k - phi * c_stc));
        }
    }
    mg.worst = worst;
}

namespace planner_detail {

struct BuiltProgram {
    ProgramContext ctx;
    CostHandles cost;
    std::vector<int> zeta_vars;  // per node, -1 when absent
};

inline BuiltProgram build_program(const PlannerInputs& in,
                                  const std::vector<VecX>* stc_prev_mean, double penalty_w) {
    const auto& ops = *in.ops;
    const int N = ops.N;
    BuiltProgram bp{ProgramContext(ops, *in.sched, in.x0_mean(), in.maneuver_mask), {}, {}};
    auto& ctx = bp.ctx;
    bp.cost = build_cost(ctx, in.risk.quantile_p, in.continuous, in.dt);
    const auto& cs = in.constraints;
    if (cs.u_max) build_control_mag_cc(ctx, bp.cost, *cs.u_max, in.risk.eps_u);
    if (cs.du_max) build_control_rate_cc(ctx, *cs.du_max, in.risk.eps_u);
    if (cs.tube) {
        for (int k = 0; k <= N; ++k)
            if (in.node_constrained(k)) build_tube_cc(ctx, k, *cs.tube, in.x_ref[k], in.risk.eps_x);
    }
    for (std::size_t j = 0; j < cs.hyperplanes.size(); ++j) {
        const double eps_j = in.risk.eps_x_alloc.empty()
                                 ? in.risk.eps_x / cs.hyperplanes.size()
                                 : in.risk.eps_x_alloc[j];
        for (int k = 0; k <= N; ++k)
            if (in.node_constrained(k)) build_hyperplane_cc(ctx, k, cs.hyperplanes[j], eps_j);
    }
    if (cs.terminal) build_terminal(ctx, *cs.terminal);
    bp.zeta_vars.assign(N + 1, -1);
    if (cs.stc && stc_prev_mean) {
        for (int k = 0; k <= N; ++k) {
            const int zk = ctx.prog.new_var(penalty_w);
            bp.zeta_vars[k] = zk;
            ctx.prog.ineq.push_back(LinExpr::variable(zk));  // zeta_k >= 0
            build_stc(ctx, k, *cs.stc, in.risk.eps_x, (*stc_prev_mean)[k], zk);
        }
    }
    return bp;
}

inline PlanStatus map_status(ConicStatus s) {
    switch (s) {
        case ConicStatus::optimal: return PlanStatus::optimal;
        case ConicStatus::primal_infeasible: return PlanStatus::infeasible;
        case ConicStatus::max_iters: return PlanStatus::max_iter;
        default: return PlanStatus::numerical;
    }
}

/// On infeasibility, report the family most violated at a cheap analytic probe:
/// the minimum-norm open-loop control meeting the terminal mean (when present),
/// zero gains otherwise.
inline std::string diagnose_infeasibility(const PlannerInputs& in) {
    const int N = in.ops->N, nu = in.ops->nu;
    PlanSolution probe;
    probe.policy = Policy::zero(N, in.ops->nx, nu);
    probe.policy.maneuver_mask =
        in.maneuver_mask.empty() ? std::vector<bool>(N, true) : in.maneuver_mask;
    probe.zeta = VecX::Zero(N + 1);
    if (in.constraints.terminal) {
        std::vector<int> cols;
        for (int k = 0; k < N; ++k)
            if (probe.policy.maneuver_at(k))
                for (int a = 0; a < nu; ++a) cols.push_back(nu * k + a);
        MatX bn(in.ops->nx, cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j)
            bn.col(j) = in.ops->x_block(in.ops->B, N).col(cols[j]);
        const VecX rhs = in.constraints.terminal->x_f -
                         MatX(in.ops->x_block(in.ops->A, N)) * in.x0_mean() -
                         in.ops->c.segment(in.ops->nx * N, in.ops->nx);
        const VecX u_free = bn.completeOrthogonalDecomposition().solve(rhs);
        if ((bn * u_free - rhs).norm() > 1e-6 * std::max(1.0, rhs.norm()))
            return "terminal_mean";
        for (std::size_t j = 0; j < cols.size(); ++j)
            probe.policy.ubar[cols[j] / nu][cols[j] % nu] = u_free[j];
    }
    evaluate_plan(in, probe);
    const auto& mg = probe.margins;
    double worst = 0.0;
    std::string family = "unknown";
    auto scan = [&](const std::vector<double>& v, const char* name) {
        for (double x : v)
            if (x < worst) {
                worst = x;
                family = name;
            }
    };
    scan(mg.control_mag, "control_magnitude");
    scan(mg.control_rate, "control_rate");
    scan(mg.tube, "tube");
    scan(mg.hyperplane, "hyperplane");
    if (!std::isnan(mg.terminal_cov) && mg.terminal_cov < worst) {
        worst = mg.terminal_cov;
        family = "terminal_covariance";
    }
    return family;
}

inline PlanSolution solve_once(const PlannerInputs& in, const SolverOptions& opts,
                               const std::vector<VecX>* stc_prev_mean, double penalty_w) {
    in.validate();
    PlanSolution sol;
    BuiltProgram bp = build_program(in, stc_prev_mean, penalty_w);
    const ConicProblem cp = to_conic(bp.ctx.prog);
    const ConicResult res = ConicSolver(opts.conic()).solve(cp);
    sol.status = map_status(res.status);
    sol.solver_status = to_string(res.status);
    sol.solver_iters = res.iters;
    sol.solver_gap = res.gap;
    sol.solver_pres = res.pres;
    sol.solver_dres = res.dres;
    sol.penalty_weight = penalty_w;
    sol.policy = extract_policy(bp.ctx, res.x);
    sol.zeta = VecX::Zero(in.ops->N + 1);
    for (int k = 0; k <= in.ops->N; ++k)
        if (bp.zeta_vars[k] >= 0) sol.zeta[k] = res.x[bp.zeta_vars[k]];
    if (sol.status == PlanStatus::infeasible) sol.infeasible_family = diagnose_infeasibility(in);
    evaluate_plan(in, sol, stc_prev_mean);
    sol.penalty = penalty_w * sol.zeta.lpNorm<1>();
    return sol;
}

}  // namespace planner_detail

/// Solve the chance-constrained program without state-triggered constraints.
inline PlanSolution solve_fixed(const PlannerInputs& in, const SolverOptions& opts = {}) {
    if (in.constraints.stc)
        throw ModelError("solve_fixed: program contains state-triggered constraints");
    return planner_detail::solve_once(in, opts, nullptr, 0.0);
}

/// Fixed-point sequential loop for state-triggered constraints: linearize the
/// trigger at the previous mean, solve, repeat until the mean/control updates
/// fall below eps_tol (in working units) or the iteration cap.
inline PlanSolution solve_with_stc(const PlannerInputs& in, const ScpOptions& scp = {},
                                   const SolverOptions& opts = {}) {
    in.validate();
    if (!in.constraints.stc) return planner_detail::solve_once(in, opts, nullptr, 0.0);

    double w = scp.penalty_weight;
    if (w <= 0.0) {
        PlannerInputs free_in = in;
        free_in.constraints.stc.reset();
        const PlanSolution base = planner_detail::solve_once(free_in, opts, nullptr, 0.0);
        w = 1e3 * std::max(1e-9, base.j_ub);
    }

    const int N = in.ops->N;
    const VecX mean0 = state_mean(*in.ops, in.x0_mean(), VecX::Zero(in.ops->nu * N));
    std::vector<VecX> prev_mean(N + 1);
    for (int k = 0; k <= N; ++k) prev_mean[k] = in.ops->x_block(mean0, k);
    VecX prev_u = VecX::Zero(in.ops->nu * N);

    PlanSolution sol;
    std::vector<PlanSolution::ScpIter> trace;
    for (int it = 0; it < scp.max_iter; ++it) {
        sol = planner_detail::solve_once(in, opts, &prev_mean, w);
        PlanSolution::ScpIter ti;
        ti.solver_iters = sol.solver_iters;
        ti.solver_status = sol.solver_status;
        ti.j_ub = sol.j_ub;
        ti.j_penalty = sol.j_ub + sol.penalty;
        const VecX u = sol.policy.stacked_ubar();
        ti.du_inf = (u - prev_u).lpNorm<Eigen::Infinity>();
        double dx = 0;
        for (int k = 0; k <= N; ++k)
            dx = std::max(dx, (VecX(in.ops->x_block(sol.mean_traj, k)) - prev_mean[k])
                                  .lpNorm<Eigen::Infinity>());
        ti.dx_inf = dx;
        trace.push_back(ti);
        sol.trace = trace;
        if (sol.status != PlanStatus::optimal) break;

        for (int k = 0; k <= N; ++k) prev_mean[k] = in.ops->x_block(sol.mean_traj, k);
        prev_u = u;
        if (ti.dx_inf <= scp.eps_tol && ti.du_inf <= scp.eps_tol) break;
        if (it + 1 == scp.max_iter) sol.status = PlanStatus::max_iter;
    }
    return sol;
}

}  // namespace ccorbit
