#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ccorbit/core.hpp"

namespace ccorbit {

/// Standard-form conic program
///   minimize    c^T x
///   subject to  A x = b,
///               G x + s = h,   s in K = R+^l x SOC(q_1) x ... x SOC(q_m).
/// Inequality rows are stored per cone block over the block's own variable
/// subset, which keeps the normal-equations assembly proportional to the
/// problem's natural structure.
struct ConicProblem {
    int n = 0;
    VecX c;
    MatX A;  // p x n (p may be 0)
    VecX b;

    struct Block {
        bool soc = false;          // false: componentwise nonnegative rows
        std::vector<int> vars;     // column subset of G
        MatX G;                    // dim x vars.size()
        VecX h;                    // dim
        int dim() const { return static_cast<int>(h.size()); }
    };
    std::vector<Block> blocks;

    int cone_degree() const {
        int deg = 0;
        for (const auto& blk : blocks) deg += blk.soc ? 1 : blk.dim();
        return deg;
    }
    int total_rows() const {
        int m = 0;
        for (const auto& blk : blocks) m += blk.dim();
        return m;
    }
    void validate() const {
        if (c.size() != n) throw ModelError("ConicProblem: objective size");
        if (A.size() > 0 && (A.cols() != n || A.rows() != b.size()))
            throw ModelError("ConicProblem: equality dimensions");
        for (const auto& blk : blocks) {
            if (blk.G.rows() != blk.dim() ||
                blk.G.cols() != static_cast<Eigen::Index>(blk.vars.size()))
                throw ModelError("ConicProblem: block dimensions");
            for (int v : blk.vars)
                if (v < 0 || v >= n) throw ModelError("ConicProblem: variable index");
            if (blk.soc && blk.dim() < 1) throw ModelError("ConicProblem: empty cone");
        }
    }
};

enum class ConicStatus { optimal, primal_infeasible, dual_infeasible, max_iters, numerical };

inline const char* to_string(ConicStatus s) {
    switch (s) {
        case ConicStatus::optimal: return "optimal";
        case ConicStatus::primal_infeasible: return "primal_infeasible";
        case ConicStatus::dual_infeasible: return "dual_infeasible";
        case ConicStatus::max_iters: return "max_iters";
        default: return "numerical";
    }
}

struct ConicSettings {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    int max_iters = 100;
    int equilibrate_iters = 10;  // Ruiz scaling rounds (0 disables)
    bool verbose = false;
};

struct ConicResult {
    ConicStatus status = ConicStatus::numerical;
    VecX x, y;
    std::vector<VecX> s, z;  // per block
    double pobj = 0, dobj = 0, gap = 0, rel_gap = 0, pres = 0, dres = 0;
    int iters = 0;
};

namespace conic_detail {

// --- Jordan-algebra helpers on a single second-order cone -------------------

inline double soc_margin(const VecX& v) { return v[0] - v.tail(v.size() - 1).norm(); }

inline double soc_jdot(const VecX& a, const VecX& b) {
    return a[0] * b[0] - a.tail(a.size() - 1).dot(b.tail(b.size() - 1));
}

/// max alpha in (0, cap] with v + alpha d staying in the cone
inline double step_to_boundary_soc(const VecX& v, const VecX& d, double cap) {
    const double a = soc_jdot(d, d);
    const double b = 2.0 * soc_jdot(v, d);
    const double c = soc_jdot(v, v);
    // smallest positive root of a t^2 + b t + c = 0 bounds the step
    double alpha = cap;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double q = -0.5 * (b + (b >= 0 ? sq : -sq));
        for (double r : {a != 0.0 ? q / a : -1.0, q != 0.0 ? c / q : -1.0})
            if (r > 1e-14 && r < alpha) alpha = r;
    }
    // the apex direction must also stay nonnegative
    if (d[0] < 0.0) alpha = std::min(alpha, -v[0] / d[0]);
    return alpha;
}

inline double step_to_boundary_nonneg(const VecX& v, const VecX& d, double cap) {
    double alpha = cap;
    for (int i = 0; i < v.size(); ++i)
        if (d[i] < 0.0) alpha = std::min(alpha, -v[i] / d[i]);
    return alpha;
}

/// Nesterov-Todd scaling for one cone block. For the second-order cone,
/// W = eta * H(wbar) with the hyperbolic Householder matrix
///   H(w) = [w0, w1^T; w1, I + w1 w1^T / (1 + w0)],   w^T J w = 1,
/// whose inverse is H(Jw)/1. It satisfies W z = W^-1 s = lambda.
struct Scaling {
    bool soc = false;
    // nonneg: d = sqrt(s/z) elementwise
    VecX d;
    double eta = 1.0;
    VecX wbar;
    VecX lambda;  // = W z = W^-1 s

    static Scaling make(bool is_soc, const VecX& s, const VecX& z) {
        Scaling w;
        w.soc = is_soc;
        if (!is_soc) {
            if (s.minCoeff() <= 0 || z.minCoeff() <= 0)
                throw NumericalError("nt scaling: point left the cone");
            w.d = (s.array() / z.array()).sqrt();
            w.lambda = (s.array() * z.array()).sqrt();
            return w;
        }
        const double sj = soc_jdot(s, s);
        const double zj = soc_jdot(z, z);
        if (!(sj > 0) || !(zj > 0) || s[0] <= 0 || z[0] <= 0)
            throw NumericalError("nt scaling: point left the cone");
        w.eta = std::pow(sj / zj, 0.25);
        const VecX st = s / std::sqrt(sj);
        VecX jzt = z / std::sqrt(zj);
        const double gamma = std::sqrt(0.5 * (1.0 + st.dot(jzt)));
        jzt.tail(jzt.size() - 1) *= -1.0;  // J z~
        w.wbar = (st + jzt) / (2.0 * gamma);
        w.lambda = w.apply(z);
        return w;
    }

    VecX apply(const VecX& v) const {  // W v
        if (!soc) return VecX(d.array() * v.array());
        const int m = static_cast<int>(v.size());
        const double w0 = wbar[0];
        const auto w1 = wbar.tail(m - 1);
        const double dot = w1.dot(v.tail(m - 1));
        VecX out(m);
        out[0] = eta * (w0 * v[0] + dot);
        out.tail(m - 1) = eta * (v.tail(m - 1) + (v[0] + dot / (1.0 + w0)) * w1);
        return out;
    }
    VecX apply_inv(const VecX& v) const {  // W^-1 v
        if (!soc) return VecX(v.array() / d.array());
        const int m = static_cast<int>(v.size());
        const double w0 = wbar[0];
        const auto w1 = wbar.tail(m - 1);
        const double dot = w1.dot(v.tail(m - 1));
        VecX out(m);
        out[0] = (w0 * v[0] - dot) / eta;
        out.tail(m - 1) = (v.tail(m - 1) + (-v[0] + dot / (1.0 + w0)) * w1) / eta;
        return out;
    }
    MatX apply_inv(const MatX& m) const {  // W^-1 M columnwise
        if (!soc) return MatX(d.cwiseInverse().asDiagonal() * m);
        const int r = static_cast<int>(m.rows());
        const double w0 = wbar[0];
        const auto w1 = wbar.tail(r - 1);
        const Eigen::RowVectorXd dot = w1.transpose() * m.bottomRows(r - 1);
        MatX out(r, m.cols());
        out.row(0) = (w0 * m.row(0) - dot) / eta;
        out.bottomRows(r - 1) =
            (m.bottomRows(r - 1) + w1 * (dot / (1.0 + w0) - m.row(0))) / eta;
        return out;
    }
};

/// lambda o lambda (Jordan square)
inline VecX jordan_square(const Scaling& w) {
    if (!w.soc) return VecX(w.lambda.array().square());
    VecX r(w.lambda.size());
    r[0] = w.lambda.squaredNorm();
    r.tail(r.size() - 1) = 2.0 * w.lambda[0] * w.lambda.tail(r.size() - 1);
    return r;
}

inline VecX jordan_product(bool soc, const VecX& a, const VecX& b) {
    if (!soc) return VecX(a.array() * b.array());
    VecX r(a.size());
    r[0] = a.dot(b);
    r.tail(r.size() - 1) = a[0] * b.tail(b.size() - 1) + b[0] * a.tail(a.size() - 1);
    return r;
}

/// Solve Arw(lambda) x = d
inline VecX arrow_solve(const Scaling& w, const VecX& d) {
    if (!w.soc) return VecX(d.array() / w.lambda.array());
    const auto& l = w.lambda;
    const int m = static_cast<int>(l.size());
    const double nu = l[0] * l[0] - l.tail(m - 1).squaredNorm();
    if (nu <= 0.0) throw NumericalError("arrow_solve: singular");
    VecX x(m);
    x[0] = (l[0] * d[0] - l.tail(m - 1).dot(d.tail(m - 1))) / nu;
    x.tail(m - 1) = (d.tail(m - 1) - x[0] * l.tail(m - 1)) / l[0];
    return x;
}

inline VecX cone_identity(bool soc, int dim) {
    if (!soc) return VecX::Ones(dim);
    VecX e = VecX::Zero(dim);
    e[0] = 1.0;
    return e;
}

}  // namespace conic_detail

namespace conic_detail {

/// Ruiz-style equilibration: iteratively scale variables (columns) and cone
/// blocks (uniformly per block, which preserves cone membership) toward unit
/// max-magnitude. Returns the column scales D so x = D x_scaled.
inline VecX equilibrate(ConicProblem& prob, int iters) {
    const int n = prob.n;
    VecX d_total = VecX::Ones(n);
    const int p = static_cast<int>(prob.b.size());
    VecX e_eq_total = VecX::Ones(p);
    for (int it = 0; it < iters; ++it) {
        VecX col_max = VecX::Zero(n);
        for (const auto& blk : prob.blocks)
            for (std::size_t j = 0; j < blk.vars.size(); ++j)
                col_max[blk.vars[j]] = std::max(col_max[blk.vars[j]],
                                                blk.G.col(j).cwiseAbs().maxCoeff());
        for (int r = 0; r < p; ++r)
            for (int j = 0; j < n; ++j)
                col_max[j] = std::max(col_max[j], std::abs(prob.A(r, j)));
        VecX d(n);
        for (int j = 0; j < n; ++j) d[j] = col_max[j] > 0 ? 1.0 / std::sqrt(col_max[j]) : 1.0;

        for (auto& blk : prob.blocks)
            for (std::size_t j = 0; j < blk.vars.size(); ++j)
                blk.G.col(j) *= d[blk.vars[j]];
        if (p) prob.A = prob.A * d.asDiagonal();
        d_total.array() *= d.array();

        for (auto& blk : prob.blocks) {
            const double m = std::max(blk.G.size() ? blk.G.cwiseAbs().maxCoeff() : 0.0,
                                      blk.h.cwiseAbs().maxCoeff());
            if (m > 0) {
                const double e = 1.0 / std::sqrt(m);
                blk.G *= e;
                blk.h *= e;
            }
        }
        for (int r = 0; r < p; ++r) {
            const double m = std::max(prob.A.row(r).cwiseAbs().maxCoeff(),
                                      std::abs(prob.b[r]));
            if (m > 0) {
                const double e = 1.0 / std::sqrt(m);
                prob.A.row(r) *= e;
                prob.b[r] *= e;
                e_eq_total[r] *= e;
            }
        }
    }
    // scale the objective columns consistently and normalize its magnitude
    for (int j = 0; j < n; ++j) prob.c[j] *= d_total[j];
    return d_total;
}

}  // namespace conic_detail

/// Primal-dual interior-point solver (Mehrotra predictor-corrector with
/// Nesterov-Todd scaling). Supports nonnegative and second-order cones;
/// deterministic for fixed inputs and settings.
class ConicSolver {
public:
    explicit ConicSolver(ConicSettings settings = {}) : opt_(settings) {}

    ConicResult solve(const ConicProblem& prob_in) const {
        if (opt_.equilibrate_iters > 0) {
            ConicProblem scaled = prob_in;
            const VecX d = conic_detail::equilibrate(scaled, opt_.equilibrate_iters);
            const double c_norm = scaled.c.cwiseAbs().maxCoeff();
            const double c_scale = c_norm > 0 ? 1.0 / c_norm : 1.0;
            scaled.c *= c_scale;
            ConicResult res = solve_core(scaled);
            res.x.array() *= d.array();
            res.pobj /= c_scale;
            res.dobj /= c_scale;
            // p/d residual and gap diagnostics stay in scaled units
            return res;
        }
        return solve_core(prob_in);
    }

private:
    ConicResult solve_core(const ConicProblem& prob) const {
        using namespace conic_detail;
        prob.validate();
        const int n = prob.n;
        const int p = static_cast<int>(prob.b.size());
        const int nb = static_cast<int>(prob.blocks.size());
        ConicResult res;
        res.x = VecX::Zero(n);
        res.y = VecX::Zero(p);

        const double bnorm = std::max(1.0, p ? prob.b.norm() : 0.0);
        double hnorm2 = 0.0;
        for (const auto& blk : prob.blocks) hnorm2 += blk.h.squaredNorm();
        const double hnorm = std::max(1.0, std::sqrt(hnorm2));
        const double cnorm = std::max(1.0, prob.c.norm());
        const int deg = std::max(1, prob.cone_degree());

        // --- helpers over the block structure --------------------------------
        auto apply_G = [&](const VecX& x, std::vector<VecX>& out) {
            out.resize(nb);
            for (int i = 0; i < nb; ++i) {
                const auto& blk = prob.blocks[i];
                VecX xs(blk.vars.size());
                for (std::size_t j = 0; j < blk.vars.size(); ++j) xs[j] = x[blk.vars[j]];
                out[i] = blk.G * xs;
            }
        };
        auto add_Gt = [&](const std::vector<VecX>& zb, VecX& out) {
            for (int i = 0; i < nb; ++i) {
                const auto& blk = prob.blocks[i];
                const VecX gz = blk.G.transpose() * zb[i];
                for (std::size_t j = 0; j < blk.vars.size(); ++j) out[blk.vars[j]] += gz[j];
            }
        };

        // --- KKT assembly/solve ----------------------------------------------
        const double reg = 1e-11;
        Eigen::PartialPivLU<MatX> lu;
        auto factor = [&](const std::vector<Scaling>& w) {
            MatX kkt = MatX::Zero(n + p, n + p);
            for (int i = 0; i < nb; ++i) {
                const auto& blk = prob.blocks[i];
                const int na = static_cast<int>(blk.vars.size());
                MatX hc(na, na);
                if (blk.soc) {
                    const MatX u = w[i].apply_inv(blk.G);
                    hc.noalias() = u.transpose() * u;
                } else {
                    hc.noalias() =
                        blk.G.transpose() * w[i].d.array().square().inverse().matrix().asDiagonal() *
                        blk.G;
                }
                for (int r = 0; r < na; ++r)
                    for (int c2 = 0; c2 < na; ++c2) kkt(blk.vars[r], blk.vars[c2]) += hc(r, c2);
            }
            for (int i = 0; i < n; ++i) kkt(i, i) += reg;
            if (p) {
                kkt.block(n, 0, p, n) = prob.A;
                kkt.block(0, n, n, p) = prob.A.transpose();
                for (int i = 0; i < p; ++i) kkt(n + i, n + i) -= reg;
            }
            lu.compute(kkt);
        };

        // Solve  [0 A^T G^T; A 0 0; G 0 -W^2] [dx; dy; dz] = [bx; by; bz]
        // by elimination: dz = W^-2 (G dx - bz),
        //   (G^T W^-2 G) dx + A^T dy = bx + G^T W^-2 bz,  A dx = by.
        auto kkt_raw = [&](const VecX& bx, const VecX& by, const std::vector<VecX>& bz,
                           const std::vector<Scaling>& w, VecX& dx, VecX& dy,
                           std::vector<VecX>& dz) {
            VecX rhs = VecX::Zero(n + p);
            rhs.head(n) = bx;
            std::vector<VecX> w2bz(nb);
            for (int i = 0; i < nb; ++i)
                w2bz[i] = w[i].apply_inv(VecX(w[i].apply_inv(bz[i])));
            add_Gt(w2bz, rhs);
            if (p) rhs.tail(p) = by;
            const VecX sol = lu.solve(rhs);
            dx = sol.head(n);
            dy = sol.tail(p);
            std::vector<VecX> gdx;
            apply_G(dx, gdx);
            dz.resize(nb);
            for (int i = 0; i < nb; ++i)
                dz[i] = w[i].apply_inv(VecX(w[i].apply_inv(VecX(gdx[i] - bz[i]))));
        };

        // Iterative refinement on the full KKT system. The dz recovery goes
        // through W^-2, whose conditioning degrades like 1/mu near convergence;
        // refining the full residual keeps the dual equation satisfied. A pass
        // that increases the residual is rolled back.
        double last_kkt_resid = 0.0;
        auto kkt_solve = [&](const VecX& bx, const VecX& by, const std::vector<VecX>& bz,
                             const std::vector<Scaling>& w, VecX& dx, VecX& dy,
                             std::vector<VecX>& dz) {
            kkt_raw(bx, by, bz, w, dx, dy, dz);
            std::vector<VecX> r3(nb), gdx, ez;
            VecX r1(n), r2(p), ex, ey;
            const double bscale = std::max({1.0, bx.lpNorm<Eigen::Infinity>(),
                                            p ? by.lpNorm<Eigen::Infinity>() : 0.0});
            double prev_rnorm = std::numeric_limits<double>::infinity();
            for (int pass = 0; pass < 4; ++pass) {
                r1 = bx;
                if (p) r1 -= prob.A.transpose() * dy;
                std::vector<VecX> dzneg(nb);
                for (int i = 0; i < nb; ++i) dzneg[i] = -dz[i];
                add_Gt(dzneg, r1);
                if (p) r2 = by - prob.A * dx;
                apply_G(dx, gdx);
                double rnorm = r1.lpNorm<Eigen::Infinity>();
                if (p) rnorm = std::max(rnorm, r2.lpNorm<Eigen::Infinity>());
                for (int i = 0; i < nb; ++i) {
                    r3[i] = bz[i] - gdx[i] + w[i].apply(VecX(w[i].apply(dz[i])));
                    rnorm = std::max(rnorm, r3[i].lpNorm<Eigen::Infinity>());
                }
                if (pass > 0 && rnorm >= prev_rnorm) {
                    // refinement stopped helping: revert the last correction
                    dx -= ex;
                    if (p) dy -= ey;
                    for (int i = 0; i < nb; ++i) dz[i] -= ez[i];
                    rnorm = prev_rnorm;
                    break;
                }
                prev_rnorm = rnorm;
                if (rnorm <= 1e-14 * bscale) break;
                if (pass == 3) break;
                kkt_raw(r1, r2, r3, w, ex, ey, ez);
                dx += ex;
                if (p) dy += ey;
                for (int i = 0; i < nb; ++i) dz[i] += ez[i];
            }
            last_kkt_resid = prev_rnorm / bscale;
        };

        // --- initial point ----------------------------------------------------
        std::vector<Scaling> w_id(nb);
        for (int i = 0; i < nb; ++i) {
            w_id[i].soc = prob.blocks[i].soc;
            if (w_id[i].soc) {
                // identity scaling: eta = 1, wbar = e
                w_id[i].eta = 1.0;
                w_id[i].wbar = cone_identity(true, prob.blocks[i].dim());
            } else {
                w_id[i].d = VecX::Ones(prob.blocks[i].dim());
            }
        }
        factor(w_id);

        std::vector<VecX> s(nb), z(nb);
        {
            // primal start: minimize ||s|| s.t. Ax = b, Gx + s = h, then shift
            // into the cone interior
            VecX dx, dy;
            std::vector<VecX> dz;
            std::vector<VecX> hblocks(nb);
            for (int i = 0; i < nb; ++i) hblocks[i] = prob.blocks[i].h;
            kkt_solve(VecX::Zero(n), prob.b, hblocks, w_id, dx, dy, dz);
            std::vector<VecX> gx;
            apply_G(dx, gx);
            double margin = 1e300;
            for (int i = 0; i < nb; ++i) {
                s[i] = prob.blocks[i].h - gx[i];
                margin = std::min(margin, prob.blocks[i].soc ? soc_margin(s[i])
                                                             : s[i].minCoeff());
            }
            if (margin < 1e-8) {
                const double shift = -margin + 1.0;
                for (int i = 0; i < nb; ++i)
                    s[i] += shift * cone_identity(prob.blocks[i].soc, prob.blocks[i].dim());
            }
            res.x = dx;
            // dual start: minimize ||z|| s.t. A^T y + G^T z + c = 0
            std::vector<VecX> zeros(nb);
            for (int i = 0; i < nb; ++i) zeros[i] = VecX::Zero(prob.blocks[i].dim());
            kkt_solve(VecX(-prob.c), VecX::Zero(p), zeros, w_id, dx, dy, dz);
            res.y = dy;
            apply_G(dx, gx);
            double margin_z = 1e300;
            for (int i = 0; i < nb; ++i) {
                z[i] = gx[i];
                margin_z = std::min(margin_z, prob.blocks[i].soc ? soc_margin(z[i])
                                                                 : z[i].minCoeff());
            }
            if (margin_z < 1e-8) {
                const double shift = -margin_z + 1.0;
                for (int i = 0; i < nb; ++i)
                    z[i] += shift * cone_identity(prob.blocks[i].soc, prob.blocks[i].dim());
            }
        }

        // --- main loop ---------------------------------------------------------
        std::vector<Scaling> w(nb);
        std::vector<VecX> gx, rz(nb), ds_aff(nb), dz_aff(nb), ds(nb), dz(nb), rzt(nb);
        VecX dx, dy, dx_aff, dy_aff;

        // best iterate seen so far (by worst-case optimality measure), reported
        // when the iteration cannot continue
        double best_phi = 1e300;
        ConicResult best = res;
        auto finish = [&](ConicStatus st) {
            if (best_phi < 1e300) {
                best.status = st;
                best.iters = res.iters;
                return best;
            }
            res.status = st;
            res.s = s;
            res.z = z;
            return res;
        };

        for (res.iters = 0; res.iters < opt_.max_iters; ++res.iters) {
            // residuals and convergence numbers
            apply_G(res.x, gx);
            double gap = 0.0, pres2 = 0.0, hz = 0.0, sz_min = 1e300;
            VecX rx = prob.c;
            if (p) rx += prob.A.transpose() * res.y;
            std::vector<VecX> zb(nb);
            for (int i = 0; i < nb; ++i) zb[i] = z[i];
            add_Gt(zb, rx);
            VecX ry = p ? VecX(prob.A * res.x - prob.b) : VecX();
            for (int i = 0; i < nb; ++i) {
                rz[i] = gx[i] + s[i] - prob.blocks[i].h;
                pres2 += rz[i].squaredNorm();
                gap += s[i].dot(z[i]);
                hz += prob.blocks[i].h.dot(z[i]);
                sz_min = std::min(sz_min, s[i].dot(z[i]));
            }
            const double pres = std::max(p ? ry.norm() / bnorm : 0.0, std::sqrt(pres2) / hnorm);
            const double dres = rx.norm() / cnorm;
            const double pobj = prob.c.dot(res.x);
            const double dobj = -(p ? prob.b.dot(res.y) : 0.0) - hz;
            const double relgap = std::abs(pobj - dobj) / std::max(1.0, std::abs(pobj));

            res.pobj = pobj;
            res.dobj = dobj;
            res.gap = gap;
            res.rel_gap = relgap;
            res.pres = pres;
            res.dres = dres;

            if (opt_.verbose)
                std::printf("it %2d  pobj % .6e  gap %.2e  pres %.2e  dres %.2e\n", res.iters,
                            pobj, gap, pres, dres);

            const double phi = std::max({pres, dres, relgap});
            if (phi < best_phi) {
                best_phi = phi;
                best = res;
                best.s = s;
                best.z = z;
            }

            if (pres <= opt_.feastol && dres <= opt_.feastol &&
                (gap <= opt_.abstol || relgap <= opt_.reltol)) {
                res.status = ConicStatus::optimal;
                res.s = s;
                res.z = z;
                return res;
            }
            // infeasibility certificates
            {
                const double denom = -(hz + (p ? prob.b.dot(res.y) : 0.0));
                if (denom > 1e-12 * hnorm) {
                    VecX atz = VecX::Zero(n);
                    add_Gt(zb, atz);
                    if (p) atz += prob.A.transpose() * res.y;
                    if (atz.norm() / denom <= opt_.feastol * 1e-2) {
                        res.status = ConicStatus::primal_infeasible;
                        res.s = s;
                        res.z = z;
                        return res;
                    }
                }
                if (pobj < 0.0) {
                    double cone_res2 = p ? VecX(prob.A * res.x).squaredNorm() : 0.0;
                    for (int i = 0; i < nb; ++i) cone_res2 += (gx[i] + s[i]).squaredNorm();
                    if (std::sqrt(cone_res2) / (-pobj) <= opt_.feastol * 1e-2 &&
                        gap / (-pobj) <= opt_.feastol) {
                        res.status = ConicStatus::dual_infeasible;
                        res.s = s;
                        res.z = z;
                        return res;
                    }
                }
            }

            const double mu = gap / deg;

            try {
                // NT scaling and factorization
                for (int i = 0; i < nb; ++i)
                    w[i] = Scaling::make(prob.blocks[i].soc, s[i], z[i]);
                factor(w);

                // Affine direction, d_s = -lambda o lambda:
                // bz = -rz - W(lambda^-1 o d_s) = -rz + W lambda = -rz + s
                for (int i = 0; i < nb; ++i) rzt[i] = s[i] - rz[i];
                kkt_solve(VecX(-rx), VecX(p ? VecX(-ry) : VecX()), rzt, w, dx_aff, dy_aff,
                          dz_aff);
                // recover ds from G dx + ds = -rz
                std::vector<VecX> gdx;
                apply_G(dx_aff, gdx);
                for (int i = 0; i < nb; ++i) ds_aff[i] = -rz[i] - gdx[i];

                double alpha_aff = 1.0;
                for (int i = 0; i < nb; ++i) {
                    if (prob.blocks[i].soc) {
                        alpha_aff = step_to_boundary_soc(s[i], ds_aff[i], alpha_aff);
                        alpha_aff = step_to_boundary_soc(z[i], dz_aff[i], alpha_aff);
                    } else {
                        alpha_aff = step_to_boundary_nonneg(s[i], ds_aff[i], alpha_aff);
                        alpha_aff = step_to_boundary_nonneg(z[i], dz_aff[i], alpha_aff);
                    }
                }
                double gap_aff = 0.0;
                for (int i = 0; i < nb; ++i)
                    gap_aff += (s[i] + alpha_aff * ds_aff[i]).dot(z[i] + alpha_aff * dz_aff[i]);
                double sigma = std::pow(std::max(0.0, gap_aff / gap), 3.0);
                sigma = std::clamp(sigma, 0.0, 1.0);

                // Combined direction:
                // d_s = -lambda o lambda - (W^-1 ds_aff) o (W dz_aff) + sigma mu e,
                // bz = -rz - W(lambda^-1 o d_s)
                for (int i = 0; i < nb; ++i) {
                    const bool soc = prob.blocks[i].soc;
                    VecX d = -jordan_square(w[i]);
                    d -= jordan_product(soc, w[i].apply_inv(ds_aff[i]), w[i].apply(dz_aff[i]));
                    d += sigma * mu * cone_identity(soc, prob.blocks[i].dim());
                    rzt[i] = -rz[i] - w[i].apply(arrow_solve(w[i], d));
                }
                kkt_solve(VecX(-rx), VecX(p ? VecX(-ry) : VecX()), rzt, w, dx, dy, dz);
                apply_G(dx, gdx);
                for (int i = 0; i < nb; ++i) ds[i] = -rz[i] - gdx[i];

                double alpha = 1.0;
                for (int i = 0; i < nb; ++i) {
                    if (prob.blocks[i].soc) {
                        alpha = step_to_boundary_soc(s[i], ds[i], alpha);
                        alpha = step_to_boundary_soc(z[i], dz[i], alpha);
                    } else {
                        alpha = step_to_boundary_nonneg(s[i], ds[i], alpha);
                        alpha = step_to_boundary_nonneg(z[i], dz[i], alpha);
                    }
                }
                alpha = std::min(1.0, 0.99 * alpha);
                if (opt_.verbose)
                    std::printf("      alpha %.3e sigma %.3e kkt_resid %.2e\n", alpha, sigma,
                                last_kkt_resid);
                if (alpha < 1e-9) return finish(ConicStatus::numerical);

                res.x += alpha * dx;
                if (p) res.y += alpha * dy;
                for (int i = 0; i < nb; ++i) {
                    s[i] += alpha * ds[i];
                    z[i] += alpha * dz[i];
                }
            } catch (const NumericalError&) {
                return finish(ConicStatus::numerical);
            }
        }
        return finish(ConicStatus::max_iters);
    }

    ConicSettings opt_;
};

}  // namespace ccorbit
