#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "ccorbit/core.hpp"
#include "ccorbit/linsys.hpp"
#include "ccorbit/ode.hpp"
#include "ccorbit/uncertainty.hpp"

namespace ccorbit {

enum class ControlType { impulsive, zoh };

/// Equations of motion selector with model constants. CR3BP states are
/// nondimensional (rotating frame); CWH/2BP use consistent length-time units.
struct DynamicsModel {
    enum class Kind { cwh, cr3bp, two_body } kind = Kind::cwh;

    double mean_motion = 0.0;  // CWH [rad/s]
    double mass_ratio = 0.0;   // CR3BP mu [nd]
    double l_star = 0.0;       // CR3BP characteristic length [km]
    double t_star = 0.0;       // CR3BP characteristic time [s]
    double mu_body = 0.0;      // 2BP gravitational parameter [km^3/s^2]

    ControlType control_type = ControlType::impulsive;

    // Optional perturbing acceleration a(x,t) and its state Jacobian (3x6).
    // Defaults to zero; if the Jacobian is omitted the perturbation is treated
    // as state-independent for STM purposes.
    std::function<Vec3(const Vec6&, double)> perturbation;
    std::function<Eigen::Matrix<double, 3, 6>(const Vec6&, double)> perturbation_jacobian;

    static DynamicsModel cwh(double n, ControlType ct = ControlType::impulsive) {
        if (!(n > 0.0)) throw ModelError("DynamicsModel: mean motion must be positive");
        DynamicsModel m;
        m.kind = Kind::cwh;
        m.mean_motion = n;
        m.control_type = ct;
        return m;
    }

    static DynamicsModel cr3bp(double mu, double l_star, double t_star,
                               ControlType ct = ControlType::impulsive) {
        if (!(mu > 0.0 && mu < 1.0)) throw ModelError("DynamicsModel: mass ratio must be in (0,1)");
        if (!(l_star > 0.0 && t_star > 0.0))
            throw ModelError("DynamicsModel: characteristic quantities must be positive");
        DynamicsModel m;
        m.kind = Kind::cr3bp;
        m.mass_ratio = mu;
        m.l_star = l_star;
        m.t_star = t_star;
        m.control_type = ct;
        return m;
    }

    static DynamicsModel two_body(double mu, ControlType ct = ControlType::impulsive) {
        if (!(mu > 0.0)) throw ModelError("DynamicsModel: mu must be positive");
        DynamicsModel m;
        m.kind = Kind::two_body;
        m.mu_body = mu;
        m.control_type = ct;
        return m;
    }

    double velocity_unit() const {
        return kind == Kind::cr3bp ? l_star / t_star : 1.0;
    }
};

inline double cwh_mean_motion(double mu, double chief_radius) {
    return std::sqrt(mu / (chief_radius * chief_radius * chief_radius));
}

inline OdeOptions default_ode_options(const DynamicsModel& m) {
    OdeOptions opt;
    if (m.kind == DynamicsModel::Kind::cr3bp) {
        opt.rtol = 1e-12;
        opt.atol = 1e-12;
    } else {
        opt.rtol = 1e-10;
        opt.atol = 1e-10;
    }
    return opt;
}

namespace detail {

constexpr double kSingularRadius = 1e-10;

inline Mat3 gravity_gradient(double mu, const Vec3& d) {
    const double r = d.norm();
    const double r3 = r * r * r;
    const double r5 = r3 * r * r;
    return mu * (3.0 / r5 * (d * d.transpose()) - Mat3::Identity() / r3);
}

}  // namespace detail

/// Uncontrolled dynamics f0(x, t) (includes the perturbation hook).
inline Vec6 eval_f0(const DynamicsModel& m, const Vec6& x, double t) {
    if (!x.allFinite()) throw ModelError("eval_f0: non-finite state");
    Vec6 dx;
    const Vec3 r = x.head<3>();
    const Vec3 v = x.tail<3>();
    switch (m.kind) {
        case DynamicsModel::Kind::cwh: {
            const double n = m.mean_motion;
            dx.head<3>() = v;
            dx[3] = 3.0 * n * n * r[0] + 2.0 * n * v[1];
            dx[4] = -2.0 * n * v[0];
            dx[5] = -n * n * r[2];
            break;
        }
        case DynamicsModel::Kind::two_body: {
            const double rn = r.norm();
            if (rn < detail::kSingularRadius) throw SingularStateError("two_body: singular radius");
            dx.head<3>() = v;
            dx.tail<3>() = -m.mu_body / (rn * rn * rn) * r;
            break;
        }
        case DynamicsModel::Kind::cr3bp: {
            const double mu = m.mass_ratio;
            const Vec3 d1 = r + Vec3(mu, 0, 0);
            const Vec3 d2 = r - Vec3(1.0 - mu, 0, 0);
            const double r1 = d1.norm(), r2 = d2.norm();
            if (r1 < detail::kSingularRadius || r2 < detail::kSingularRadius)
                throw SingularStateError("cr3bp: singular radius");
            const double r13 = r1 * r1 * r1, r23 = r2 * r2 * r2;
            dx.head<3>() = v;
            dx[3] = 2.0 * v[1] + r[0] - (1.0 - mu) * d1[0] / r13 - mu * d2[0] / r23;
            dx[4] = -2.0 * v[0] + r[1] - (1.0 - mu) * d1[1] / r13 - mu * d2[1] / r23;
            dx[5] = -(1.0 - mu) * r[2] / r13 - mu * r[2] / r23;
            break;
        }
    }
    if (m.perturbation) dx.tail<3>() += m.perturbation(x, t);
    return dx;
}

/// Control-affine EoM: f0(x,t) + B u. For impulsive models u enters only at nodes,
/// so this is normally called with u = 0 between nodes.
inline Vec6 eval_eom(const DynamicsModel& m, const Vec6& x, const Vec3& u, double t) {
    Vec6 dx = eval_f0(m, x, t);
    dx.tail<3>() += u;
    return dx;
}

/// State Jacobian A(x,t) = df/dx along a state.
inline Mat6 eom_jacobian(const DynamicsModel& m, const Vec6& x, double t) {
    Mat6 a = Mat6::Zero();
    a.block<3, 3>(0, 3) = Mat3::Identity();
    const Vec3 r = x.head<3>();
    switch (m.kind) {
        case DynamicsModel::Kind::cwh: {
            const double n = m.mean_motion;
            a(3, 0) = 3.0 * n * n;
            a(5, 2) = -n * n;
            a(3, 4) = 2.0 * n;
            a(4, 3) = -2.0 * n;
            break;
        }
        case DynamicsModel::Kind::two_body: {
            if (r.norm() < detail::kSingularRadius)
                throw SingularStateError("two_body: singular radius");
            a.block<3, 3>(3, 0) = detail::gravity_gradient(m.mu_body, r);
            break;
        }
        case DynamicsModel::Kind::cr3bp: {
            const double mu = m.mass_ratio;
            const Vec3 d1 = r + Vec3(mu, 0, 0);
            const Vec3 d2 = r - Vec3(1.0 - mu, 0, 0);
            if (d1.norm() < detail::kSingularRadius || d2.norm() < detail::kSingularRadius)
                throw SingularStateError("cr3bp: singular radius");
            Mat3 urr = detail::gravity_gradient(1.0 - mu, d1) + detail::gravity_gradient(mu, d2);
            urr(0, 0) += 1.0;
            urr(1, 1) += 1.0;
            a.block<3, 3>(3, 0) = urr;
            a(3, 4) = 2.0;
            a(4, 3) = -2.0;
            break;
        }
    }
    if (m.perturbation_jacobian) a.block<3, 6>(3, 0) += m.perturbation_jacobian(x, t);
    return a;
}

/// Jacobi integral of the CR3BP (nd): C = 2*Omega - v^2. Constant along
/// uncontrolled trajectories; used as an accuracy monitor.
inline double jacobi_constant(const DynamicsModel& m, const Vec6& x) {
    if (m.kind != DynamicsModel::Kind::cr3bp) throw ModelError("jacobi_constant: CR3BP only");
    const double mu = m.mass_ratio;
    const Vec3 r = x.head<3>();
    const double r1 = (r + Vec3(mu, 0, 0)).norm();
    const double r2 = (r - Vec3(1.0 - mu, 0, 0)).norm();
    const double omega = 0.5 * (r[0] * r[0] + r[1] * r[1]) + (1.0 - mu) / r1 + mu / r2;
    return 2.0 * omega - x.tail<3>().squaredNorm();
}

/// Propagate the uncontrolled state from t0 to t1.
inline Vec6 propagate(const DynamicsModel& m, const Vec6& x0, double t0, double t1,
                      const OdeOptions& opt) {
    VecX y = x0;
    y = integrate_ode([&](double t, const VecX& s, VecX& ds) { ds = eval_f0(m, Vec6(s), t); },
                      t0, t1, y, opt);
    return Vec6(y);
}

inline Vec6 propagate(const DynamicsModel& m, const Vec6& x0, double t0, double t1) {
    return propagate(m, x0, t0, t1, default_ode_options(m));
}

/// Propagate the state and the state-transition matrix d x(t1) / d x(t0).
inline std::pair<Vec6, Mat6> propagate_with_stm(const DynamicsModel& m, const Vec6& x0, double t0,
                                                double t1, const OdeOptions& opt) {
    VecX y(42);
    y.head<6>() = x0;
    Eigen::Map<Mat6>(y.data() + 6) = Mat6::Identity();
    if (t1 == t0) return {x0, Mat6::Identity()};
    auto rhs = [&](double t, const VecX& s, VecX& ds) {
        ds.resize(42);
        const Vec6 x = s.head<6>();
        ds.head<6>() = eval_f0(m, x, t);
        const Mat6 a = eom_jacobian(m, x, t);
        Eigen::Map<Mat6>(ds.data() + 6) = a * Eigen::Map<const Mat6>(s.data() + 6);
    };
    y = integrate_ode(rhs, t0, t1, y, opt);
    return {Vec6(y.head<6>()), Mat6(Eigen::Map<const Mat6>(y.data() + 6))};
}

inline std::pair<Vec6, Mat6> propagate_with_stm(const DynamicsModel& m, const Vec6& x0, double t0,
                                                double t1) {
    return propagate_with_stm(m, x0, t0, t1, default_ode_options(m));
}

/// Nominal trajectory sampled at the planning nodes. states[k] is the pre-burn
/// state at t_k; controls[k] is the reference control on segment/node k.
struct ReferenceTrajectory {
    std::vector<double> epochs;      // N+1
    std::vector<Vec6> states;        // N+1
    std::vector<Vec3> controls;      // N

    int n_segments() const { return static_cast<int>(epochs.size()) - 1; }

    void validate() const {
        if (epochs.size() < 2 || states.size() != epochs.size() ||
            controls.size() + 1 != epochs.size())
            throw ModelError("ReferenceTrajectory: inconsistent sizes");
        for (std::size_t k = 0; k + 1 < epochs.size(); ++k)
            if (!(epochs[k + 1] > epochs[k]))
                throw ModelError("ReferenceTrajectory: epochs must be strictly increasing");
    }
};

/// Build a reference by propagating x0 through the given epochs applying the
/// reference controls (impulsive: velocity jump at the node; zoh: constant
/// acceleration across the segment).
inline ReferenceTrajectory propagate_reference(const DynamicsModel& m, const Vec6& x0,
                                               const std::vector<double>& epochs,
                                               const std::vector<Vec3>& controls,
                                               const OdeOptions& opt) {
    ReferenceTrajectory ref;
    ref.epochs = epochs;
    ref.controls = controls;
    ref.states.resize(epochs.size());
    ref.states[0] = x0;
    for (std::size_t k = 0; k + 1 < epochs.size(); ++k) {
        Vec6 x = ref.states[k];
        const Vec3 u = controls.empty() ? Vec3::Zero() : controls[k];
        if (m.control_type == ControlType::impulsive) {
            x.tail<3>() += u;
            ref.states[k + 1] = propagate(m, x, epochs[k], epochs[k + 1], opt);
        } else {
            VecX y = x;
            y = integrate_ode(
                [&](double t, const VecX& s, VecX& ds) {
                    ds = eval_eom(m, Vec6(s), u, t);
                },
                epochs[k], epochs[k + 1], y, opt);
            ref.states[k + 1] = Vec6(y);
        }
    }
    ref.validate();
    return ref;
}

/// Per-interval linear system of the discretized dynamics.
struct DiscreteSegment {
    Mat6 A = Mat6::Zero();
    Mat63 B = Mat63::Zero();
    Vec6 c = Vec6::Zero();
    Mat6 G = Mat6::Zero();        // process-noise factor, Gram = integrated covariance
    Mat63 G_exe = Mat63::Zero();  // execution-noise factor B_k * G_exe(u*_k)

    LinearSegment to_linear() const {
        LinearSegment s;
        s.A = A;
        s.B = B;
        s.c = c;
        s.G = G;
        s.G_exe = G_exe;
        return s;
    }
};

inline std::vector<LinearSegment> to_linear(const std::vector<DiscreteSegment>& segs) {
    std::vector<LinearSegment> out;
    out.reserve(segs.size());
    for (const auto& s : segs) out.push_back(s.to_linear());
    return out;
}

/// The continuous system behind a DynamicsModel, in the generic discretizer form.
inline LtvSystem ltv_system(const DynamicsModel& m, double sigma_a) {
    LtvSystem sys;
    sys.nx = 6;
    sys.nu = 3;
    sys.B = MatX::Zero(6, 3);
    sys.B.bottomRows(3).setIdentity();
    sys.f0 = [m](const VecX& x, double t) { return VecX(eval_f0(m, Vec6(x), t)); };
    sys.jac = [m](const VecX& x, double t) { return MatX(eom_jacobian(m, Vec6(x), t)); };
    if (sigma_a > 0.0) {
        MatX g = MatX::Zero(6, 3);
        g.bottomRows(3) = sigma_a * Mat3::Identity();
        sys.noise = [g](double) { return g; };
    }
    return sys;
}

/// Discretize segment k of the reference into (A_k, B_k, c_k, G_k, G_exe_k).
/// sigma_a is the stochastic-acceleration intensity in the working units
/// (velocity / sqrt(time)); when `maneuver` is false the execution-noise factor
/// is zero (no burn occurs on this segment).
inline DiscreteSegment discretize_segment(const DynamicsModel& m, const ReferenceTrajectory& ref,
                                          int k, double sigma_a, const GatesParams& gates,
                                          bool maneuver, const OdeOptions& opt) {
    ref.validate();
    if (k < 0 || k >= ref.n_segments()) throw ModelError("discretize_segment: bad index");
    const bool zoh = (m.control_type == ControlType::zoh);
    const Vec3 u_ref = ref.controls[k];
    const LtvSystem sys = ltv_system(m, sigma_a);

    VecX x0 = ref.states[k];
    if (!zoh) x0.tail<3>() += u_ref;  // impulsive burn applied at the node

    DiscretizedLtv d;
    try {
        d = discretize_ltv(sys, x0, ref.epochs[k], ref.epochs[k + 1], zoh, VecX(u_ref), opt);
    } catch (const NumericalError&) {
        throw NumericalError("discretize_segment: integrated covariance not PSD");
    }

    DiscreteSegment seg;
    seg.A = d.seg.A;
    seg.B = d.seg.B;
    seg.c = d.seg.c;
    seg.G = d.seg.G;
    seg.G_exe = maneuver ? Mat63(seg.B * gates_matrix(u_ref, gates)) : Mat63::Zero();
    return seg;
}

inline std::vector<DiscreteSegment> discretize_all(const DynamicsModel& m,
                                                   const ReferenceTrajectory& ref, double sigma_a,
                                                   const GatesParams& gates,
                                                   const std::vector<bool>& maneuver_mask,
                                                   const OdeOptions& opt) {
    std::vector<DiscreteSegment> segs;
    segs.reserve(ref.n_segments());
    for (int k = 0; k < ref.n_segments(); ++k)
        segs.push_back(discretize_segment(m, ref, k, sigma_a, gates,
                                          maneuver_mask.empty() || maneuver_mask[k], opt));
    return segs;
}

}  // namespace ccorbit
