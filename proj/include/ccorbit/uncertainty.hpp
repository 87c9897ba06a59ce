#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "ccorbit/core.hpp"

namespace ccorbit {

/// Gates execution-error parameters. sigma1/sigma3 are velocities in the working
/// unit system, sigma2 is a dimensionless fraction, sigma4 is in radians.
struct GatesParams {
    double sigma1 = 0.0;  // fixed magnitude
    double sigma2 = 0.0;  // proportional magnitude (fraction)
    double sigma3 = 0.0;  // fixed pointing
    double sigma4 = 0.0;  // proportional pointing (rad)

    void validate() const {
        if (sigma1 < 0 || sigma2 < 0 || sigma3 < 0 || sigma4 < 0)
            throw ModelError("GatesParams: sigmas must be nonnegative");
    }
};

/// Execution-error factor G_exe = T(u) * diag(sigma_p, sigma_p, sigma_m), where the
/// third column of T is the burn direction. For u = 0 the frame is undefined and is
/// taken as the identity; the same fallback applies when u is nearly parallel to the
/// z-axis, where the frame is built from the x-axis instead.
inline Mat3 gates_matrix(const Vec3& u, const GatesParams& p) {
    p.validate();
    if (!u.allFinite()) throw ModelError("gates_matrix: non-finite control");
    const double umag = u.norm();
    const double sigma_p = std::sqrt(p.sigma3 * p.sigma3 + p.sigma4 * p.sigma4 * umag * umag);
    const double sigma_m = std::sqrt(p.sigma1 * p.sigma1 + p.sigma2 * p.sigma2 * umag * umag);

    Mat3 t = Mat3::Identity();
    if (umag > 0.0) {
        const Vec3 z_hat = u / umag;
        Vec3 e_hat = Vec3(0, 0, 1).cross(z_hat);
        if (e_hat.norm() < 1e-9) e_hat = Vec3(1, 0, 0).cross(z_hat);
        e_hat.normalize();
        const Vec3 s_hat = e_hat.cross(z_hat);
        t.col(0) = s_hat;
        t.col(1) = e_hat;
        t.col(2) = z_hat;
    }
    return t * Vec3(sigma_p, sigma_p, sigma_m).asDiagonal();
}

/// Nonlinear measurement model y = f_obs(x) + G_obs(x) w.
struct ObservationModel {
    std::function<VecX(const Vec6&)> f_obs;
    std::function<MatX(const Vec6&)> noise_factor;  // G_obs(x), n_y x n_y
    std::function<MatX(const Vec6&)> jacobian;      // optional analytic df_obs/dx
    int n_y = 0;

    static ObservationModel full_state(double sigma_pos, double sigma_vel) {
        ObservationModel m;
        m.n_y = 6;
        m.f_obs = [](const Vec6& x) { return VecX(x); };
        m.noise_factor = [sigma_pos, sigma_vel](const Vec6&) {
            VecX d(6);
            d << sigma_pos, sigma_pos, sigma_pos, sigma_vel, sigma_vel, sigma_vel;
            return MatX(d.asDiagonal());
        };
        m.jacobian = [](const Vec6&) { return MatX(Mat6::Identity()); };
        return m;
    }
};

/// Linearized measurement y = C x + D w + c_obs.
struct LinearObservation {
    MatX C;      // n_y x 6
    MatX D;      // n_y x n_y
    VecX c_obs;  // n_y
};

namespace detail {
/// Fourth-order central-difference Jacobian of f at x.
inline MatX fd_jacobian(const std::function<VecX(const Vec6&)>& f, const Vec6& x, int n_y) {
    MatX jac(n_y, 6);
    for (int j = 0; j < 6; ++j) {
        const double h = 1e-4 * std::max(1.0, std::abs(x[j]));
        Vec6 xp = x, xm = x, xp2 = x, xm2 = x;
        xp[j] += h;
        xm[j] -= h;
        xp2[j] += 2 * h;
        xm2[j] -= 2 * h;
        jac.col(j) = (8.0 * (f(xp) - f(xm)) - (f(xp2) - f(xm2))) / (12.0 * h);
    }
    return jac;
}
}  // namespace detail

inline LinearObservation linearize_observation(const ObservationModel& m, const Vec6& x_ref) {
    if (!m.f_obs || !m.noise_factor || m.n_y <= 0)
        throw ModelError("linearize_observation: incomplete observation model");
    LinearObservation lin;
    lin.C = m.jacobian ? m.jacobian(x_ref) : detail::fd_jacobian(m.f_obs, x_ref, m.n_y);
    if (!lin.C.allFinite()) throw ModelError("linearize_observation: non-finite Jacobian");
    lin.D = m.noise_factor(x_ref);
    lin.c_obs = m.f_obs(x_ref) - lin.C * x_ref;
    return lin;
}

/// Innovation covariance C * Pm * C^T + D * D^T (symmetric PD for PD D D^T).
inline MatX innovation_covariance(const MatX& C, const MatX& D, const MatX& p_tilde_minus) {
    MatX py = symmetrize(C * p_tilde_minus * C.transpose() + D * D.transpose());
    Eigen::LLT<MatX> llt(py);
    if (llt.info() != Eigen::Success)
        throw NumericalError("innovation_covariance: result not positive definite");
    return py;
}

}  // namespace ccorbit
