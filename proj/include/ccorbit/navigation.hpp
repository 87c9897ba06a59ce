#pragma once

#include <vector>

#include "ccorbit/core.hpp"
#include "ccorbit/linsys.hpp"
#include "ccorbit/uncertainty.hpp"

namespace ccorbit {

/// A-priori Kalman filter schedule along the reference: gains and estimation-error
/// covariances at every node, computable before any measurement is taken.
struct FilterSchedule {
    std::vector<MatX> L;              // nx x ny gain (zero where not measured)
    std::vector<MatX> P_tilde_minus;  // prior estimation-error covariance
    std::vector<MatX> P_tilde;        // posterior estimation-error covariance
    std::vector<MatX> Py_minus;       // innovation covariance
    std::vector<bool> measured;

    int n_nodes() const { return static_cast<int>(L.size()); }
};

/// Kalman gain L = Pm C^T (C Pm C^T + D D^T)^-1, via Cholesky solve.
inline MatX kalman_gain(const MatX& p_tilde_minus, const MatX& C, const MatX& D) {
    const MatX py = symmetrize(C * p_tilde_minus * C.transpose() + D * D.transpose());
    Eigen::LLT<MatX> llt(py);
    if (llt.info() != Eigen::Success)
        throw NumericalError("kalman_gain: singular innovation covariance");
    return llt.solve(C * p_tilde_minus).transpose();
}

/// Run the covariance/gain recursion along the segments. A Joseph-form update is
/// applied at nodes with measurement_mask[k] true; elsewhere L_k = 0 and the
/// posterior equals the prior. Execution noise uses the reference controls baked
/// into the segments (zero factor on non-maneuver segments).
inline FilterSchedule build_filter_schedule(const std::vector<LinearSegment>& segments,
                                            const std::vector<LinearObservation>& obs,
                                            const InitialUncertainty& init,
                                            const std::vector<bool>& measurement_mask) {
    const int n_seg = static_cast<int>(segments.size());
    const int n_nodes = n_seg + 1;
    if (static_cast<int>(obs.size()) != n_nodes ||
        static_cast<int>(measurement_mask.size()) != n_nodes)
        throw ModelError("build_filter_schedule: length mismatch");
    init.validate();
    const int nx = static_cast<int>(init.x0_mean.size());

    FilterSchedule sched;
    sched.L.resize(n_nodes);
    sched.P_tilde_minus.resize(n_nodes);
    sched.P_tilde.resize(n_nodes);
    sched.Py_minus.resize(n_nodes);
    sched.measured = measurement_mask;

    auto check_psd = [](const MatX& p, const char* where) {
        const double tr = std::max(1e-300, p.trace());
        if (min_eigenvalue(p) < -1e-10 * tr)
            throw NumericalError(std::string("build_filter_schedule: PSD violation at ") + where);
    };

    MatX pm = init.P_tilde0_minus;
    for (int k = 0; k < n_nodes; ++k) {
        pm = symmetrize(pm);
        check_psd(pm, "prior");
        sched.P_tilde_minus[k] = pm;
        const MatX& C = obs[k].C;
        const MatX& D = obs[k].D;
        sched.Py_minus[k] = symmetrize(C * pm * C.transpose() + D * D.transpose());
        if (measurement_mask[k]) {
            const MatX L = kalman_gain(pm, C, D);
            const MatX ilc = MatX::Identity(nx, nx) - L * C;
            MatX post = symmetrize(ilc * pm * ilc.transpose() +
                                   L * (D * D.transpose()) * L.transpose());
            check_psd(post, "posterior");
            sched.L[k] = L;
            sched.P_tilde[k] = post;
        } else {
            sched.L[k] = MatX::Zero(nx, C.rows());
            sched.P_tilde[k] = pm;
        }
        if (k < n_seg) {
            const auto& s = segments[k];
            pm = s.A * sched.P_tilde[k] * s.A.transpose() + s.G_exe * s.G_exe.transpose() +
                 s.G * s.G.transpose();
        }
    }
    return sched;
}

}  // namespace ccorbit
