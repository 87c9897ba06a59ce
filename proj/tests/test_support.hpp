#pragma once

// Shared test oracles and generators. Everything here is deliberately
// independent of the library's computation paths: the matrix exponential uses
// scaling-and-squaring, covariances come from direct moment recursions, and
// quantiles from root-finding on the CDFs.

#include <random>
#include <vector>

#include "ccorbit/blockstats.hpp"
#include "ccorbit/core.hpp"
#include "ccorbit/linsys.hpp"
#include "ccorbit/navigation.hpp"
#include "ccorbit/specfun.hpp"
#include "ccorbit/uncertainty.hpp"

namespace testsup {

using ccorbit::MatX;
using ccorbit::VecX;

/// Matrix exponential by scaling-and-squaring with a Taylor series evaluated to
/// machine precision on the scaled matrix.
inline MatX expm(const MatX& a) {
    const double nrm = a.cwiseAbs().rowwise().sum().maxCoeff();  // inf-norm
    int s = 0;
    while (nrm / std::pow(2.0, s) > 0.25) ++s;
    const MatX as = a / std::pow(2.0, s);
    MatX term = MatX::Identity(a.rows(), a.cols());
    MatX sum = term;
    for (int k = 1; k <= 30; ++k) {
        term = term * as / static_cast<double>(k);
        sum += term;
        if (term.norm() < 1e-18 * sum.norm()) break;
    }
    for (int i = 0; i < s; ++i) sum = sum * sum;
    return sum;
}

struct Rand {
    std::mt19937_64 eng;
    explicit Rand(std::uint64_t seed) : eng(seed) {}
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng);
    }
    double normal() { return std::normal_distribution<double>()(eng); }
    MatX matrix(int r, int c, double scale = 1.0) {
        MatX m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = scale * normal();
        return m;
    }
    MatX psd(int n, double scale = 1.0) {
        MatX f = matrix(n, n, scale);
        return MatX(f * f.transpose());
    }
};

/// A random discrete-time linear system with a consistent Kalman schedule.
struct RandomSystem {
    std::vector<ccorbit::LinearSegment> segments;
    std::vector<ccorbit::LinearObservation> obs;
    ccorbit::InitialUncertainty init;
    std::vector<bool> measurement_mask;
    std::vector<MatX> K;     // feedback gains, nu x nx
    VecX ubar;               // stacked nominal controls
    int nx, nu, ny, N;
};

inline RandomSystem random_system(Rand& rnd, int nx, int nu, int ny, int N,
                                  bool random_mask = true) {
    RandomSystem sys;
    sys.nx = nx;
    sys.nu = nu;
    sys.ny = ny;
    sys.N = N;
    for (int k = 0; k < N; ++k) {
        ccorbit::LinearSegment s;
        s.A = rnd.matrix(nx, nx, 0.6);
        s.A += MatX::Identity(nx, nx) * 0.4;  // keep it comfortably invertible
        s.B = rnd.matrix(nx, nu);
        s.c = rnd.matrix(nx, 1);
        s.G = rnd.matrix(nx, nx, 0.3);
        s.G_exe = rnd.matrix(nx, nu, 0.2);
        sys.segments.push_back(s);
    }
    for (int k = 0; k <= N; ++k) {
        ccorbit::LinearObservation o;
        o.C = rnd.matrix(ny, nx);
        MatX d = rnd.matrix(ny, ny, 0.5);
        o.D = d * d.transpose() + 0.3 * MatX::Identity(ny, ny);
        o.c_obs = rnd.matrix(ny, 1);
        sys.obs.push_back(o);
        sys.measurement_mask.push_back(random_mask ? rnd.uniform() < 0.75 : true);
    }
    sys.init.x0_mean = rnd.matrix(nx, 1);
    sys.init.P_hat0_minus = rnd.psd(nx);
    sys.init.P_tilde0_minus = rnd.psd(nx);
    for (int k = 0; k < N; ++k) sys.K.push_back(rnd.matrix(nu, nx, 0.4));
    sys.ubar = rnd.matrix(nu * N, 1);
    return sys;
}

/// Exact linear map from all primitive noise inputs to the stacked deviations of
/// the closed loop
///   xhat_{k+1} = A xhat_k + B u_k + c + L' ytil',   u_k = ubar_k + K_k z_k,
///   z_{k+1} = A z_k + L' ytil',   xtil via the gain update,
/// built by running the recursion on unit input vectors. Input layout:
///   [xi_p0 (nx); xi_t0 (nx); wo_0 (ny); { we_k (nu); w_k (nx); wo_{k+1} (ny) }_k ]
/// with deltahat0- = P_hat0^{1/2} xi_p0 and xtil0- = P_tilde0^{1/2} xi_t0.
/// Gram matrices of the row blocks are the exact covariances.
struct DeviationMap {
    MatX to_xhat;  // (N+1)nx rows: xhat_k - xbar_k
    MatX to_u;     // N nu rows: u_k - ubar_k
    MatX to_xtil;  // (N+1)nx rows: x_k - xhat_k
    MatX to_z;     // (N+1)nx rows: z_k

    MatX cov_xhat_block(int k, int nx) const {
        const MatX rows = to_xhat.middleRows(nx * k, nx);
        return MatX(rows * rows.transpose());
    }
    MatX cov_u_block(int k, int nu) const {
        const MatX rows = to_u.middleRows(nu * k, nu);
        return MatX(rows * rows.transpose());
    }
    MatX cov_total_block(int k, int nx) const {
        const MatX rows = to_xhat.middleRows(nx * k, nx) + to_xtil.middleRows(nx * k, nx);
        return MatX(rows * rows.transpose());
    }
};

inline DeviationMap deviation_map(const RandomSystem& sys, const ccorbit::FilterSchedule& sched) {
    const int nx = sys.nx, nu = sys.nu, ny = sys.ny, N = sys.N;
    const int n_in = 2 * nx + ny + N * (nu + nx + ny);
    DeviationMap dm;
    dm.to_xhat = MatX::Zero((N + 1) * nx, n_in);
    dm.to_u = MatX::Zero(N * nu, n_in);
    dm.to_xtil = MatX::Zero((N + 1) * nx, n_in);
    dm.to_z = MatX::Zero((N + 1) * nx, n_in);

    const MatX p0_half = ccorbit::psd_factor(sys.init.P_hat0_minus);
    const MatX t0_half = ccorbit::psd_factor(sys.init.P_tilde0_minus);

    for (int j = 0; j < n_in; ++j) {
        VecX xi = VecX::Zero(n_in);
        xi[j] = 1.0;
        int off = 0;
        const VecX d0m = p0_half * xi.segment(off, nx);
        off += nx;
        VecX xtil_m = t0_half * xi.segment(off, nx);
        off += nx;
        VecX wo = xi.segment(off, ny);
        off += ny;

        const MatX& L0 = sched.L[0];
        const VecX ytil0 = sys.obs[0].C * xtil_m + sys.obs[0].D * wo;
        VecX delta = d0m + L0 * ytil0;
        VecX z = delta;
        VecX xtil = xtil_m - L0 * ytil0;

        dm.to_xhat.col(j).segment(0, nx) = delta;
        dm.to_xtil.col(j).segment(0, nx) = xtil;
        dm.to_z.col(j).segment(0, nx) = z;

        for (int k = 0; k < N; ++k) {
            const auto& s = sys.segments[k];
            const VecX du = sys.K[k] * z;  // u_k - ubar_k
            dm.to_u.col(j).segment(nu * k, nu) = du;
            const VecX we = xi.segment(off, nu);
            const VecX w = xi.segment(off + nu, nx);
            const VecX wop = xi.segment(off + nu + nx, ny);
            off += nu + nx + ny;

            const VecX xtil_minus = s.A * xtil + s.G_exe * we + s.G * w;
            const VecX ytil = sys.obs[k + 1].C * xtil_minus + sys.obs[k + 1].D * wop;
            const MatX& Lp = sched.L[k + 1];
            delta = s.A * delta + s.B * du + Lp * ytil;
            z = s.A * z + Lp * ytil;
            xtil = xtil_minus - Lp * ytil;

            dm.to_xhat.col(j).segment(nx * (k + 1), nx) = delta;
            dm.to_xtil.col(j).segment(nx * (k + 1), nx) = xtil;
            dm.to_z.col(j).segment(nx * (k + 1), nx) = z;
        }
    }
    return dm;
}

}  // namespace testsup
