#pragma once

#include <vector>

#include "ccorbit/core.hpp"
#include "ccorbit/linsys.hpp"
#include "ccorbit/navigation.hpp"

namespace ccorbit {

/// Stacked operators of the filtered-state recursion over the whole horizon:
///   Xhat = A xhat0m + B U + C + L Y,
/// plus the factors needed for the affine covariance statistics. Dense storage;
/// extractors are row slices, not materialized matrices.
struct BlockOperators {
    int N = 0;   // segments
    int nx = 0;
    int nu = 0;
    int ny = 0;

    MatX A;        // (N+1)nx x nx
    MatX B;        // (N+1)nx x N*nu, strictly block lower triangular
    VecX c;        // (N+1)nx
    MatX L;        // (N+1)nx x (N+1)ny
    MatX Lz;       // same shape, first block column zero
    MatX Py_half;  // (N+1)ny square, block diagonal innovation factor
    MatX S;        // (N+1)nx square Gram: A P0 A^T + L Py L^T
    MatX S_half;   // wide factor [A P0^{1/2}, L Py^{1/2}]
    MatX Sigma_S;  // square factor of S (Gram- and norm-equivalent to S_half)

    template <class M>
    auto x_block(const M& m, int k) const { return m.middleRows(nx * k, nx); }
};

inline BlockOperators assemble_block_operators(const std::vector<LinearSegment>& segments,
                                               const FilterSchedule& schedule,
                                               const InitialUncertainty& init) {
    const int N = static_cast<int>(segments.size());
    if (N < 1) throw ModelError("assemble_block_operators: empty horizon");
    if (schedule.n_nodes() != N + 1)
        throw ModelError("assemble_block_operators: schedule/segment mismatch");

    BlockOperators ops;
    ops.N = N;
    ops.nx = segments[0].nx();
    ops.nu = segments[0].nu();
    ops.ny = static_cast<int>(schedule.Py_minus[0].rows());
    const int nx = ops.nx, nu = ops.nu, ny = ops.ny;
    if (static_cast<int>(init.x0_mean.size()) != nx)
        throw ModelError("assemble_block_operators: init dimension mismatch");

    ops.A = MatX::Zero((N + 1) * nx, nx);
    ops.B = MatX::Zero((N + 1) * nx, N * nu);
    ops.c = VecX::Zero((N + 1) * nx);
    ops.L = MatX::Zero((N + 1) * nx, (N + 1) * ny);
    ops.Lz = MatX::Zero((N + 1) * nx, (N + 1) * ny);

    // Row k is row k-1 propagated by A_{k-1}, plus this node's own blocks.
    ops.A.topRows(nx) = MatX::Identity(nx, nx);
    ops.L.block(0, 0, nx, ny) = schedule.L[0];
    for (int k = 1; k <= N; ++k) {
        const MatX& ak = segments[k - 1].A;
        ops.A.middleRows(nx * k, nx) = ak * ops.A.middleRows(nx * (k - 1), nx);
        ops.B.middleRows(nx * k, nx) = ak * ops.B.middleRows(nx * (k - 1), nx);
        ops.B.block(nx * k, nu * (k - 1), nx, nu) = segments[k - 1].B;
        ops.c.segment(nx * k, nx) = ak * ops.c.segment(nx * (k - 1), nx) + segments[k - 1].c;
        ops.L.middleRows(nx * k, nx) = ak * ops.L.middleRows(nx * (k - 1), nx);
        ops.L.block(nx * k, ny * k, nx, ny) = schedule.L[k];
        ops.Lz.middleRows(nx * k, nx) = ak * ops.Lz.middleRows(nx * (k - 1), nx);
        ops.Lz.block(nx * k, ny * k, nx, ny) = schedule.L[k];
    }

    ops.Py_half = MatX::Zero((N + 1) * ny, (N + 1) * ny);
    for (int k = 0; k <= N; ++k)
        ops.Py_half.block(ny * k, ny * k, ny, ny) = psd_factor(schedule.Py_minus[k]);

    const MatX p0_half = psd_factor(init.P_hat0_minus);
    ops.S_half.resize((N + 1) * nx, nx + (N + 1) * ny);
    ops.S_half.leftCols(nx) = ops.A * p0_half;
    ops.S_half.rightCols((N + 1) * ny) = ops.L * ops.Py_half;
    ops.S = symmetrize(ops.S_half * ops.S_half.transpose());
    ops.Sigma_S = psd_factor(ops.S);
    return ops;
}

/// Output-feedback policy: u_k = ubar_k + K_k z_k, with entries pinned to zero
/// where the maneuver mask is false.
struct Policy {
    std::vector<VecX> ubar;           // N, each nu
    std::vector<MatX> K;              // N, each nu x nx
    std::vector<bool> maneuver_mask;  // N (empty = all true)

    int n() const { return static_cast<int>(ubar.size()); }

    static Policy zero(int N, int nx = 6, int nu = 3) {
        Policy p;
        p.ubar.assign(N, VecX::Zero(nu));
        p.K.assign(N, MatX::Zero(nu, nx));
        p.maneuver_mask.assign(N, true);
        return p;
    }

    bool maneuver_at(int k) const { return maneuver_mask.empty() || maneuver_mask[k]; }

    void validate() const {
        for (int k = 0; k < n(); ++k)
            if (!maneuver_at(k) && (ubar[k].norm() != 0.0 || K[k].norm() != 0.0))
                throw ModelError("Policy: nonzero control at masked node");
    }

    VecX stacked_ubar() const {
        const int nu = static_cast<int>(ubar.empty() ? 0 : ubar[0].size());
        VecX u(nu * n());
        for (int k = 0; k < n(); ++k) u.segment(nu * k, nu) = ubar[k];
        return u;
    }

    /// Block-diagonal stacked gain (N*nu x (N+1)*nx); the last block column is zero.
    MatX stacked_K() const {
        const int N = n();
        const int nu = static_cast<int>(K.empty() ? 0 : K[0].rows());
        const int nx = static_cast<int>(K.empty() ? 0 : K[0].cols());
        MatX kk = MatX::Zero(nu * N, nx * (N + 1));
        for (int k = 0; k < N; ++k) kk.block(nu * k, nx * k, nu, nx) = K[k];
        return kk;
    }
};

/// Stacked mean Xbar = A xbar0 + B Ubar + C.
inline VecX state_mean(const BlockOperators& ops, const VecX& x0_mean, const VecX& ubar_stacked) {
    if (ubar_stacked.size() != ops.nu * ops.N) throw ModelError("state_mean: bad control size");
    return ops.A * x0_mean + ops.B * ubar_stacked + ops.c;
}

/// Affine covariance factors at node k (the factored statistics used by the
/// convex program). Wide rectangular; only the Gram matrices are meaningful.
struct NodeFactors {
    MatX P_hat_half;  // nx x (nx + (N+1) ny)
    MatX P_half;      // nx x (nx + (N+1) ny + nx), [P_hat_half, P_tilde_half]
    MatX P_u_half;    // nu x (nx + (N+1) ny)
};

inline NodeFactors sqrt_covariances(const BlockOperators& ops, const FilterSchedule& schedule,
                                    const Policy& policy, int k) {
    if (k < 0 || k > ops.N) throw ModelError("sqrt_covariances: bad node");
    const MatX kk = policy.stacked_K();
    NodeFactors f;
    f.P_hat_half = ops.x_block(ops.S_half, k) + ops.x_block(MatX(ops.B * (kk * ops.S_half)), k);
    const MatX pt_half = psd_factor(schedule.P_tilde[k]);
    f.P_half.resize(ops.nx, f.P_hat_half.cols() + ops.nx);
    f.P_half << f.P_hat_half, pt_half;
    if (k < ops.N)
        f.P_u_half = policy.K[k] * ops.S_half.middleRows(ops.nx * k, ops.nx);
    else
        f.P_u_half = MatX::Zero(ops.nu, ops.S_half.cols());
    return f;
}

}  // namespace ccorbit
