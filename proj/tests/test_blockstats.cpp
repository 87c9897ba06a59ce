#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccorbit/blockstats.hpp"
#include "ccorbit/rng.hpp"
#include "test_support.hpp"

using namespace ccorbit;

namespace {

struct Built {
    testsup::RandomSystem sys;
    FilterSchedule sched;
    BlockOperators ops;
};

Built build_random(testsup::Rand& rnd, int nx, int nu, int ny, int N, bool random_mask = true) {
    Built b;
    b.sys = testsup::random_system(rnd, nx, nu, ny, N, random_mask);
    b.sched = build_filter_schedule(b.sys.segments, b.sys.obs, b.sys.init,
                                    b.sys.measurement_mask);
    b.ops = assemble_block_operators(b.sys.segments, b.sched, b.sys.init);
    return b;
}

Policy policy_from(const testsup::RandomSystem& sys) {
    Policy p;
    for (int k = 0; k < sys.N; ++k) {
        p.ubar.push_back(sys.ubar.segment(sys.nu * k, sys.nu));
        p.K.push_back(sys.K[k]);
        p.maneuver_mask.push_back(true);
    }
    return p;
}

}  // namespace

TEST_CASE("hand-checkable scalar assembly at N = 1") {
    testsup::Rand rnd(1);
    auto b = build_random(rnd, 1, 1, 1, 1, false);
    const auto& s = b.sys.segments[0];
    const auto& ops = b.ops;
    CHECK(ops.A(0, 0) == 1.0);
    CHECK(ops.A(1, 0) == doctest::Approx(s.A(0, 0)));
    CHECK(ops.B(0, 0) == 0.0);
    CHECK(ops.B(1, 0) == doctest::Approx(s.B(0, 0)));
    CHECK(ops.c(0) == 0.0);
    CHECK(ops.c(1) == doctest::Approx(s.c(0)));
    CHECK(ops.L(0, 0) == doctest::Approx(b.sched.L[0](0, 0)));
    CHECK(ops.L(1, 0) == doctest::Approx(s.A(0, 0) * b.sched.L[0](0, 0)));
    CHECK(ops.L(1, 1) == doctest::Approx(b.sched.L[1](0, 0)));
    CHECK(ops.Lz(0, 0) == 0.0);
    CHECK(ops.Lz(1, 0) == 0.0);  // first block column of Lz is zero
    CHECK(ops.Lz(1, 1) == doctest::Approx(b.sched.L[1](0, 0)));
}

TEST_CASE("extractor slices recover node entries of a stacked vector") {
    testsup::Rand rnd(2);
    auto b = build_random(rnd, 3, 2, 2, 4);
    VecX stacked = rnd.matrix((b.ops.N + 1) * b.ops.nx, 1);
    for (int k = 0; k <= b.ops.N; ++k) {
        const VecX xk = b.ops.x_block(stacked, k);
        CHECK((xk - stacked.segment(b.ops.nx * k, b.ops.nx)).norm() == 0.0);
    }
}

TEST_CASE("stacked identity reproduces the recursion for arbitrary inputs") {
    testsup::Rand rnd(3);
    auto b = build_random(rnd, 3, 2, 2, 4);
    const int nx = 3, ny = 2, N = 4;
    const VecX xhat0m = rnd.matrix(nx, 1);
    const VecX u = rnd.matrix(2 * N, 1);
    const MatX ytil = rnd.matrix(ny, N + 1);  // arbitrary innovation realizations

    // direct recursion
    VecX xhat = xhat0m + b.sched.L[0] * ytil.col(0);
    MatX xs(nx, N + 1);
    xs.col(0) = xhat;
    for (int k = 0; k < N; ++k) {
        const auto& s = b.sys.segments[k];
        xhat = s.A * xhat + s.B * u.segment(2 * k, 2) + s.c + b.sched.L[k + 1] * ytil.col(k + 1);
        xs.col(k + 1) = xhat;
    }

    VecX ystacked((N + 1) * ny);
    for (int k = 0; k <= N; ++k) ystacked.segment(ny * k, ny) = ytil.col(k);
    const VecX stacked = b.ops.A * xhat0m + b.ops.B * u + b.ops.c + b.ops.L * ystacked;
    for (int k = 0; k <= N; ++k)
        CHECK((VecX(b.ops.x_block(stacked, k)) - xs.col(k)).norm() <
              1e-12 * std::max(1.0, xs.col(k).norm()));
}

TEST_CASE("z-process block identity and the absorbed initial update") {
    testsup::Rand rnd(4);
    auto b = build_random(rnd, 2, 1, 2, 5);
    const int nx = 2, ny = 2, N = 5;
    const VecX xhat0m = rnd.matrix(nx, 1);
    const VecX xbar0 = b.sys.init.x0_mean;
    const MatX ytil = rnd.matrix(ny, N + 1);
    VecX ystacked((N + 1) * ny);
    for (int k = 0; k <= N; ++k) ystacked.segment(ny * k, ny) = ytil.col(k);

    // recursion: z_0 = xhat_0 - xbar_0 with xhat_0 = xhat0m + L0 ytil_0
    VecX z = xhat0m + b.sched.L[0] * ytil.col(0) - xbar0;
    MatX zs(nx, N + 1);
    zs.col(0) = z;
    for (int k = 0; k < N; ++k) {
        z = b.sys.segments[k].A * z + b.sched.L[k + 1] * ytil.col(k + 1);
        zs.col(k + 1) = z;
    }

    // block forms: Z = A z0 + Lz Y and Z = A (xhat0m - xbar0) + L Y
    const VecX z_block1 = b.ops.A * zs.col(0) + b.ops.Lz * ystacked;
    const VecX z_block2 = b.ops.A * (xhat0m - xbar0) + b.ops.L * ystacked;
    for (int k = 0; k <= N; ++k) {
        CHECK((VecX(b.ops.x_block(z_block1, k)) - zs.col(k)).norm() < 1e-12);
        CHECK((VecX(b.ops.x_block(z_block2, k)) - zs.col(k)).norm() < 1e-12);
    }
}

TEST_CASE("state mean is affine with superposition") {
    testsup::Rand rnd(5);
    auto b = build_random(rnd, 3, 2, 2, 4);
    const VecX u1 = rnd.matrix(8, 1), u2 = rnd.matrix(8, 1);
    const VecX m0 = state_mean(b.ops, b.sys.init.x0_mean, VecX::Zero(8));
    const VecX m12 = state_mean(b.ops, b.sys.init.x0_mean, VecX(u1 + u2));
    const VecX m2 = state_mean(b.ops, b.sys.init.x0_mean, u2);
    CHECK((m12 - m2 - b.ops.B * u1).norm() < 1e-11 * std::max(1.0, m12.norm()));
    // Ubar = 0 and c = 0 => mean = A xbar0
    auto b2 = b;
    b2.ops.c.setZero();
    const VecX m00 = state_mean(b2.ops, b.sys.init.x0_mean, VecX::Zero(8));
    CHECK((m00 - b.ops.A * b.sys.init.x0_mean).norm() < 1e-13);
}

TEST_CASE("mean trajectory follows the segment recursion") {
    testsup::Rand rnd(6);
    auto b = build_random(rnd, 3, 2, 2, 5);
    const VecX u = rnd.matrix(2 * 5, 1);
    const VecX mean = state_mean(b.ops, b.sys.init.x0_mean, u);
    VecX x = b.sys.init.x0_mean;
    for (int k = 0; k < 5; ++k) {
        const auto& s = b.sys.segments[k];
        x = s.A * x + s.B * u.segment(2 * k, 2) + s.c;
        CHECK((VecX(b.ops.x_block(mean, k + 1)) - x).norm() < 1e-11 * std::max(1.0, x.norm()));
    }
}

TEST_CASE("S half factor matches its definition") {
    testsup::Rand rnd(7);
    auto b = build_random(rnd, 3, 2, 2, 4);
    const MatX s_def = b.ops.A * b.sys.init.P_hat0_minus * b.ops.A.transpose() +
                       b.ops.L *
                           (b.ops.Py_half * b.ops.Py_half.transpose()) *
                           b.ops.L.transpose();
    CHECK((b.ops.S - s_def).norm() < 1e-10 * std::max(1.0, s_def.norm()));
    CHECK((b.ops.S_half * b.ops.S_half.transpose() - b.ops.S).norm() <
          1e-10 * std::max(1.0, b.ops.S.norm()));
    CHECK((b.ops.Sigma_S * b.ops.Sigma_S.transpose() - b.ops.S).norm() <
          1e-10 * std::max(1.0, b.ops.S.norm()));
}

TEST_CASE("stacked covariance identity against the recursion oracle") {
    testsup::Rand rnd(8);
    for (int trial = 0; trial < 4; ++trial) {
        const int nx = 2 + trial % 3, nu = 1 + trial % 2, ny = 1 + trial % 3;
        auto b = build_random(rnd, nx, nu, ny, 5);
        const auto pol = policy_from(b.sys);
        const auto dm = testsup::deviation_map(b.sys, b.sched);

        const MatX kk = pol.stacked_K();
        const MatX ibk = MatX::Identity((b.ops.N + 1) * nx, (b.ops.N + 1) * nx) + b.ops.B * kk;
        const MatX cov_block = ibk * b.ops.S * ibk.transpose();
        const MatX cov_oracle = dm.to_xhat * dm.to_xhat.transpose();
        CHECK((cov_block - cov_oracle).norm() < 1e-10 * std::max(1.0, cov_oracle.norm()));
    }
}

TEST_CASE("node factors match the recursion oracle (policy gains on)") {
    testsup::Rand rnd(9);
    for (int trial = 0; trial < 4; ++trial) {
        auto b = build_random(rnd, 3, 2, 2, 5);
        const auto pol = policy_from(b.sys);
        const auto dm = testsup::deviation_map(b.sys, b.sched);
        for (int k = 0; k <= b.ops.N; ++k) {
            const auto f = sqrt_covariances(b.ops, b.sched, pol, k);
            const MatX p_hat = f.P_hat_half * f.P_hat_half.transpose();
            const MatX p_hat_o = dm.cov_xhat_block(k, 3);
            CHECK((p_hat - p_hat_o).norm() < 1e-10 * std::max(1.0, p_hat_o.norm()));

            const MatX p_tot = f.P_half * f.P_half.transpose();
            const MatX p_tot_o = dm.cov_total_block(k, 3);
            CHECK((p_tot - p_tot_o).norm() < 1e-9 * std::max(1.0, p_tot_o.norm()));

            if (k < b.ops.N) {
                const MatX p_u = f.P_u_half * f.P_u_half.transpose();
                const MatX p_u_o = dm.cov_u_block(k, 2);
                CHECK((p_u - p_u_o).norm() < 1e-10 * std::max(1.0, 1.0 + p_u_o.norm()));
            }
        }
    }
}

TEST_CASE("zero gains: open-loop dispersion and zero control covariance") {
    testsup::Rand rnd(10);
    auto b = build_random(rnd, 3, 2, 2, 4);
    Policy pol = Policy::zero(4, 3, 2);
    for (int k = 0; k <= 4; ++k) {
        const auto f = sqrt_covariances(b.ops, b.sched, pol, k);
        if (k < 4) CHECK(f.P_u_half.norm() == 0.0);
        const MatX p_hat = f.P_hat_half * f.P_hat_half.transpose();
        const MatX s_kk = b.ops.x_block(MatX(b.ops.S), k).middleCols(3 * k, 3);
        CHECK((p_hat - s_kk).norm() < 1e-11 * std::max(1.0, s_kk.norm()));
    }
}

TEST_CASE("P = P_hat + P_tilde as a Gram identity") {
    testsup::Rand rnd(11);
    auto b = build_random(rnd, 3, 1, 2, 4);
    const auto pol = policy_from(b.sys);
    for (int k = 0; k <= 4; ++k) {
        const auto f = sqrt_covariances(b.ops, b.sched, pol, k);
        const MatX lhs = f.P_half * f.P_half.transpose();
        const MatX rhs =
            f.P_hat_half * f.P_hat_half.transpose() + b.sched.P_tilde[k];
        CHECK((lhs - rhs).norm() < 1e-11 * std::max(1.0, rhs.norm()));
    }
}

TEST_CASE("stacked gain has the block-diagonal structure") {
    testsup::Rand rnd(12);
    auto b = build_random(rnd, 3, 2, 2, 4);
    const auto pol = policy_from(b.sys);
    const MatX kk = pol.stacked_K();
    for (int i = 0; i < kk.rows(); ++i)
        for (int j = 0; j < kk.cols(); ++j) {
            const int bi = i / 2, bj = j / 3;
            if (bi != bj) CHECK(kk(i, j) == 0.0);
        }
    CHECK(kk.rightCols(3).norm() == 0.0);  // last block column is zero
}

TEST_CASE("monte-carlo rollout covariance agrees with the factors") {
    // Small random system, 10^6 closed-loop rollouts.
    testsup::Rand rnd(13);
    auto b = build_random(rnd, 2, 1, 1, 3, false);
    const auto pol = policy_from(b.sys);

    const int nx = 2, ny = 1, N = 3;
    const MatX p0_half = psd_factor(b.sys.init.P_hat0_minus);
    const MatX t0_half = psd_factor(b.sys.init.P_tilde0_minus);

    Rng rng(99, 0);
    MatX acc_x = MatX::Zero(nx, nx);   // node N dispersion of xhat
    MatX acc_u = MatX::Zero(1, 1);     // node 1 control covariance
    const int n_samp = 1000000;
    for (int s = 0; s < n_samp; ++s) {
        VecX xi(nx);
        for (int i = 0; i < nx; ++i) xi[i] = rng.normal();
        VecX delta = p0_half * xi;
        for (int i = 0; i < nx; ++i) xi[i] = rng.normal();
        VecX xtil = t0_half * xi;
        VecX wo(ny);
        for (int i = 0; i < ny; ++i) wo[i] = rng.normal();
        const VecX ytil0 = b.sys.obs[0].C * xtil + b.sys.obs[0].D * wo;
        delta = delta + b.sched.L[0] * ytil0;
        VecX z = delta;
        xtil = xtil - b.sched.L[0] * ytil0;
        VecX du1;
        for (int k = 0; k < N; ++k) {
            const auto& seg = b.sys.segments[k];
            const VecX du = b.sys.K[k] * z;
            if (k == 1) du1 = du;
            VecX we(seg.G_exe.cols()), w(seg.G.cols());
            for (int i = 0; i < we.size(); ++i) we[i] = rng.normal();
            for (int i = 0; i < w.size(); ++i) w[i] = rng.normal();
            for (int i = 0; i < ny; ++i) wo[i] = rng.normal();
            const VecX xtil_m = seg.A * xtil + seg.G_exe * we + seg.G * w;
            const VecX ytil = b.sys.obs[k + 1].C * xtil_m + b.sys.obs[k + 1].D * wo;
            delta = seg.A * delta + seg.B * du + b.sched.L[k + 1] * ytil;
            z = seg.A * z + b.sched.L[k + 1] * ytil;
            xtil = xtil_m - b.sched.L[k + 1] * ytil;
        }
        acc_x += delta * delta.transpose();
        acc_u += du1 * du1.transpose();
    }
    acc_x /= n_samp;
    acc_u /= n_samp;

    const auto f_n = sqrt_covariances(b.ops, b.sched, pol, N);
    const MatX p_hat = f_n.P_hat_half * f_n.P_hat_half.transpose();
    CHECK((acc_x - p_hat).norm() < 0.015 * p_hat.norm());

    const auto f_1 = sqrt_covariances(b.ops, b.sched, pol, 1);
    const MatX p_u = f_1.P_u_half * f_1.P_u_half.transpose();
    CHECK((acc_u - p_u).norm() < 0.015 * std::max(1e-12, p_u.norm()));
}
