#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccorbit/planner.hpp"
#include "test_support.hpp"

using namespace ccorbit;

namespace {

struct Built {
    testsup::RandomSystem sys;
    FilterSchedule sched;
    BlockOperators ops;
};

Built build_random(testsup::Rand& rnd, int nx, int nu, int ny, int N) {
    Built b;
    b.sys = testsup::random_system(rnd, nx, nu, ny, N, false);
    b.sched = build_filter_schedule(b.sys.segments, b.sys.obs, b.sys.init,
                                    b.sys.measurement_mask);
    b.ops = assemble_block_operators(b.sys.segments, b.sched, b.sys.init);
    return b;
}

/// Noise-free double integrator with unit-step impulses (nx = 2, nu = 1).
Built double_integrator(int N, double dt) {
    Built b;
    b.sys.nx = 2;
    b.sys.nu = 1;
    b.sys.ny = 2;
    b.sys.N = N;
    for (int k = 0; k < N; ++k) {
        LinearSegment s = LinearSegment::zero(2, 1);
        s.A << 1.0, dt, 0.0, 1.0;
        s.B << dt, 1.0;  // impulsive: A * [0; 1]
        b.sys.segments.push_back(s);
    }
    for (int k = 0; k <= N; ++k) {
        LinearObservation o;
        o.C = MatX::Identity(2, 2);
        o.D = 1e-6 * MatX::Identity(2, 2);
        o.c_obs = VecX::Zero(2);
        b.sys.obs.push_back(o);
        b.sys.measurement_mask.push_back(true);
    }
    b.sys.init.x0_mean = (VecX(2) << 1.0, 0.0).finished();
    b.sys.init.P_hat0_minus = 1e-12 * MatX::Identity(2, 2);
    b.sys.init.P_tilde0_minus = 1e-12 * MatX::Identity(2, 2);
    b.sched = build_filter_schedule(b.sys.segments, b.sys.obs, b.sys.init,
                                    b.sys.measurement_mask);
    b.ops = assemble_block_operators(b.sys.segments, b.sched, b.sys.init);
    return b;
}

}  // namespace

TEST_CASE("unconstrained minimum is the zero policy") {
    testsup::Rand rnd(61);
    auto b = build_random(rnd, 3, 2, 2, 4);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    const auto sol = solve_fixed(in);
    REQUIRE(sol.status == PlanStatus::optimal);
    for (int k = 0; k < 4; ++k) {
        CHECK(sol.policy.ubar[k].norm() < 1e-6);
        CHECK((sol.policy.K[k] * b.ops.S_half.middleRows(3 * k, 3)).norm() < 1e-5);
    }
    CHECK(sol.j_ub < 1e-5);
}

TEST_CASE("two-impulse transfer matches the linear-solve oracle") {
    const int N = 2;
    const double dt = 1.0;
    auto b = double_integrator(N, dt);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    TerminalSpec term;
    term.x_f = VecX::Zero(2);
    term.P_f = 1e4 * MatX::Identity(2, 2);  // inactive covariance bound
    in.constraints.terminal = term;
    const auto sol = solve_fixed(in);
    REQUIRE(sol.status == PlanStatus::optimal);

    // oracle: unique feasible two-burn sequence from the stacked map
    MatX m(2, 2);
    m.col(0) = b.ops.x_block(b.ops.B, N).col(0);
    m.col(1) = b.ops.x_block(b.ops.B, N).col(1);
    const VecX need = -b.ops.x_block(MatX(b.ops.A), N) * in.x0_mean();
    const VecX u_expect = m.partialPivLu().solve(need);
    CHECK(sol.policy.ubar[0][0] == doctest::Approx(u_expect[0]).epsilon(1e-6));
    CHECK(sol.policy.ubar[1][0] == doctest::Approx(u_expect[1]).epsilon(1e-6));
    CHECK(sol.margins.terminal_mean_err.norm() < 1e-7);
}

TEST_CASE("maneuver mask pins controls and gains to zero") {
    testsup::Rand rnd(62);
    auto b = build_random(rnd, 3, 2, 2, 5);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    in.maneuver_mask = {true, false, true, false, true};
    TerminalSpec term;
    term.x_f = VecX::Zero(3);
    term.P_f = 1e5 * MatX::Identity(3, 3);
    in.constraints.terminal = term;
    const auto sol = solve_fixed(in);
    REQUIRE(sol.status == PlanStatus::optimal);
    CHECK(sol.policy.ubar[1].norm() == 0.0);
    CHECK(sol.policy.K[1].norm() == 0.0);
    CHECK(sol.policy.ubar[3].norm() == 0.0);
    CHECK(sol.policy.K[3].norm() == 0.0);
    CHECK(sol.margins.terminal_mean_err.norm() < 1e-6);
}

TEST_CASE("terminal covariance constraint engages the feedback gains") {
    // full-rank input so feedback can cancel the predictable dispersion
    testsup::Rand rnd(63);
    auto b = build_random(rnd, 2, 2, 2, 4);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    TerminalSpec term;
    term.x_f = VecX::Zero(2);
    // open-loop estimate dispersion at N: achievable with gains, violated without
    const MatX s_open = b.ops.x_block(MatX(b.ops.S), 4).middleCols(2 * 4, 2);
    term.P_f = symmetrize(s_open) + b.sched.P_tilde[4] +
               1e-3 * s_open.trace() * MatX::Identity(2, 2);
    in.constraints.terminal = term;
    const auto sol = solve_fixed(in);
    REQUIRE(sol.status == PlanStatus::optimal);
    double kn = 0;
    for (const auto& kk : sol.policy.K) kn += kk.norm();
    CHECK(kn > 1e-6);  // gains must act to shrink the dispersion
    CHECK(sol.margins.terminal_cov > -1e-6);
    CHECK(sol.margins.worst > -1e-6);
}

TEST_CASE("infeasible terminal covariance is diagnosed before the solve") {
    testsup::Rand rnd(64);
    auto b = build_random(rnd, 2, 1, 2, 3);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    TerminalSpec term;
    term.x_f = VecX::Zero(2);
    term.P_f = 1e-10 * MatX::Identity(2, 2);
    in.constraints.terminal = term;
    CHECK_THROWS_WITH_AS(solve_fixed(in),
                         "infeasible terminal covariance: filter floor exceeds target",
                         ModelError);
}

TEST_CASE("control-magnitude bound produces an infeasible certificate when unreachable") {
    const int N = 2;
    auto b = double_integrator(N, 1.0);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    in.init.x0_mean = (VecX(2) << 10.0, 0.0).finished();
    TerminalSpec term;
    term.x_f = VecX::Zero(2);
    term.P_f = 1e4 * MatX::Identity(2, 2);
    in.constraints.terminal = term;
    in.constraints.u_max = 1e-3;  // cannot move 10 units with milli-burns
    const auto sol = solve_fixed(in);
    CHECK(sol.status == PlanStatus::infeasible);
    CHECK(sol.infeasible_family == "control_magnitude");
}

TEST_CASE("vacuous trigger converges in one iteration to the stc-free solution") {
    const int N = 3;
    auto b = double_integrator(N, 1.0);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    in.init.x0_mean = (VecX(2) << 1.0, 0.0).finished();
    TerminalSpec term;
    term.x_f = VecX::Zero(2);
    term.P_f = 1e4 * MatX::Identity(2, 2);
    in.constraints.terminal = term;
    ApproachConeSpec cone;
    cone.A_cone = MatX::Zero(1, 1);
    cone.A_cone(0, 0) = 1.0;
    cone.b_cone = VecX::Ones(1);
    cone.H_r = MatX::Zero(1, 2);
    cone.H_r(0, 0) = 1.0;
    cone.r_trigger = -1.0;  // trigger sphere of negative radius: never active
    in.constraints.stc = cone;

    ScpOptions scp;
    const auto sol = solve_with_stc(in, scp);
    REQUIRE(sol.status == PlanStatus::optimal);
    CHECK(sol.trace.size() <= 2);  // converges immediately (no trigger flips)
    CHECK(sol.zeta.lpNorm<Eigen::Infinity>() < 1e-9);

    PlannerInputs free_in = in;
    free_in.constraints.stc.reset();
    const auto base = solve_fixed(free_in);
    CHECK(sol.j_ub == doctest::Approx(base.j_ub).epsilon(1e-6));
}

TEST_CASE("active trigger bends the trajectory into the admissible cone") {
    // Double integrator heading to the origin; near the origin the position
    // must satisfy |x| <= x (only x >= 0 admissible), approached from +x.
    const int N = 6;
    auto b = double_integrator(N, 1.0);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    in.init.x0_mean = (VecX(2) << 2.0, 0.0).finished();
    TerminalSpec term;
    term.x_f = (VecX(2) << 0.05, 0.0).finished();
    term.P_f = 1e4 * MatX::Identity(2, 2);
    in.constraints.terminal = term;
    ApproachConeSpec cone;
    cone.A_cone = MatX::Zero(1, 1);  // ||0 * r|| <= b^T r, i.e. r >= 0
    cone.b_cone = VecX::Ones(1);
    cone.H_r = MatX::Zero(1, 2);
    cone.H_r(0, 0) = 1.0;
    cone.r_trigger = 0.5;
    in.constraints.stc = cone;

    ScpOptions scp;
    scp.eps_tol = 1e-6;
    const auto sol = solve_with_stc(in, scp);
    REQUIRE(sol.status == PlanStatus::optimal);
    CHECK(!sol.stc_active_nodes.empty());
    CHECK(sol.zeta.lpNorm<Eigen::Infinity>() < 1e-7);  // no residual violation
    for (double m : sol.margins.stc) CHECK(m > -1e-7);
    // trace is monotone in the penalized objective once the active set settles
    for (std::size_t i = 1; i < sol.trace.size(); ++i)
        CHECK(sol.trace[i].j_penalty <= sol.trace[i - 1].j_penalty + 1e-6);
}

TEST_CASE("solutions are deterministic across repeated solves") {
    testsup::Rand rnd(65);
    auto b = build_random(rnd, 3, 2, 2, 4);
    PlannerInputs in;
    in.ops = &b.ops;
    in.sched = &b.sched;
    in.init = b.sys.init;
    TerminalSpec term;
    term.x_f = VecX::Zero(3);
    term.P_f = 1e4 * MatX::Identity(3, 3);
    in.constraints.terminal = term;
    in.constraints.u_max = 1e3;
    const auto s1 = solve_fixed(in);
    const auto s2 = solve_fixed(in);
    REQUIRE(s1.status == PlanStatus::optimal);
    CHECK(s1.j_ub == s2.j_ub);
    for (int k = 0; k < 4; ++k)
        CHECK((s1.policy.ubar[k] - s2.policy.ubar[k]).norm() == 0.0);
}
