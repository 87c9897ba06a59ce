#pragma once

#include <memory>
#include <vector>

#include "ccorbit/dynamics.hpp"
#include "ccorbit/planner.hpp"
#include "ccorbit/scenario_config.hpp"
#include "ccorbit/simulator.hpp"

namespace ccorbit {

struct CorrectionResult {
    Vec6 state;                     // refined initial condition
    double period = 0;              // full period
    int iterations = 0;
    std::vector<double> residuals;  // crossing-velocity norm per iteration
};

namespace scen_detail {

/// Refine the time of the next y = 0 crossing (with t > t_min) by stepping
/// until the sign flips and polishing with Newton on y(t).
inline double find_xz_crossing(const DynamicsModel& m, const Vec6& x0, double t_min,
                               double t_max, const OdeOptions& opt) {
    const double dt = 0.02;
    double t_prev = t_min;
    Vec6 x_prev = propagate(m, x0, 0.0, t_min, opt);
    double y_prev = x_prev[1];
    for (double t = t_min + dt; t <= t_max; t += dt) {
        const Vec6 x = propagate(m, x_prev, t_prev, t, opt);
        if (y_prev != 0.0 && x[1] * y_prev < 0.0) {
            // Newton refinement from the bracketing state
            double tc = t_prev + (t - t_prev) * y_prev / (y_prev - x[1]);
            Vec6 xc;
            for (int it = 0; it < 50; ++it) {
                xc = propagate(m, x_prev, t_prev, tc, opt);
                const double ydot = eval_f0(m, xc, tc)[1];
                const double step = xc[1] / ydot;
                tc -= step;
                if (std::abs(step) < 1e-14 * std::max(1.0, tc)) break;
            }
            return tc;
        }
        t_prev = t;
        x_prev = x;
        y_prev = x[1];
    }
    throw NumericalError("find_xz_crossing: no crossing found");
}

}  // namespace scen_detail

/// Single-shooting correction of a symmetric periodic orbit: starting from a
/// perpendicular x-z plane crossing (y = 0, vx = vz = 0), adjust (x0, vy0) with
/// z0 held fixed until the half-period crossing is again perpendicular.
inline CorrectionResult differential_correct_nrho(const DynamicsModel& m, const Vec6& guess,
                                                  double tol = 1e-12,
                                                  const OdeOptions& opt_in = {}) {
    if (m.kind != DynamicsModel::Kind::cr3bp)
        throw ModelError("differential_correct_nrho: CR3BP model required");
    OdeOptions opt = opt_in;
    if (opt_in.rtol == OdeOptions{}.rtol && opt_in.atol == OdeOptions{}.atol)
        opt = default_ode_options(m);

    CorrectionResult out;
    Vec6 x0 = guess;
    x0[1] = 0.0;  // enforce the crossing-plane structure of the guess
    x0[3] = 0.0;
    x0[5] = 0.0;

    double t_half = 0.0;
    for (int it = 0; it < 25; ++it) {
        t_half = scen_detail::find_xz_crossing(m, x0, 0.05, 6.0, opt);
        auto [xc, phi] = propagate_with_stm(m, x0, 0.0, t_half, opt);
        const Vec6 f = eval_f0(m, xc, t_half);
        const double r = std::hypot(xc[3], xc[5]);
        out.residuals.push_back(r);
        out.iterations = it + 1;
        if (r < tol) {
            out.state = x0;
            out.period = 2.0 * t_half;
            return out;
        }
        if (it >= 5 && out.residuals[it] > 0.1 * out.residuals[it - 5])
            throw NumericalError("differential_correct_nrho: Newton stall");

        // residual sensitivity with the crossing-time correction folded in:
        // d v_i = [Phi_i,c - (f_i / ydot) Phi_y,c] d c,  i in {vx, vz}, c in {x0, vy0}
        Eigen::Matrix2d jac;
        const double ydot = f[1];
        const int rows[2] = {3, 5}, cols[2] = {0, 4};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                jac(i, j) = phi(rows[i], cols[j]) - f[rows[i]] / ydot * phi(1, cols[j]);
        const Eigen::Vector2d resid(xc[3], xc[5]);
        const Eigen::Vector2d delta = jac.partialPivLu().solve(resid);
        x0[0] -= delta[0];
        x0[4] -= delta[1];
    }
    throw NumericalError("differential_correct_nrho: did not converge");
}

/// A fully materialized scenario: dynamics, reference, discretization, filter
/// schedule, block operators, and the planner-facing inputs, all in working
/// units (km-s for the rendezvous scenario, nondimensional for the NRHO one).
struct CompiledScenario {
    ScenarioConfig cfg;
    DynamicsModel model;
    ReferenceTrajectory ref;
    std::vector<DiscreteSegment> segments;
    std::vector<LinearSegment> linear_segments;
    ObservationModel obs_model;
    std::vector<LinearObservation> obs;
    InitialUncertainty init;
    std::vector<bool> maneuver_mask;     // per segment
    std::vector<bool> measurement_mask;  // per node
    FilterSchedule sched;
    BlockOperators ops;
    ConstraintSet constraints;
    RiskBudget risk;
    GatesParams gates;   // working units
    double sigma_a = 0;  // working units

    // working-unit scales (km, s per internal unit)
    double len_unit_km = 1.0;
    double time_unit_s = 1.0;
    double vel_unit_km_s = 1.0;

    double period = 0.0;  // nrho reference period (nd), 0 for cwh

    PlannerInputs planner_inputs() const {
        PlannerInputs in;
        in.ops = &ops;
        in.sched = &sched;
        in.init = init;
        in.maneuver_mask = maneuver_mask;
        in.x_ref.clear();
        for (const auto& x : ref.states) in.x_ref.push_back(x);
        in.constraints = constraints;
        in.risk = risk;
        in.continuous = cfg.control == "zoh";
        for (int k = 0; k < ref.n_segments(); ++k)
            in.dt.push_back(ref.epochs[k + 1] - ref.epochs[k]);
        return in;
    }

    SolverOptions solver_options() const {
        SolverOptions so;
        so.feastol = cfg.solver_feastol;
        so.abstol = cfg.solver_abstol;
        so.reltol = cfg.solver_reltol;
        so.max_iters = cfg.solver_max_iters;
        return so;
    }

    ScpOptions scp_options() const {
        ScpOptions so;
        so.eps_tol = cfg.scp_eps_tol;
        so.max_iter = cfg.scp_max_iter;
        so.penalty_weight = cfg.scp_penalty_weight;
        return so;
    }

    NonlinearPlant plant() const {
        NonlinearPlant pl;
        pl.model = model;
        pl.ref = ref;
        pl.obs = obs_model;
        pl.gates = gates;
        pl.sigma_a = sigma_a;
        pl.measurement_mask = measurement_mask;
        pl.ode = default_ode_options(model);
        // certification runs tolerate slightly looser integration than design
        pl.ode.rtol = std::max(pl.ode.rtol, 1e-10);
        pl.ode.atol = std::max(pl.ode.atol, 1e-10);
        return pl;
    }

    MCConfig mc_config() const {
        MCConfig mc;
        mc.n_samples = cfg.mc_samples;
        mc.seed = cfg.mc_seed;
        mc.mode = cfg.mc_mode == "nonlinear" ? MCConfig::Mode::nonlinear
                                             : MCConfig::Mode::linear;
        mc.em_substeps = cfg.mc_em_substeps;
        mc.impact_radius = cfg.mc_impact_radius_km / len_unit_km;
        return mc;
    }
};

namespace scen_detail {

inline ApproachConeSpec cone_from(const ScenarioConfig& c) {
    ApproachConeSpec cone;
    const int axis = c.approach_axis[1] == 'x' ? 0 : (c.approach_axis[1] == 'y' ? 1 : 2);
    const double sign = c.approach_axis[0] == '+' ? 1.0 : -1.0;
    cone.A_cone = MatX::Zero(2, 3);
    int r = 0;
    for (int i = 0; i < 3; ++i)
        if (i != axis) cone.A_cone(r++, i) = 1.0;
    cone.b_cone = VecX::Zero(3);
    cone.b_cone[axis] = sign * std::tan(c.theta_max_rad);
    cone.H_r = MatX::Zero(3, 6);
    cone.H_r.leftCols(3).setIdentity();
    return cone;
}

inline void finish_build(CompiledScenario& s) {
    const int N = s.ref.n_segments();
    s.maneuver_mask.resize(N);
    for (int k = 0; k < N; ++k) s.maneuver_mask[k] = (k % s.cfg.maneuver_every == 0);
    s.measurement_mask.resize(N + 1);
    for (int k = 0; k <= N; ++k) s.measurement_mask[k] = (k % s.cfg.measure_every == 0);

    const OdeOptions opt = default_ode_options(s.model);
    s.segments = discretize_all(s.model, s.ref, s.sigma_a, s.gates, s.maneuver_mask, opt);
    s.linear_segments = to_linear(s.segments);

    s.obs.clear();
    for (int k = 0; k <= N; ++k)
        s.obs.push_back(linearize_observation(s.obs_model, s.ref.states[k]));
    s.sched = build_filter_schedule(s.linear_segments, s.obs, s.init, s.measurement_mask);
    s.ops = assemble_block_operators(s.linear_segments, s.sched, s.init);
}

}  // namespace scen_detail

/// Rendezvous scenario in km-s units about a circular chief orbit.
inline CompiledScenario build_cwh_scenario(const ScenarioConfig& c) {
    if (c.kind != "cwh") throw ConfigError("build_cwh_scenario: kind mismatch");
    c.validate();
    CompiledScenario s;
    s.cfg = c;
    const double n = cwh_mean_motion(c.mu_km3_s2, c.chief_radius_km);
    s.model = DynamicsModel::cwh(
        n, c.control == "zoh" ? ControlType::zoh : ControlType::impulsive);

    const int N = c.n_intervals;
    std::vector<double> epochs(N + 1);
    for (int k = 0; k <= N; ++k) epochs[k] = c.dt_s * k;
    Vec6 x0;
    x0 << c.mean_pos_km, c.mean_vel_km_s;
    s.ref = propagate_reference(s.model, x0, epochs, std::vector<Vec3>(N, Vec3::Zero()),
                                default_ode_options(s.model));

    s.gates.sigma1 = c.gates_sigma1_km_s;
    s.gates.sigma2 = c.gates_sigma2_frac;
    s.gates.sigma3 = c.gates_sigma3_km_s;
    s.gates.sigma4 = c.gates_sigma4_rad;
    s.sigma_a = c.sigma_accel_km_s15;
    s.obs_model = ObservationModel::full_state(c.obs_sigma_pos_km, c.obs_sigma_vel_km_s);

    s.init.x0_mean = x0;
    VecX d(6), e(6);
    d << c.sigma_pos_km, c.sigma_pos_km, c.sigma_pos_km, c.sigma_vel_km_s, c.sigma_vel_km_s,
        c.sigma_vel_km_s;
    e << c.est_sigma_pos_km, c.est_sigma_pos_km, c.est_sigma_pos_km, c.est_sigma_vel_km_s,
        c.est_sigma_vel_km_s, c.est_sigma_vel_km_s;
    s.init.P_hat0_minus = d.cwiseAbs2().asDiagonal();
    s.init.P_tilde0_minus = e.cwiseAbs2().asDiagonal();

    if (c.u_max_km_s > 0) s.constraints.u_max = c.u_max_km_s;
    if (c.omega_max_rad_s > 0)
        s.constraints.du_max = c.u_max_km_s * c.omega_max_rad_s * c.dt_s;
    TerminalSpec term;
    Vec6 xf;
    xf << c.target_pos_km, c.target_vel_km_s;
    term.x_f = xf;
    VecX tf(6);
    tf << c.terminal_sigma_pos_km, c.terminal_sigma_pos_km, c.terminal_sigma_pos_km,
        c.terminal_sigma_vel_km_s, c.terminal_sigma_vel_km_s, c.terminal_sigma_vel_km_s;
    term.P_f = tf.cwiseAbs2().asDiagonal();
    s.constraints.terminal = term;
    if (c.tube_d_max_km > 0) {
        TubeSpec tube;
        tube.H = MatX::Zero(3, 6);
        tube.H.leftCols(3).setIdentity();
        tube.d_max = c.tube_d_max_km;
        s.constraints.tube = tube;
    }
    for (std::size_t r = 0; r + 6 < c.hyperplanes.size(); r += 7) {
        Hyperplane hp;
        hp.a = VecX(6);
        for (int i = 0; i < 6; ++i) hp.a[i] = c.hyperplanes[r + i];
        hp.b = c.hyperplanes[r + 6];
        s.constraints.hyperplanes.push_back(hp);
    }
    if (c.stc_enabled) {
        auto cone = scen_detail::cone_from(c);
        cone.r_trigger = c.r_trigger_km;
        s.constraints.stc = cone;
    }
    s.risk.eps_x = c.eps_x;
    s.risk.eps_u = c.eps_u;
    s.risk.quantile_p = c.quantile_p;

    scen_detail::finish_build(s);
    return s;
}

/// Station-keeping scenario on a differential-corrected NRHO, nondimensional
/// working units. The terminal target is the propagated reference endpoint.
inline CompiledScenario build_nrho_scenario(const ScenarioConfig& c) {
    if (c.kind != "nrho") throw ConfigError("build_nrho_scenario: kind mismatch");
    c.validate();
    CompiledScenario s;
    s.cfg = c;
    s.model = DynamicsModel::cr3bp(
        c.mass_ratio, c.l_star_km, c.t_star_s,
        c.control == "zoh" ? ControlType::zoh : ControlType::impulsive);
    s.len_unit_km = c.l_star_km;
    s.time_unit_s = c.t_star_s;
    s.vel_unit_km_s = c.l_star_km / c.t_star_s;

    Vec6 guess;
    guess << c.mean_pos_nd, c.mean_vel_nd;
    const auto corr = differential_correct_nrho(s.model, guess, c.correction_tol);
    s.period = corr.period;

    const int N = c.revolutions * c.nodes_per_rev;
    const double dt = corr.period / c.nodes_per_rev;
    std::vector<double> epochs(N + 1);
    for (int k = 0; k <= N; ++k) epochs[k] = dt * k;
    s.ref = propagate_reference(s.model, corr.state, epochs, std::vector<Vec3>(N, Vec3::Zero()),
                                default_ode_options(s.model));

    const double vu = s.vel_unit_km_s;
    s.gates.sigma1 = c.gates_sigma1_km_s / vu;
    s.gates.sigma2 = c.gates_sigma2_frac;
    s.gates.sigma3 = c.gates_sigma3_km_s / vu;
    s.gates.sigma4 = c.gates_sigma4_rad;
    // acceleration-noise intensity: km/s^1.5 -> nd via sqrt(t*) / v*
    s.sigma_a = c.sigma_accel_km_s15 * std::sqrt(c.t_star_s) / vu;
    s.obs_model = ObservationModel::full_state(c.obs_sigma_pos_km / c.l_star_km,
                                               c.obs_sigma_vel_km_s / vu);

    s.init.x0_mean = s.ref.states[0];
    VecX d(6), e(6);
    const double sp = c.sigma_pos_km / c.l_star_km, sv = c.sigma_vel_km_s / vu;
    const double ep = c.est_sigma_pos_km / c.l_star_km, ev = c.est_sigma_vel_km_s / vu;
    d << sp, sp, sp, sv, sv, sv;
    e << ep, ep, ep, ev, ev, ev;
    s.init.P_hat0_minus = d.cwiseAbs2().asDiagonal();
    s.init.P_tilde0_minus = e.cwiseAbs2().asDiagonal();

    if (c.u_max_km_s > 0) s.constraints.u_max = c.u_max_km_s / vu;
    TerminalSpec term;
    term.x_f = s.ref.states[N];
    VecX tf(6);
    const double tp = c.terminal_sigma_pos_km / c.l_star_km;
    const double tv = c.terminal_sigma_vel_km_s / vu;
    tf << tp, tp, tp, tv, tv, tv;
    term.P_f = tf.cwiseAbs2().asDiagonal();
    s.constraints.terminal = term;
    if (c.tube_d_max_km > 0) {
        TubeSpec tube;
        tube.H = MatX::Zero(3, 6);
        tube.H.leftCols(3).setIdentity();
        tube.d_max = c.tube_d_max_km / c.l_star_km;
        s.constraints.tube = tube;
    }
    s.risk.eps_x = c.eps_x;
    s.risk.eps_u = c.eps_u;
    s.risk.quantile_p = c.quantile_p;

    scen_detail::finish_build(s);
    return s;
}

inline CompiledScenario build_scenario(const ScenarioConfig& c) {
    return c.kind == "cwh" ? build_cwh_scenario(c) : build_nrho_scenario(c);
}

}  // namespace ccorbit
