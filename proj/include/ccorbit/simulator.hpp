#pragma once

#include <algorithm>
#include <cmath>
#include <atomic>
#include <thread>
#include <vector>

#include "ccorbit/dynamics.hpp"
#include "ccorbit/planner.hpp"
#include "ccorbit/rng.hpp"

namespace ccorbit {

struct MCConfig {
    int n_samples = 1000;
    std::uint64_t seed = 0;
    enum class Mode { linear, nonlinear } mode = Mode::linear;
    bool store_trajectories = false;
    int em_substeps = 10;        // diffusion injections per node (nonlinear mode)
    int n_threads = 0;           // 0: hardware concurrency
    double impact_radius = 0.0;  // exclude samples that cross this radius (nonlinear)

    void validate() const {
        if (n_samples < 2) throw ModelError("MCConfig: need at least 2 samples");
        if (em_substeps < 1) throw ModelError("MCConfig: em_substeps < 1");
    }
};

/// Order statistic at index ceil(p*n) (the min-a quantile definition).
inline double empirical_quantile(std::vector<double> samples, double p) {
    if (samples.empty()) throw ModelError("empirical_quantile: empty input");
    if (!(p > 0.0 && p <= 1.0)) throw ModelError("empirical_quantile: p out of range");
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    auto idx = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
    if (idx < 1) idx = 1;
    return samples[idx - 1];
}

struct ViolationStat {
    int node = 0;
    int count = 0;
    int n = 0;
    double rate() const { return n ? static_cast<double>(count) / n : 0.0; }
};

struct MCReport {
    int n_samples = 0;   // requested
    int n_valid = 0;     // finished without exclusion
    int n_excluded = 0;
    std::uint64_t seed = 0;
    std::string mode;

    std::vector<double> dv_totals;  // per valid sample
    double dv_mean = 0, dv_std = 0;
    double dv50 = 0, dv90 = 0, dv95 = 0, dv99 = 0;
    double j_ub = 0;
    bool dv99_within_bound = false;

    std::vector<ViolationStat> control_mag;  // per maneuver node
    std::vector<ViolationStat> control_rate; // per node pair
    std::vector<ViolationStat> tube;         // per constrained node
    std::vector<ViolationStat> cone;         // per stc-active node

    VecX terminal_mean_err;    // sample mean of x_N minus target (or ref) position
    MatX terminal_sample_cov;  // sample covariance of x_N

    std::vector<std::vector<VecX>> trajectories;  // optional, [sample][node]
    std::vector<std::vector<VecX>> controls;      // optional, [sample][segment]
};

namespace sim_detail {

struct SampleRun {
    std::vector<VecX> x;  // truth at nodes, N+1
    std::vector<VecX> u;  // applied control per segment
    double dv = 0.0;
    bool excluded = false;
};

template <class Fn>
void parallel_samples(int n, int n_threads, Fn&& fn) {
    if (n_threads <= 0) n_threads = static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min(n_threads, n));
    if (n_threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

inline VecX draw(Rng& rng, int n) {
    VecX v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

/// Tally constraint-violation indicators and distribution statistics across the
/// finished samples, in sample order (bit-reproducible for a fixed seed).
inline MCReport reduce(const PlannerInputs& in, const PlanSolution& plan,
                       const std::vector<SampleRun>& runs, const MCConfig& cfg,
                       const char* mode) {
    const auto& ops = *in.ops;
    const int N = ops.N;
    MCReport rep;
    rep.n_samples = cfg.n_samples;
    rep.seed = cfg.seed;
    rep.mode = mode;
    rep.j_ub = plan.j_ub;

    const auto& cs = in.constraints;
    if (cs.u_max)
        for (int k = 0; k < N; ++k)
            if (plan.policy.maneuver_at(k)) rep.control_mag.push_back({k, 0, 0});
    if (cs.du_max)
        for (int k = 0; k + 1 < N; ++k) rep.control_rate.push_back({k, 0, 0});
    if (cs.tube)
        for (int k = 0; k <= N; ++k)
            if (in.node_constrained(k)) rep.tube.push_back({k, 0, 0});
    if (cs.stc)
        for (int k : plan.stc_active_nodes) rep.cone.push_back({k, 0, 0});

    VecX xn_sum;
    MatX xn_outer;
    std::vector<VecX> xn_list;
    for (const auto& run : runs) {
        if (run.excluded) {
            ++rep.n_excluded;
            continue;
        }
        ++rep.n_valid;
        rep.dv_totals.push_back(run.dv);
        xn_list.push_back(run.x[N]);

        std::size_t i = 0;
        if (cs.u_max)
            for (int k = 0; k < N; ++k)
                if (plan.policy.maneuver_at(k)) {
                    auto& v = rep.control_mag[i++];
                    ++v.n;
                    if (run.u[k].norm() > *cs.u_max) ++v.count;
                }
        if (cs.du_max)
            for (std::size_t j = 0; j < rep.control_rate.size(); ++j) {
                auto& v = rep.control_rate[j];
                ++v.n;
                if ((run.u[v.node + 1] - run.u[v.node]).norm() > *cs.du_max) ++v.count;
            }
        if (cs.tube)
            for (auto& v : rep.tube) {
                ++v.n;
                const VecX dev = cs.tube->H * (run.x[v.node] - in.x_ref[v.node]);
                if (dev.norm() > cs.tube->d_max) ++v.count;
            }
        if (cs.stc)
            for (auto& v : rep.cone) {
                ++v.n;
                const VecX r = cs.stc->H_r * run.x[v.node];
                if ((cs.stc->A_cone * r).norm() > cs.stc->b_cone.dot(r)) ++v.count;
            }
        if (cfg.store_trajectories) {
            rep.trajectories.push_back(run.x);
            rep.controls.push_back(run.u);
        }
    }
    if (rep.n_valid < 2) throw NumericalError("monte carlo: fewer than 2 valid samples");

    double sum = 0, sum2 = 0;
    for (double d : rep.dv_totals) {
        sum += d;
        sum2 += d * d;
    }
    rep.dv_mean = sum / rep.n_valid;
    rep.dv_std = std::sqrt(std::max(0.0, sum2 / rep.n_valid - rep.dv_mean * rep.dv_mean));
    rep.dv50 = empirical_quantile(rep.dv_totals, 0.50);
    rep.dv90 = empirical_quantile(rep.dv_totals, 0.90);
    rep.dv95 = empirical_quantile(rep.dv_totals, 0.95);
    rep.dv99 = empirical_quantile(rep.dv_totals, 0.99);
    rep.dv99_within_bound = rep.dv99 <= rep.j_ub + 1e-12;

    xn_sum = VecX::Zero(ops.nx);
    for (const auto& x : xn_list) xn_sum += x;
    const VecX xn_mean = xn_sum / rep.n_valid;
    xn_outer = MatX::Zero(ops.nx, ops.nx);
    for (const auto& x : xn_list) xn_outer += (x - xn_mean) * (x - xn_mean).transpose();
    rep.terminal_sample_cov = xn_outer / (rep.n_valid - 1);
    const VecX target = cs.terminal ? cs.terminal->x_f
                                    : (in.x_ref.empty() ? VecX(VecX::Zero(ops.nx))
                                                        : in.x_ref[N]);
    rep.terminal_mean_err = xn_mean - target;
    return rep;
}

}  // namespace sim_detail

/// Monte-Carlo against the design-time linear model: node-level noise uses the
/// exact G_k / G_exe_k factors, the filter runs the precomputed gains, and the
/// policy acts on the z-process. Samples use independent counter-seeded streams.
inline MCReport run_linear_mc(const PlannerInputs& in,
                              const std::vector<LinearSegment>& segments,
                              const std::vector<LinearObservation>& obs,
                              const PlanSolution& plan, const MCConfig& cfg) {
    cfg.validate();
    in.validate();
    const auto& ops = *in.ops;
    const auto& sched = *in.sched;
    const int N = ops.N, nx = ops.nx, nu = ops.nu, ny = ops.ny;
    if (static_cast<int>(segments.size()) != N || static_cast<int>(obs.size()) != N + 1)
        throw ModelError("run_linear_mc: input lengths");

    const MatX ph0 = psd_factor(in.init.P_hat0_minus);
    const MatX pt0 = psd_factor(in.init.P_tilde0_minus);

    std::vector<sim_detail::SampleRun> runs(cfg.n_samples);
    sim_detail::parallel_samples(cfg.n_samples, cfg.n_threads, [&](int si) {
        Rng rng(cfg.seed, static_cast<std::uint64_t>(si));
        auto& run = runs[si];
        run.x.resize(N + 1);
        run.u.assign(N, VecX::Zero(nu));

        const VecX xhat0m = in.x0_mean() + ph0 * sim_detail::draw(rng, nx);
        VecX xtil = pt0 * sim_detail::draw(rng, nx);
        VecX x = xhat0m + xtil;

        const VecX w0 = sim_detail::draw(rng, ny);
        const VecX ytil0 = sched.measured[0]
                               ? VecX(obs[0].C * xtil + obs[0].D * w0)
                               : VecX(VecX::Zero(ny));
        VecX xhat = xhat0m + sched.L[0] * ytil0;
        VecX z = xhat - in.x0_mean();
        xtil = x - xhat;
        run.x[0] = x;

        for (int k = 0; k < N; ++k) {
            const auto& s = segments[k];
            VecX u = VecX::Zero(nu);
            if (plan.policy.maneuver_at(k)) {
                u = plan.policy.ubar[k] + plan.policy.K[k] * z;
                run.dv += u.norm();
            }
            run.u[k] = u;
            const VecX we = sim_detail::draw(rng, static_cast<int>(s.G_exe.cols()));
            const VecX w = sim_detail::draw(rng, static_cast<int>(s.G.cols()));
            const VecX wo = sim_detail::draw(rng, ny);

            const VecX xtil_minus = s.A * xtil + s.G_exe * we + s.G * w;
            x = s.A * x + s.B * u + s.c + s.G_exe * we + s.G * w;
            const VecX ytil = sched.measured[k + 1]
                                  ? VecX(obs[k + 1].C * xtil_minus + obs[k + 1].D * wo)
                                  : VecX(VecX::Zero(ny));
            xhat = s.A * xhat + s.B * u + s.c + sched.L[k + 1] * ytil;
            z = s.A * z + sched.L[k + 1] * ytil;
            xtil = x - xhat;
            run.x[k + 1] = x;
        }
    });
    return sim_detail::reduce(in, plan, runs, cfg, "linear");
}

/// Nonlinear closed-loop plant for certification: truth follows the nonlinear
/// SDE, the onboard filter is an EKF relinearized at the estimate, and the
/// designed policy acts on the innovation-driven z-process.
struct NonlinearPlant {
    DynamicsModel model;
    ReferenceTrajectory ref;     // node epochs and reference states
    ObservationModel obs;
    GatesParams gates;
    double sigma_a = 0.0;
    std::vector<bool> measurement_mask;  // per node
    OdeOptions ode;                      // MC-grade tolerances
};

inline MCReport run_nonlinear_mc(const PlannerInputs& in, const NonlinearPlant& plant,
                                 const PlanSolution& plan, const MCConfig& cfg) {
    cfg.validate();
    in.validate();
    const auto& ops = *in.ops;
    const int N = ops.N;
    if (plant.ref.n_segments() != N) throw ModelError("run_nonlinear_mc: horizon mismatch");
    const bool zoh = plant.model.control_type == ControlType::zoh;

    const MatX ph0 = psd_factor(in.init.P_hat0_minus);
    const MatX pt0 = psd_factor(in.init.P_tilde0_minus);
    const LtvSystem sys = ltv_system(plant.model, plant.sigma_a);

    std::vector<sim_detail::SampleRun> runs(cfg.n_samples);
    sim_detail::parallel_samples(cfg.n_samples, cfg.n_threads, [&](int si) {
        Rng rng(cfg.seed, static_cast<std::uint64_t>(si));
        auto& run = runs[si];
        run.x.resize(N + 1);
        run.u.assign(N, VecX::Zero(3));
        try {
            const VecX xhat0m = in.x0_mean() + ph0 * sim_detail::draw(rng, 6);
            VecX x = xhat0m + pt0 * sim_detail::draw(rng, 6);
            VecX xhat = xhat0m;
            MatX ptil = in.init.P_tilde0_minus;

            // EKF measurement update at node k; returns the estimate correction
            auto update = [&](int k) {
                const VecX wo = sim_detail::draw(rng, plant.obs.n_y);
                if (!plant.measurement_mask.empty() && !plant.measurement_mask[k])
                    return VecX(VecX::Zero(6));
                const VecX y = plant.obs.f_obs(x) + plant.obs.noise_factor(x) * wo;
                const auto lin = linearize_observation(plant.obs, xhat);
                const VecX innov = y - plant.obs.f_obs(xhat);
                const MatX L = kalman_gain(Mat6(ptil), lin.C, lin.D);
                xhat += L * innov;
                const MatX ilc = MatX::Identity(6, 6) - L * lin.C;
                ptil = symmetrize(ilc * ptil * ilc.transpose() +
                                  L * (lin.D * lin.D.transpose()) * L.transpose());
                return VecX(L * innov);
            };

            VecX z = xhat0m - in.x0_mean();  // then + L0 innov below: z_0 = xhat_0 - xbar_0
            z += update(0);
            run.x[0] = x;

            for (int k = 0; k < N; ++k) {
                const double t0 = plant.ref.epochs[k], t1 = plant.ref.epochs[k + 1];
                Vec3 u_cmd = Vec3::Zero();
                Vec3 u_exec = Vec3::Zero();
                if (plan.policy.maneuver_at(k)) {
                    u_cmd = plan.policy.ubar[k] + plan.policy.K[k] * z;
                    run.dv += u_cmd.norm();
                    u_exec = u_cmd + gates_matrix(u_cmd, plant.gates) *
                                         Vec3(sim_detail::draw(rng, 3));
                    if (!zoh) {
                        x.tail<3>() += u_exec;
                        xhat.tail<3>() += u_cmd;
                    }
                }
                run.u[k] = u_cmd;

                // truth: drift flow with diffusion kicks at substep boundaries
                const int m = cfg.em_substeps;
                const double dt_sub = (t1 - t0) / m;
                for (int i = 0; i < m; ++i) {
                    const double ta = t0 + i * dt_sub, tb = ta + dt_sub;
                    x = integrate_ode(
                        [&](double t, const VecX& s_, VecX& ds) {
                            ds = eval_eom(plant.model, Vec6(s_),
                                          zoh ? u_exec : Vec3(Vec3::Zero()), t);
                        },
                        ta, tb, x, plant.ode);
                    if (plant.sigma_a > 0.0)
                        x.tail<3>() += plant.sigma_a * std::sqrt(dt_sub) *
                                       Vec3(sim_detail::draw(rng, 3));
                    if (cfg.impact_radius > 0.0 &&
                        plant.model.kind == DynamicsModel::Kind::cr3bp) {
                        const double r2 =
                            (x.head<3>() - Vec3(1.0 - plant.model.mass_ratio, 0, 0)).norm();
                        if (r2 < cfg.impact_radius) throw PropagationError("impact");
                    }
                }

                // EKF time update along the estimate (STM and noise integrals)
                const DiscretizedLtv d =
                    discretize_ltv(sys, xhat, t0, t1, zoh,
                                   zoh ? VecX(u_cmd) : VecX(VecX::Zero(3)), plant.ode);
                xhat = d.x_end;
                MatX gexe = MatX::Zero(6, 3);
                if (plan.policy.maneuver_at(k))
                    gexe = d.seg.B * gates_matrix(u_cmd, plant.gates);
                ptil = symmetrize(d.seg.A * ptil * d.seg.A.transpose() +
                                  gexe * gexe.transpose() + d.seg.G * d.seg.G.transpose());

                z = d.seg.A * z;
                z += update(k + 1);
                run.x[k + 1] = x;
            }
        } catch (const std::exception&) {
            run.excluded = true;
        }
    });
    return sim_detail::reduce(in, plan, runs, cfg, "nonlinear");
}

}  // namespace ccorbit
