#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "ccorbit/scenarios.hpp"

using namespace ccorbit;

namespace {
const char* kCwhPath = CCORBIT_SCENARIO_DIR "/cwh_rendezvous.cfg";
const char* kNrhoPath = CCORBIT_SCENARIO_DIR "/nrho_stationkeeping.cfg";
}  // namespace

TEST_CASE("bundled rendezvous config round-trips its table values") {
    const auto c = load_scenario(kCwhPath);
    CHECK(c.kind == "cwh");
    CHECK(c.obs_sigma_pos_km == doctest::Approx(1.0e-3));       // 1.0 m
    CHECK(c.obs_sigma_vel_km_s == doctest::Approx(1.0e-5));     // 0.01 m/s
    CHECK(c.sigma_pos_km == doctest::Approx(0.1));              // 100 m
    CHECK(c.sigma_vel_km_s == doctest::Approx(1.0e-3));         // 1 m/s
    CHECK(c.u_max_km_s == doctest::Approx(0.01));               // 10 m/s
    CHECK(c.theta_max_rad == doctest::Approx(30.0 * M_PI / 180.0));
    CHECK(c.r_trigger_km == doctest::Approx(0.5));
    CHECK(c.eps_x == doctest::Approx(1e-3));
    CHECK(c.eps_u == doctest::Approx(1e-3));
    CHECK(c.gates_sigma1_km_s == doctest::Approx(1e-5));        // 1 cm/s
    CHECK(c.gates_sigma2_frac == doctest::Approx(0.01));        // 1 percent
    CHECK(c.gates_sigma4_rad == doctest::Approx(M_PI / 180.0)); // 1 deg
    CHECK(c.sigma_accel_km_s15 == doctest::Approx(1e-6));       // 1 mm/s^1.5
    CHECK(c.n_intervals == 14);
    CHECK(c.dt_s == doctest::Approx(30.0));
}

TEST_CASE("bundled nrho config round-trips its table values") {
    const auto c = load_scenario(kNrhoPath);
    CHECK(c.kind == "nrho");
    CHECK(c.mean_pos_nd[0] == doctest::Approx(1.0300));
    CHECK(c.mean_pos_nd[2] == doctest::Approx(-0.1871));
    CHECK(c.mean_vel_nd[1] == doctest::Approx(-0.1200));
    CHECK(c.tube_d_max_km == doctest::Approx(1500.0));
    CHECK(c.u_max_km_s == doctest::Approx(0.005));
    CHECK(c.n_segments() == 45);
    CHECK(c.terminal_sigma_pos_km == doctest::Approx(100.0));
    CHECK(c.terminal_sigma_vel_km_s == doctest::Approx(1e-3));
    CHECK(c.obs_placeholder);
}

TEST_CASE("config serialization round-trips to identity") {
    for (const char* path : {kCwhPath, kNrhoPath}) {
        const auto c1 = load_scenario(path);
        const std::string text = serialize_scenario(c1);
        std::istringstream is(text);
        const auto c2 = load_scenario_stream(is, "roundtrip");
        CHECK(serialize_scenario(c2) == text);
        CHECK(scenario_hash(c1) == scenario_hash(c2));
    }
}

TEST_CASE("schema errors carry the key path") {
    std::istringstream empty("");
    CHECK_THROWS_WITH_AS(load_scenario_stream(empty, "t"),
                         "missing required key: scenario.name", ConfigError);

    std::istringstream unknown(
        "[scenario]\nname = \"x\"\nkind = \"cwh\"\nbogus_key = 1.0\n");
    try {
        load_scenario_stream(unknown, "t");
        CHECK(false);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        const bool has_path = msg.find("scenario.bogus_key") != std::string::npos ||
                              msg.find("missing required key") != std::string::npos;
        CHECK(has_path);
    }

    std::istringstream dup("[a]\nk = 1\nk = 2\n");
    CHECK_THROWS_AS(cfg_detail::parse_stream(dup, "t"), ConfigError);
}

TEST_CASE("unit suffixes are enforced") {
    auto base = load_scenario(kCwhPath);
    // both _m and _km present must be rejected
    std::string text = serialize_scenario(base);
    text.replace(text.find("sigma_pos_km ="), 14, "sigma_pos_m =");
    text.insert(text.find("[gates]"), "sigma_pos_km = 0.1\n");
    std::istringstream is(text);
    CHECK_THROWS_AS(load_scenario_stream(is, "t"), ConfigError);
}

TEST_CASE("overrides reach into the parsed config") {
    const auto c = load_scenario_with_overrides(kCwhPath, {"risk.eps_x=0.1"});
    CHECK(c.eps_x == doctest::Approx(0.1));
    CHECK_THROWS_AS(load_scenario_with_overrides(kCwhPath, {"riskeps=0.1"}), ConfigError);
}

TEST_CASE("differential correction refines the published guess") {
    const auto model = DynamicsModel::cr3bp(0.012150585, 3.84748e5, 3.75700e5);
    Vec6 guess;
    guess << 1.0300, 0.0, -0.1871, 0.0, -0.1200, 0.0;
    const auto corr = differential_correct_nrho(model, guess, 1e-12);
    CHECK((corr.state - guess).norm() < 1e-3);  // refinement stays near the table
    CHECK(corr.period > 0.5);
    CHECK(corr.period < 4.0);
    // residuals decrease monotonically once Newton engages
    for (std::size_t i = 1; i < corr.residuals.size(); ++i)
        CHECK(corr.residuals[i] < corr.residuals[i - 1]);
    CHECK(corr.residuals.back() < 1e-12);

    // fixed point: feeding the refined state back converges immediately
    const auto again = differential_correct_nrho(model, corr.state, 1e-11);
    CHECK(again.iterations <= 2);
    CHECK((again.state - corr.state).norm() < 1e-10);
}

TEST_CASE("corrected orbit re-propagates five revolutions with small node drift") {
    const auto model = DynamicsModel::cr3bp(0.012150585, 3.84748e5, 3.75700e5);
    Vec6 guess;
    guess << 1.0300, 0.0, -0.1871, 0.0, -0.1200, 0.0;
    const auto corr = differential_correct_nrho(model, guess, 1e-12);
    const int nodes_per_rev = 9, revs = 5;
    const int N = nodes_per_rev * revs;
    std::vector<double> epochs(N + 1);
    for (int k = 0; k <= N; ++k) epochs[k] = corr.period / nodes_per_rev * k;
    const auto ref = propagate_reference(model, corr.state, epochs,
                                         std::vector<Vec3>(N, Vec3::Zero()),
                                         default_ode_options(model));
    double worst_km = 0.0;
    for (int k = 0; k + nodes_per_rev <= N; ++k) {
        const double drift =
            (ref.states[k + nodes_per_rev].head<3>() - ref.states[k].head<3>()).norm() *
            3.84748e5;
        worst_km = std::max(worst_km, drift);
    }
    CHECK(worst_km < 1.0);
}

TEST_CASE("cwh scenario materializes the appendix geometry") {
    const auto c = load_scenario(kCwhPath);
    const auto s = build_cwh_scenario(c);
    CHECK(static_cast<int>(s.segments.size()) == 14);
    CHECK(s.measurement_mask == std::vector<bool>(15, true));
    CHECK(s.maneuver_mask == std::vector<bool>(14, true));
    REQUIRE(s.constraints.stc.has_value());
    REQUIRE(s.constraints.du_max.has_value());
    // du_max = u_max * omega_max * dt = 10 m/s * 1 deg/s * 30 s
    CHECK(*s.constraints.du_max ==
          doctest::Approx(0.01 * (M_PI / 180.0) * 30.0).epsilon(1e-12));
    CHECK(*s.constraints.du_max == doctest::Approx(5.236e-3).epsilon(1e-4));
    // approach cone from +y: rows select x and z; tan(30 deg) on y
    const auto& cone = *s.constraints.stc;
    CHECK(cone.A_cone(0, 0) == 1.0);
    CHECK(cone.A_cone(1, 2) == 1.0);
    CHECK(cone.b_cone[1] == doctest::Approx(std::tan(30.0 * M_PI / 180.0)));
    // terminal covariance: blkdiag(sigma_rf^2 I3, sigma_vf^2 I3)
    CHECK(s.constraints.terminal->P_f(0, 0) == doctest::Approx(1e-4));  // (10 m)^2 in km^2
    CHECK(s.constraints.terminal->P_f(3, 3) == doctest::Approx(1e-8));  // (0.1 m/s)^2
    // planner inputs validate
    const auto in = s.planner_inputs();
    in.validate();
}

TEST_CASE("nondimensionalization round-trips") {
    const auto c = load_scenario(kNrhoPath);
    const double vu = c.l_star_km / c.t_star_s;
    for (double v_kms : {1e-3, 5e-3, 0.5}) {
        const double nd = v_kms / vu;
        CHECK(nd * vu == doctest::Approx(v_kms).epsilon(1e-14));
    }
    for (double d_km : {1.0, 1500.0, 3.84748e5}) {
        const double nd = d_km / c.l_star_km;
        CHECK(nd * c.l_star_km == doctest::Approx(d_km).epsilon(1e-14));
    }
}

TEST_CASE("nrho scenario materializes the station-keeping cadence") {
    const auto c = load_scenario(kNrhoPath);
    const auto s = build_nrho_scenario(c);
    CHECK(static_cast<int>(s.segments.size()) == 45);
    int maneuvers = 0;
    for (bool b : s.maneuver_mask) maneuvers += b;
    CHECK(maneuvers == 15);  // 3 opportunities per revolution
    CHECK(s.maneuver_mask[0]);
    CHECK(!s.maneuver_mask[1]);
    CHECK(s.maneuver_mask[3]);
    for (bool b : s.measurement_mask) CHECK(b);
    // node epochs evenly spaced at period / nodes_per_rev
    const double dt = s.period / 9.0;
    for (int k = 0; k < 45; ++k)
        CHECK(std::abs(s.ref.epochs[k + 1] - s.ref.epochs[k] - dt) < 1e-9);
    // tube bound in nd units
    CHECK(s.constraints.tube->d_max == doctest::Approx(1500.0 / 3.84748e5));
    // filter schedule stays PSD across all 46 nodes
    for (int k = 0; k <= 45; ++k) {
        const double tr = s.sched.P_tilde[k].trace();
        CHECK(min_eigenvalue(s.sched.P_tilde[k]) >= -1e-10 * tr);
    }
    const auto in = s.planner_inputs();
    in.validate();
}
