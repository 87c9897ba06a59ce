#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ccorbit/core.hpp"

namespace ccorbit {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace cfg_detail {

using Value = std::variant<double, bool, std::string, std::vector<double>>;

struct Parsed {
    // section -> key -> value, plus consumption tracking for strict schemas
    std::map<std::string, std::map<std::string, Value>> sections;
    mutable std::set<std::string> consumed;

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key) > 0;
    }
    const Value& get(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        if (s == sections.end() || !s->second.count(key))
            throw ConfigError("missing required key: " + sec + "." + key);
        consumed.insert(sec + "." + key);
        return s->second.at(key);
    }
    template <class T>
    T as(const std::string& sec, const std::string& key) const {
        const Value& v = get(sec, key);
        if (!std::holds_alternative<T>(v))
            throw ConfigError("wrong value type for key: " + sec + "." + key);
        return std::get<T>(v);
    }
    double number(const std::string& sec, const std::string& key) const {
        return as<double>(sec, key);
    }
    double number_or(const std::string& sec, const std::string& key, double dflt) const {
        return has(sec, key) ? number(sec, key) : dflt;
    }
    bool flag_or(const std::string& sec, const std::string& key, bool dflt) const {
        return has(sec, key) ? as<bool>(sec, key) : dflt;
    }
    std::string str(const std::string& sec, const std::string& key) const {
        return as<std::string>(sec, key);
    }
    std::string str_or(const std::string& sec, const std::string& key,
                       const std::string& dflt) const {
        return has(sec, key) ? str(sec, key) : dflt;
    }
    Vec3 vec3(const std::string& sec, const std::string& key) const {
        const auto v = as<std::vector<double>>(sec, key);
        if (v.size() != 3) throw ConfigError("expected 3 elements: " + sec + "." + key);
        return Vec3(v[0], v[1], v[2]);
    }
    void check_all_consumed() const {
        for (const auto& [sec, kv] : sections)
            for (const auto& [key, v] : kv)
                if (!consumed.count(sec + "." + key))
                    throw ConfigError("unknown key: " + sec + "." + key);
    }
};

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline Value parse_value(const std::string& raw, const std::string& where) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("empty value at " + where);
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') throw ConfigError("unterminated string at " + where);
        return v.substr(1, v.size() - 2);
    }
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError("unterminated array at " + where);
        std::vector<double> arr;
        std::string body = v.substr(1, v.size() - 2);
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            std::size_t pos = 0;
            const double d = std::stod(item, &pos);
            if (pos != item.size()) throw ConfigError("bad array element at " + where);
            arr.push_back(d);
        }
        return arr;
    }
    std::size_t pos = 0;
    double d = 0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("bad number at " + where);
    }
    if (pos != v.size()) throw ConfigError("trailing characters at " + where);
    return d;
}

inline Parsed parse_stream(std::istream& is, const std::string& origin) {
    Parsed out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("bad section header at " + where);
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError("empty section name at " + where);
            out.sections[section];  // allow empty sections
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value at " + where);
        const std::string key = trim(line.substr(0, eq));
        if (key.empty() || section.empty())
            throw ConfigError("key outside a section at " + where);
        if (out.sections[section].count(key))
            throw ConfigError("duplicate key: " + section + "." + key);
        out.sections[section][key] = parse_value(line.substr(eq + 1), where);
    }
    return out;
}

}  // namespace cfg_detail

/// Fully validated scenario description in canonical units (km, s, rad; the
/// NRHO initial state itself is nondimensional as printed in its tables).
struct ScenarioConfig {
    std::string name;
    std::string kind;      // "cwh" | "nrho"
    std::string control = "impulsive";

    // dynamics
    double mu_km3_s2 = 0;        // cwh
    double chief_radius_km = 0;  // cwh
    double mass_ratio = 0;       // nrho
    double l_star_km = 0;        // nrho
    double t_star_s = 0;         // nrho

    // horizon
    int n_intervals = 0;   // cwh
    double dt_s = 0;       // cwh
    int revolutions = 0;   // nrho
    int nodes_per_rev = 0; // nrho
    int maneuver_every = 1;
    int measure_every = 1;

    // initial state and uncertainty
    Vec3 mean_pos_km = Vec3::Zero(), mean_vel_km_s = Vec3::Zero();  // cwh
    Vec3 mean_pos_nd = Vec3::Zero(), mean_vel_nd = Vec3::Zero();    // nrho
    double sigma_pos_km = 0, sigma_vel_km_s = 0;                    // dispersion
    double est_sigma_pos_km = 0, est_sigma_vel_km_s = 0;            // estimation error

    // gates execution error (canonical: km/s, fraction, km/s, rad)
    double gates_sigma1_km_s = 0, gates_sigma2_frac = 0;
    double gates_sigma3_km_s = 0, gates_sigma4_rad = 0;

    double sigma_accel_km_s15 = 0;  // stochastic acceleration, km / s^1.5

    // observation (full-state pseudo-measurement)
    double obs_sigma_pos_km = 0, obs_sigma_vel_km_s = 0;
    bool obs_placeholder = false;  // true when the values stand in for real OpNav

    // constraints
    double u_max_km_s = 0;
    double omega_max_rad_s = 0;    // 0: no rate constraint
    Vec3 target_pos_km = Vec3::Zero(), target_vel_km_s = Vec3::Zero();  // cwh
    double terminal_sigma_pos_km = 0, terminal_sigma_vel_km_s = 0;
    double tube_d_max_km = 0;      // 0: no tube
    bool stc_enabled = false;
    double theta_max_rad = 0;
    double r_trigger_km = 0;
    std::string approach_axis = "+y";
    std::vector<double> hyperplanes;  // flattened rows of (a[6], b), working units

    // risk
    double eps_x = 1e-3, eps_u = 1e-3, quantile_p = 0.99;

    // solver / scp
    double solver_feastol = 1e-8, solver_abstol = 1e-8, solver_reltol = 1e-8;
    int solver_max_iters = 200;
    double scp_eps_tol = 1e-3;
    int scp_max_iter = 15;
    double scp_penalty_weight = 0;

    // monte carlo
    int mc_samples = 1000;
    std::uint64_t mc_seed = 0;
    std::string mc_mode = "linear";
    int mc_em_substeps = 10;
    double mc_impact_radius_km = 0;

    // nrho differential correction
    double correction_tol = 1e-12;

    void validate() const {
        if (kind != "cwh" && kind != "nrho") throw ConfigError("scenario.kind must be cwh|nrho");
        if (control != "impulsive" && control != "zoh")
            throw ConfigError("scenario.control must be impulsive|zoh");
        if (kind == "cwh") {
            if (mu_km3_s2 <= 0 || chief_radius_km <= 0)
                throw ConfigError("dynamics: cwh needs mu_km3_s2 and chief_radius_km > 0");
            if (n_intervals < 1 || dt_s <= 0)
                throw ConfigError("horizon: cwh needs n_intervals >= 1 and dt_s > 0");
        } else {
            if (!(mass_ratio > 0 && mass_ratio < 1))
                throw ConfigError("dynamics.mass_ratio must be in (0,1)");
            if (l_star_km <= 0 || t_star_s <= 0)
                throw ConfigError("dynamics: l_star_km and t_star_s must be positive");
            if (revolutions < 1 || nodes_per_rev < 1)
                throw ConfigError("horizon: revolutions and nodes_per_rev must be >= 1");
        }
        if (maneuver_every < 1 || measure_every < 1)
            throw ConfigError("horizon: cadence keys must be >= 1");
        if (u_max_km_s < 0 || tube_d_max_km < 0) throw ConfigError("constraints: negative bound");
        if (!(eps_x > 0 && eps_x < 0.5 && eps_u > 0 && eps_u < 0.5))
            throw ConfigError("risk: eps_x/eps_u must be in (0, 0.5)");
        if (!(quantile_p > 0.5 && quantile_p < 1.0))
            throw ConfigError("risk.quantile_p must be in (0.5, 1)");
        if (mc_samples < 2) throw ConfigError("mc.n_samples must be >= 2");
        if (hyperplanes.size() % 7 != 0)
            throw ConfigError("constraints.hyperplanes must be rows of 7 values");
        if (stc_enabled) {
            if (!(theta_max_rad > 0 && theta_max_rad < M_PI / 2))
                throw ConfigError("stc.theta_max_deg must be in (0, 90)");
            if (r_trigger_km <= 0) throw ConfigError("stc.r_trigger_km must be positive");
            if (approach_axis.size() != 2 ||
                (approach_axis[0] != '+' && approach_axis[0] != '-') ||
                (approach_axis[1] != 'x' && approach_axis[1] != 'y' && approach_axis[1] != 'z'))
                throw ConfigError("stc.approach_axis must be one of +x,-x,+y,-y,+z,-z");
        }
    }

    int n_segments() const {
        return kind == "cwh" ? n_intervals : revolutions * nodes_per_rev;
    }
};

namespace cfg_detail {

/// length value with an explicit unit suffix: key_m or key_km (exactly one)
inline double length_km(const Parsed& p, const std::string& sec, const std::string& base) {
    const bool has_m = p.has(sec, base + "_m");
    const bool has_km = p.has(sec, base + "_km");
    if (has_m == has_km)
        throw ConfigError("need exactly one of " + sec + "." + base + "_m or _km");
    return has_m ? p.number(sec, base + "_m") * 1e-3 : p.number(sec, base + "_km");
}

/// velocity value with unit suffix: key_m_s, key_cm_s, or key_km_s
inline double velocity_km_s(const Parsed& p, const std::string& sec, const std::string& base) {
    const char* sfx[] = {"_m_s", "_cm_s", "_km_s"};
    const double scale[] = {1e-3, 1e-5, 1.0};
    int found = -1;
    for (int i = 0; i < 3; ++i)
        if (p.has(sec, base + sfx[i])) {
            if (found >= 0) throw ConfigError("duplicate unit variants for " + sec + "." + base);
            found = i;
        }
    if (found < 0) throw ConfigError("missing required key: " + sec + "." + base + "_[m_s]");
    return p.number(sec, base + sfx[found]) * scale[found];
}

}  // namespace cfg_detail

inline ScenarioConfig load_scenario_stream(std::istream& is, const std::string& origin) {
    using namespace cfg_detail;
    const Parsed p = parse_stream(is, origin);
    ScenarioConfig c;
    c.name = p.str("scenario", "name");
    c.kind = p.str("scenario", "kind");
    c.control = p.str_or("scenario", "control", "impulsive");

    if (c.kind == "cwh") {
        c.mu_km3_s2 = p.number("dynamics", "mu_km3_s2");
        c.chief_radius_km = p.number("dynamics", "chief_radius_km");
        c.n_intervals = static_cast<int>(p.number("horizon", "n_intervals"));
        c.dt_s = p.number("horizon", "dt_s");
        c.mean_pos_km = p.vec3("initial", "mean_pos_km");
        c.mean_vel_km_s = p.vec3("initial", "mean_vel_km_s");
        c.target_pos_km = p.vec3("constraints", "target_pos_km");
        c.target_vel_km_s = p.vec3("constraints", "target_vel_km_s");
    } else if (c.kind == "nrho") {
        c.mass_ratio = p.number("dynamics", "mass_ratio");
        c.l_star_km = p.number("dynamics", "l_star_km");
        c.t_star_s = p.number("dynamics", "t_star_s");
        c.revolutions = static_cast<int>(p.number("horizon", "revolutions"));
        c.nodes_per_rev = static_cast<int>(p.number("horizon", "nodes_per_rev"));
        c.mean_pos_nd = p.vec3("initial", "mean_pos_nd");
        c.mean_vel_nd = p.vec3("initial", "mean_vel_nd");
        c.correction_tol = p.number_or("correction", "tol", 1e-12);
    } else {
        throw ConfigError("scenario.kind must be cwh|nrho");
    }
    c.maneuver_every = static_cast<int>(p.number_or("horizon", "maneuver_every", 1));
    c.measure_every = static_cast<int>(p.number_or("horizon", "measure_every", 1));

    c.sigma_pos_km = length_km(p, "initial", "sigma_pos");
    c.sigma_vel_km_s = velocity_km_s(p, "initial", "sigma_vel");
    c.est_sigma_pos_km = length_km(p, "initial", "est_sigma_pos");
    c.est_sigma_vel_km_s = velocity_km_s(p, "initial", "est_sigma_vel");

    c.gates_sigma1_km_s = velocity_km_s(p, "gates", "sigma1_fixed_mag");
    c.gates_sigma2_frac = p.number("gates", "sigma2_prop_mag_percent") * 1e-2;
    c.gates_sigma3_km_s = velocity_km_s(p, "gates", "sigma3_fixed_point");
    c.gates_sigma4_rad = p.number("gates", "sigma4_prop_point_deg") * M_PI / 180.0;

    c.sigma_accel_km_s15 = p.number("process_noise", "sigma_accel_mm_s15") * 1e-6;

    c.obs_sigma_pos_km = length_km(p, "observation", "sigma_pos");
    c.obs_sigma_vel_km_s = velocity_km_s(p, "observation", "sigma_vel");
    c.obs_placeholder = p.flag_or("observation", "placeholder", false);

    c.u_max_km_s = velocity_km_s(p, "constraints", "u_max");
    if (p.has("constraints", "omega_max_deg_s"))
        c.omega_max_rad_s = p.number("constraints", "omega_max_deg_s") * M_PI / 180.0;
    c.terminal_sigma_pos_km = length_km(p, "constraints", "terminal_sigma_pos");
    c.terminal_sigma_vel_km_s = velocity_km_s(p, "constraints", "terminal_sigma_vel");
    if (p.has("constraints", "tube_d_max_km"))
        c.tube_d_max_km = p.number("constraints", "tube_d_max_km");
    if (p.has("constraints", "hyperplanes"))
        c.hyperplanes = p.as<std::vector<double>>("constraints", "hyperplanes");

    c.stc_enabled = p.flag_or("stc", "enabled", false);
    if (c.stc_enabled) {
        c.theta_max_rad = p.number("stc", "theta_max_deg") * M_PI / 180.0;
        c.r_trigger_km = p.number("stc", "r_trigger_km");
        c.approach_axis = p.str_or("stc", "approach_axis", "+y");
    }

    c.eps_x = p.number("risk", "eps_x");
    c.eps_u = p.number("risk", "eps_u");
    c.quantile_p = p.number_or("risk", "quantile_p", 0.99);

    c.solver_feastol = p.number_or("solver", "feastol", 1e-8);
    c.solver_abstol = p.number_or("solver", "abstol", 1e-8);
    c.solver_reltol = p.number_or("solver", "reltol", 1e-8);
    c.solver_max_iters = static_cast<int>(p.number_or("solver", "max_iters", 200));
    c.scp_eps_tol = p.number_or("scp", "eps_tol", 1e-3);
    c.scp_max_iter = static_cast<int>(p.number_or("scp", "max_iter", 15));
    c.scp_penalty_weight = p.number_or("scp", "penalty_weight", 0.0);

    c.mc_samples = static_cast<int>(p.number_or("mc", "n_samples", 1000));
    c.mc_seed = static_cast<std::uint64_t>(p.number_or("mc", "seed", 0));
    c.mc_mode = p.str_or("mc", "mode", "linear");
    c.mc_em_substeps = static_cast<int>(p.number_or("mc", "em_substeps", 10));
    c.mc_impact_radius_km = p.number_or("mc", "impact_radius_km", 0.0);

    p.check_all_consumed();
    c.validate();
    return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open scenario file: " + path);
    return load_scenario_stream(f, path);
}

/// Serialize with full precision using the same suffix conventions the loader
/// expects, so load -> save -> load is the identity.
inline std::string serialize_scenario(const ScenarioConfig& c) {
    std::ostringstream os;
    os.precision(17);
    auto vec = [&](const Vec3& v) {
        std::ostringstream s;
        s.precision(17);
        s << "[" << v[0] << ", " << v[1] << ", " << v[2] << "]";
        return s.str();
    };
    os << "[scenario]\n";
    os << "name = \"" << c.name << "\"\n";
    os << "kind = \"" << c.kind << "\"\n";
    os << "control = \"" << c.control << "\"\n\n";
    os << "[dynamics]\n";
    if (c.kind == "cwh") {
        os << "mu_km3_s2 = " << c.mu_km3_s2 << "\n";
        os << "chief_radius_km = " << c.chief_radius_km << "\n";
    } else {
        os << "mass_ratio = " << c.mass_ratio << "\n";
        os << "l_star_km = " << c.l_star_km << "\n";
        os << "t_star_s = " << c.t_star_s << "\n";
    }
    os << "\n[horizon]\n";
    if (c.kind == "cwh") {
        os << "n_intervals = " << c.n_intervals << "\n";
        os << "dt_s = " << c.dt_s << "\n";
    } else {
        os << "revolutions = " << c.revolutions << "\n";
        os << "nodes_per_rev = " << c.nodes_per_rev << "\n";
    }
    os << "maneuver_every = " << c.maneuver_every << "\n";
    os << "measure_every = " << c.measure_every << "\n";
    os << "\n[initial]\n";
    if (c.kind == "cwh") {
        os << "mean_pos_km = " << vec(c.mean_pos_km) << "\n";
        os << "mean_vel_km_s = " << vec(c.mean_vel_km_s) << "\n";
    } else {
        os << "mean_pos_nd = " << vec(c.mean_pos_nd) << "\n";
        os << "mean_vel_nd = " << vec(c.mean_vel_nd) << "\n";
    }
    os << "sigma_pos_km = " << c.sigma_pos_km << "\n";
    os << "sigma_vel_km_s = " << c.sigma_vel_km_s << "\n";
    os << "est_sigma_pos_km = " << c.est_sigma_pos_km << "\n";
    os << "est_sigma_vel_km_s = " << c.est_sigma_vel_km_s << "\n";
    os << "\n[gates]\n";
    os << "sigma1_fixed_mag_km_s = " << c.gates_sigma1_km_s << "\n";
    os << "sigma2_prop_mag_percent = " << c.gates_sigma2_frac * 1e2 << "\n";
    os << "sigma3_fixed_point_km_s = " << c.gates_sigma3_km_s << "\n";
    os << "sigma4_prop_point_deg = " << c.gates_sigma4_rad * 180.0 / M_PI << "\n";
    os << "\n[process_noise]\n";
    os << "sigma_accel_mm_s15 = " << c.sigma_accel_km_s15 * 1e6 << "\n";
    os << "\n[observation]\n";
    os << "sigma_pos_km = " << c.obs_sigma_pos_km << "\n";
    os << "sigma_vel_km_s = " << c.obs_sigma_vel_km_s << "\n";
    os << "placeholder = " << (c.obs_placeholder ? "true" : "false") << "\n";
    os << "\n[constraints]\n";
    os << "u_max_km_s = " << c.u_max_km_s << "\n";
    if (c.omega_max_rad_s > 0)
        os << "omega_max_deg_s = " << c.omega_max_rad_s * 180.0 / M_PI << "\n";
    if (c.kind == "cwh") {
        os << "target_pos_km = " << vec(c.target_pos_km) << "\n";
        os << "target_vel_km_s = " << vec(c.target_vel_km_s) << "\n";
    }
    os << "terminal_sigma_pos_km = " << c.terminal_sigma_pos_km << "\n";
    os << "terminal_sigma_vel_km_s = " << c.terminal_sigma_vel_km_s << "\n";
    if (c.tube_d_max_km > 0) os << "tube_d_max_km = " << c.tube_d_max_km << "\n";
    if (!c.hyperplanes.empty()) {
        os << "hyperplanes = [";
        for (std::size_t i = 0; i < c.hyperplanes.size(); ++i)
            os << (i ? ", " : "") << c.hyperplanes[i];
        os << "]\n";
    }
    os << "\n[stc]\n";
    os << "enabled = " << (c.stc_enabled ? "true" : "false") << "\n";
    if (c.stc_enabled) {
        os << "theta_max_deg = " << c.theta_max_rad * 180.0 / M_PI << "\n";
        os << "r_trigger_km = " << c.r_trigger_km << "\n";
        os << "approach_axis = \"" << c.approach_axis << "\"\n";
    }
    os << "\n[risk]\n";
    os << "eps_x = " << c.eps_x << "\n";
    os << "eps_u = " << c.eps_u << "\n";
    os << "quantile_p = " << c.quantile_p << "\n";
    os << "\n[solver]\n";
    os << "feastol = " << c.solver_feastol << "\n";
    os << "abstol = " << c.solver_abstol << "\n";
    os << "reltol = " << c.solver_reltol << "\n";
    os << "max_iters = " << c.solver_max_iters << "\n";
    os << "\n[scp]\n";
    os << "eps_tol = " << c.scp_eps_tol << "\n";
    os << "max_iter = " << c.scp_max_iter << "\n";
    os << "penalty_weight = " << c.scp_penalty_weight << "\n";
    os << "\n[mc]\n";
    os << "n_samples = " << c.mc_samples << "\n";
    os << "seed = " << static_cast<double>(c.mc_seed) << "\n";
    os << "mode = \"" << c.mc_mode << "\"\n";
    os << "em_substeps = " << c.mc_em_substeps << "\n";
    os << "impact_radius_km = " << c.mc_impact_radius_km << "\n";
    if (c.kind == "nrho") {
        os << "\n[correction]\n";
        os << "tol = " << c.correction_tol << "\n";
    }
    return os.str();
}

inline void save_scenario(const ScenarioConfig& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write scenario file: " + path);
    f << serialize_scenario(c);
}

/// FNV-1a hash of the canonical serialization; identifies the exact parsed
/// configuration in manifests and artifact cross-checks.
inline std::uint64_t scenario_hash(const ScenarioConfig& c) {
    const std::string s = serialize_scenario(c);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Apply a "section.key=value" override to a raw config text (used by the CLI
/// --set flag before parsing).
inline void apply_override(cfg_detail::Parsed& parsed, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be section.key=value");
    const std::string path = cfg_detail::trim(spec.substr(0, eq));
    const auto dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError("override must be section.key=value");
    parsed.sections[path.substr(0, dot)][path.substr(dot + 1)] =
        cfg_detail::parse_value(spec.substr(eq + 1), "override " + spec);
}

inline ScenarioConfig load_scenario_with_overrides(const std::string& path,
                                                   const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open scenario file: " + path);
    auto parsed = cfg_detail::parse_stream(f, path);
    for (const auto& ov : overrides) apply_override(parsed, ov);
    // Re-serialize through a stream so the strict-schema path stays identical.
    std::ostringstream os;
    for (const auto& [sec, kv] : parsed.sections) {
        os << "[" << sec << "]\n";
        for (const auto& [key, val] : kv) {
            os << key << " = ";
            if (std::holds_alternative<double>(val)) {
                os.precision(17);
                os << std::get<double>(val);
            } else if (std::holds_alternative<bool>(val)) {
                os << (std::get<bool>(val) ? "true" : "false");
            } else if (std::holds_alternative<std::string>(val)) {
                os << '"' << std::get<std::string>(val) << '"';
            } else {
                const auto& arr = std::get<std::vector<double>>(val);
                os << "[";
                for (std::size_t i = 0; i < arr.size(); ++i) os << (i ? ", " : "") << arr[i];
                os << "]";
            }
            os << "\n";
        }
    }
    std::istringstream is(os.str());
    return load_scenario_stream(is, path + "+overrides");
}

}  // namespace ccorbit
