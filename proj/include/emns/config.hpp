#pragma once

#include "emns/sim.hpp"
#include "emns/workspace.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace emns {

using nlohmann::json;

/// Parses text, converting syntax errors into ConfigError with line and column.
inline json parse_json_text(const std::string& text, const std::string& source = "config") {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t stop = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t k = 0; k < stop; ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = e.what();
        const auto pos = what.find("]: ");
        throw ConfigError(fmt::format("malformed JSON at line {}, column {}: {}", line, col,
                                      pos == std::string::npos ? what : what.substr(pos + 3)),
                          source);
    }
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json_text(ss.str(), path);
}

/// Typed access to a JSON object with error paths and unknown-key rejection.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("expected an object", where());
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json& raw(const std::string& key) const { mark(key); return j_.at(key); }
    std::string sub(const std::string& key) const { return path_ + "/" + key; }

    double number(const std::string& key, double fallback) const {
        if (!has(key)) { mark(key); return fallback; }
        return number(key);
    }
    double number(const std::string& key) const {
        require(key);
        const json& v = raw(key);
        if (!v.is_number()) throw ConfigError("expected a number", sub(key));
        return v.get<double>();
    }
    bool boolean(const std::string& key, bool fallback) const {
        if (!has(key)) { mark(key); return fallback; }
        const json& v = raw(key);
        if (!v.is_boolean()) throw ConfigError("expected true or false", sub(key));
        return v.get<bool>();
    }
    std::string string(const std::string& key, const std::string& fallback) const {
        if (!has(key)) { mark(key); return fallback; }
        const json& v = raw(key);
        if (!v.is_string()) throw ConfigError("expected a string", sub(key));
        return v.get<std::string>();
    }
    long integer(const std::string& key, long fallback) const {
        if (!has(key)) { mark(key); return fallback; }
        const json& v = raw(key);
        if (!v.is_number_integer()) throw ConfigError("expected an integer", sub(key));
        return v.get<long>();
    }
    Vec3 vec3(const std::string& key) const {
        require(key);
        return detail::json_vec3(raw(key), sub(key));
    }
    Eigen::VectorXd vector(const std::string& key) const {
        require(key);
        const json& v = raw(key);
        if (!v.is_array()) throw ConfigError("expected an array of numbers", sub(key));
        Eigen::VectorXd out(v.size());
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (!v[k].is_number()) throw ConfigError("expected an array of numbers", sub(key));
            out(static_cast<Eigen::Index>(k)) = v[k].get<double>();
        }
        return out;
    }
    void require(const std::string& key) const {
        if (!has(key)) throw ConfigError("missing required field '" + key + "'", path_);
    }

    /// Rejects keys that were never read (catches misspelled options).
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown field '" + it.key() + "'", path_);
    }

    const std::string& where() const { return path_; }

private:
    void mark(const std::string& key) const { seen_.insert(key); }
    const json& j_;
    std::string path_;
    mutable std::set<std::string> seen_;
};

/// Model from a preset name, an inline coil object, or a coil file next to the config.
inline ActuationModel read_model(const ObjectReader& r, const std::string& base_dir) {
    if (r.has("model_file")) {
        std::filesystem::path p = r.string("model_file", "");
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        try {
            return ActuationModel::from_json(load_json_file(p.string()));
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), r.sub("model_file"));
        }
    }
    if (!r.has("model")) return ActuationModel::octomag8();
    const json& m = r.raw("model");
    if (m.is_string()) {
        try {
            return ActuationModel::preset(m.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), r.sub("model"));
        }
    }
    try {
        return ActuationModel::from_json(m);
    } catch (const ConfigError& e) {
        throw ConfigError(e.what(), r.sub("model"));
    }
}

inline PendulumParams read_plant(const ObjectReader& parent) {
    PendulumParams p;
    if (!parent.has("plant")) return p;
    ObjectReader r(parent.raw("plant"), parent.sub("plant"));
    p.M = r.number("M", p.M);
    p.ell = r.number("ell", p.ell);
    p.L = r.number("L", p.L);
    p.ell_m = r.number("ell_m", p.ell_m);
    p.eta = r.number("eta", p.eta);
    p.J = r.number("J", p.J);
    p.gravity = r.number("gravity", p.gravity);
    p.dipole_magnitude = r.number("dipole_magnitude", p.dipole_magnitude);
    p.damping = r.number("damping", p.damping);
    p.actuator_only = r.boolean("actuator_only", p.actuator_only);
    r.finish();
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.what());
    }
    return p;
}

inline PendulumState read_plane(const ObjectReader& r, const char* angle, const char* link) {
    PendulumState s;
    s.alpha = deg2rad(r.number(std::string(angle) + "_deg", 0.0));
    s.phi = deg2rad(r.number(std::string(link) + "_deg", 0.0));
    s.alpha_dot = r.number(std::string(angle) + "_dot", 0.0);
    s.phi_dot = r.number(std::string(link) + "_dot", 0.0);
    return s;
}

inline Scenario scenario_from_json(const json& j, const std::string& base_dir = ".") {
    ObjectReader r(j, "");
    Scenario sc;
    sc.name = r.string("name", "scenario");
    sc.model = read_model(r, base_dir);
    sc.params = read_plant(r);
    sc.emns = sc.model.name() == "navion3" ? EmnsConfig::navion() : EmnsConfig::octomag();
    if (r.has("emns")) {
        ObjectReader e(r.raw("emns"), "/emns");
        sc.emns.control_rate = e.number("control_rate", sc.emns.control_rate);
        sc.emns.current_limit = e.number("current_limit", sc.emns.current_limit);
        sc.emns.current_bandwidth = e.number("current_bandwidth", sc.emns.current_bandwidth);
        sc.emns.loop_latency = e.number("loop_latency", sc.emns.loop_latency);
        e.finish();
    }
    try {
        sc.paradigm = parse_paradigm(r.string("paradigm", "torque"));
    } catch (const ConfigError& e) {
        throw ConfigError(e.what());
    }
    sc.field_magnitude = r.number("field_magnitude", sc.field_magnitude);

    const int states = sc.params.state_size();
    ControllerConfig& c = sc.controller;
    c.r_weight = sc.paradigm == Paradigm::torque ? 1000.0 : 50.0;
    if (states == 2) c.q_diag = (Eigen::VectorXd(2) << 20.0, 1.0).finished();
    if (r.has("controller")) {
        ObjectReader cr(r.raw("controller"), "/controller");
        if (cr.has("q_diag")) c.q_diag = cr.vector("q_diag");
        c.r_weight = cr.number("r_weight", c.r_weight);
        if (cr.has("k_i")) c.k_i = cr.number("k_i");
        c.integral_weight = cr.number("integral_weight", c.integral_weight);
        c.integral_enabled = cr.boolean("integral_enabled", c.integral_enabled);
        c.integral_limit = cr.number("integral_limit", c.integral_limit);
        c.velocity_cutoff_hz = cr.number("velocity_cutoff_hz", c.velocity_cutoff_hz);
        c.feedback = cr.boolean("feedback", c.feedback);
        if (cr.has("gain")) c.gain = cr.vector("gain").transpose();
        cr.finish();
    }
    c.validate(states);

    sc.duration = r.number("duration", sc.duration);
    const long seed = r.integer("seed", 1);
    if (seed < 0) throw ConfigError("seed must be non-negative", "/seed");
    sc.seed = static_cast<std::uint64_t>(seed);
    sc.noise_std = deg2rad(r.number("noise_std_deg", 0.0));
    sc.plant_dt = r.number("plant_dt", sc.plant_dt);
    sc.planar = r.boolean("planar", false);
    sc.divergence_limit = deg2rad(r.number("divergence_limit_deg", rad2deg(sc.divergence_limit)));

    sc.agents.clear();
    r.require("agents");
    const json& agents = r.raw("agents");
    if (!agents.is_array() || agents.empty()) throw ConfigError("expected a non-empty array", "/agents");
    for (std::size_t k = 0; k < agents.size(); ++k) {
        const std::string path = "/agents/" + std::to_string(k);
        ObjectReader a(agents[k], path);
        AgentSpec spec;
        spec.position = a.has("position") ? a.vec3("position") : Vec3::Zero();
        const long pol = a.integer("polarity", 1);
        if (pol != 1 && pol != -1) throw ConfigError("polarity must be 1 or -1", a.sub("polarity"));
        spec.polarity = static_cast<int>(pol);
        if (a.has("initial")) {
            ObjectReader in(a.raw("initial"), a.sub("initial"));
            spec.alpha_plane = read_plane(in, "alpha", "phi");
            spec.beta_plane = read_plane(in, "beta", "theta");
            in.finish();
        }
        if (a.has("setpoint")) {
            ObjectReader sp(a.raw("setpoint"), a.sub("setpoint"));
            spec.setpoint.alpha = deg2rad(sp.number("alpha_deg", 0.0));
            spec.setpoint.beta = deg2rad(sp.number("beta_deg", 0.0));
            spec.setpoint.radius = deg2rad(sp.number("radius_deg", 0.0));
            spec.setpoint.frequency = sp.number("frequency", 0.0);
            spec.setpoint.phase = deg2rad(sp.number("phase_deg", 0.0));
            sp.finish();
            if (spec.setpoint.radius < 0.0 || spec.setpoint.frequency < 0.0)
                throw ConfigError("radius and frequency must be non-negative", a.sub("setpoint"));
        }
        if (a.has("integral")) {
            ObjectReader in(a.raw("integral"), a.sub("integral"));
            if (in.has("windows")) {
                const json& w = in.raw("windows");
                if (!w.is_array()) throw ConfigError("expected an array of [start, end] pairs", in.sub("windows"));
                std::vector<std::pair<double, double>> ws;
                for (const auto& e : w) {
                    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
                        throw ConfigError("expected an array of [start, end] pairs", in.sub("windows"));
                    ws.emplace_back(e[0].get<double>(), e[1].get<double>());
                }
                try {
                    spec.integral = IntegralSchedule(std::move(ws));
                } catch (const ConfigError& e) {
                    throw ConfigError(e.what(), in.sub("windows"));
                }
            }
            spec.warm_start_alpha = in.number("warm_start_alpha", 0.0);
            spec.warm_start_beta = in.number("warm_start_beta", 0.0);
            in.finish();
        }
        if (a.has("move_to")) spec.move_to = a.vec3("move_to");
        spec.release_time = a.number("release_time", 0.0);
        a.finish();
        sc.agents.push_back(spec);
    }

    const bool multi = sc.agents.size() == 2;
    const std::string default_strategy = sc.paradigm == Paradigm::field ? (multi ? "multi_field" : "field_alignment")
                                                                        : (multi ? "multi_torque" : "torque_one_step");
    sc.strategy = parse_strategy(r.string("strategy", default_strategy));

    if (r.has("disturbances")) {
        const json& ds = r.raw("disturbances");
        if (!ds.is_array()) throw ConfigError("expected an array", "/disturbances");
        for (std::size_t k = 0; k < ds.size(); ++k) {
            ObjectReader d(ds[k], "/disturbances/" + std::to_string(k));
            Disturbance ev;
            const std::string type = d.string("type", "");
            if (type == "impulse") ev.kind = Disturbance::Kind::impulse;
            else if (type == "bias") ev.kind = Disturbance::Kind::bias;
            else if (type == "tilt") ev.kind = Disturbance::Kind::tilt;
            else throw ConfigError("type must be impulse, bias or tilt", d.sub("type"));
            ev.agent = static_cast<int>(d.integer("agent", 0));
            const std::string ch = d.string("channel", "alpha");
            if (ch == "alpha") ev.channel = Channel::alpha;
            else if (ch == "beta") ev.channel = Channel::beta;
            else throw ConfigError("channel must be alpha or beta", d.sub("channel"));
            ev.time = d.number("time", 0.0);
            ev.end_time = d.number("end_time", ev.end_time);
            d.require("value");
            ev.value = d.number("value");
            d.finish();
            sc.disturbances.push_back(ev);
        }
    }

    if (r.has("metrics")) {
        ObjectReader m(r.raw("metrics"), "/metrics");
        sc.metrics.settle_threshold = deg2rad(m.number("settle_threshold_deg", rad2deg(sc.metrics.settle_threshold)));
        sc.metrics.steady_window = m.number("steady_window", sc.metrics.steady_window);
        sc.metrics.tracking_start = m.number("tracking_start", sc.metrics.tracking_start);
        m.finish();
    }
    r.finish();
    sc.validate();
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    const std::string dir = std::filesystem::path(path).parent_path().string();
    return scenario_from_json(load_json_file(path), dir.empty() ? "." : dir);
}

struct AllocBenchConfig {
    ActuationModel model = ActuationModel::octomag8();
    PendulumParams params;
    long samples = 1000;
    std::uint64_t seed = 42;
    Vec3 box_min = Vec3::Constant(-0.05);
    Vec3 box_max = Vec3::Constant(0.05);
    double max_tilt = deg2rad(30.0);
    double tau_max = 0.01;
};

inline AllocBenchConfig alloc_bench_from_json(const json& j, const std::string& base_dir = ".") {
    ObjectReader r(j, "");
    AllocBenchConfig c;
    r.string("name", "");
    c.model = read_model(r, base_dir);
    c.params = read_plant(r);
    c.samples = r.integer("samples", c.samples);
    if (c.samples < 1) throw ConfigError("samples must be at least 1", "/samples");
    const long seed = r.integer("seed", 42);
    if (seed < 0) throw ConfigError("seed must be non-negative", "/seed");
    c.seed = static_cast<std::uint64_t>(seed);
    if (r.has("position_box")) {
        ObjectReader b(r.raw("position_box"), "/position_box");
        c.box_min = b.vec3("min");
        c.box_max = b.vec3("max");
        b.finish();
        if ((c.box_max - c.box_min).minCoeff() < 0.0) throw ConfigError("box max below min", "/position_box");
    }
    c.max_tilt = deg2rad(r.number("max_tilt_deg", rad2deg(c.max_tilt)));
    c.tau_max = r.number("tau_max", c.tau_max);
    if (!(c.tau_max > 0.0)) throw ConfigError("tau_max must be positive", "/tau_max");
    r.finish();
    return c;
}

struct WorkspaceConfig {
    std::string name = "workspace";
    ActuationModel model = ActuationModel::octomag8();
    PendulumParams params;
    GridSpec grid;
    double current_limit = 16.0;
    WorkspaceOptions options;
    std::vector<TaskSet> tasks;
};

inline WorkspaceConfig workspace_from_json(const json& j, const std::string& base_dir = ".") {
    ObjectReader r(j, "");
    WorkspaceConfig c;
    c.name = r.string("name", c.name);
    c.model = read_model(r, base_dir);
    c.params = read_plant(r);
    c.current_limit = r.number("current_limit", c.model.name() == "navion3" ? 25.0 : 16.0);
    if (!(c.current_limit > 0.0)) throw ConfigError("current_limit must be positive", "/current_limit");
    r.require("grid");
    {
        ObjectReader g(r.raw("grid"), "/grid");
        c.grid.min = g.vec3("min");
        c.grid.max = g.vec3("max");
        c.grid.spacing = g.number("spacing", c.grid.spacing);
        g.finish();
        c.grid.validate();
    }
    if (r.has("orientation")) {
        ObjectReader o(r.raw("orientation"), "/orientation");
        c.options.alpha = deg2rad(o.number("alpha_deg", 0.0));
        c.options.beta = deg2rad(o.number("beta_deg", 0.0));
        o.finish();
    }
    if (r.has("second_agent")) c.options.second_agent = r.vec3("second_agent");
    r.require("tasks");
    const json& ts = r.raw("tasks");
    if (!ts.is_array() || ts.empty()) throw ConfigError("expected a non-empty array", "/tasks");
    for (std::size_t k = 0; k < ts.size(); ++k) {
        ObjectReader t(ts[k], "/tasks/" + std::to_string(k));
        const std::string kind = t.string("kind", "");
        TaskSet task;
        if (kind == "torque_box") {
            task = TaskSet::torque_box(t.number("tau_bar", 0.01));
        } else if (kind == "fixed_field") {
            task = TaskSet::fixed_field(t.number("field_magnitude"));
        } else {
            throw ConfigError("kind must be torque_box or fixed_field", t.sub("kind"));
        }
        t.finish();
        try {
            task.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), t.where());
        }
        for (const auto& prev : c.tasks)
            if (prev.kind == task.kind) throw ConfigError("duplicate task kind", t.where());
        c.tasks.push_back(task);
    }
    for (const auto& task : c.tasks)
        if (task.kind == TaskSet::Kind::torque_box)
            c.options.near_contact_radius = interaction_radius(c.params.dipole_magnitude, task.tau_bar);
    r.finish();
    return c;
}

}  // namespace emns
