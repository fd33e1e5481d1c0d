#pragma once

#include "emns/alloc.hpp"
#include "emns/config.hpp"
#include "emns/report.hpp"
#include "emns/sim.hpp"
#include "emns/workspace.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace emns {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2 };

struct RunConfig {
    std::string command;
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int workers = 1;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_output(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    return f;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    auto f = open_output(path);
    const std::string text = j.dump(2) + "\n";
    std::fwrite(text.data(), 1, text.size(), f.get());
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
    return dir;
}

inline std::string config_dir(const std::string& path) {
    const std::string d = std::filesystem::path(path).parent_path().string();
    return d.empty() ? "." : d;
}

}  // namespace detail

/// Runs one scenario, writing trace.csv and summary.json.
inline int cmd_simulate(const RunConfig& rc, std::ostream& log) {
    Scenario sc;
    std::filesystem::path out;
    try {
        sc = load_scenario(rc.config_path);
        if (rc.seed) sc.seed = *rc.seed;
        out = detail::prepare_out_dir(rc.out_dir);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    SimTrace tr;
    try {
        tr = sc.agents.size() == 2 ? run_multi_agent(sc) : run_scenario(sc);
    } catch (const SynthesisError& e) {
        nlohmann::json fail = {{"name", sc.name}, {"status", "synthesis_failure"}, {"message", e.what()}};
        detail::write_json(out / "summary.json", fail);
        log << "synthesis failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    {
        auto f = detail::open_output(out / "trace.csv");
        write_trace_csv(tr, f.get());
    }
    const nlohmann::json summary = summary_json(sc, tr);
    detail::write_json(out / "summary.json", summary);
    if (!tr.ok()) {
        log << fmt::format("{} at t = {:.4f} s: {}\n", tr.status, tr.failure_time, tr.message);
        return kExitNumerical;
    }
    log << fmt::format("{}: ok, max |i| = {:.4g} A, steady-state max |i| = {:.4g} A\n", sc.name,
                       summary["max_abs_current"].get<double>(),
                       summary["steady_state_max_abs_current"].get<double>());
    return kExitOk;
}

struct AllocBenchRow {
    long sample = 0;
    Vec3 p;
    double alpha = 0.0, beta = 0.0, tau_x = 0.0, tau_y = 0.0;
    double norm_one_step = 0.0, norm_two_step = 0.0, norm_pivot_one_step = 0.0;
    double norm_twostep_jm = 0.0, norm_twostep_ma = 0.0;
    double field_norm_one_step = 0.0, field_norm_two_step = 0.0;
    double angle_one_step_deg = 0.0, angle_two_step_deg = 0.0;
    double zeta_star = 0.0;
    double identity_rel_error = 0.0;
    double orthogonality = 0.0;  ///< |m' b_II| / (|m| |b_II|)
    double residual_one_step = 0.0, residual_pivot = 0.0;
};

struct AllocBenchViolation {
    long sample;
    std::string check;
    double value;
};

struct AllocBenchResult {
    std::vector<AllocBenchRow> rows;
    std::vector<AllocBenchViolation> violations;
};

/// Seeded random (position, orientation, torque) instances comparing every
/// torque allocation strategy; the norm orderings are asserted per sample.
inline AllocBenchResult run_alloc_bench(const AllocBenchConfig& c) {
    AllocBenchResult out;
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    for (long k = 0; k < c.samples; ++k) {
        AllocBenchRow r;
        r.sample = k;
        for (int a = 0; a < 3; ++a) r.p(a) = uni(c.box_min(a), c.box_max(a));
        r.alpha = uni(-c.max_tilt, c.max_tilt);
        r.beta = uni(-c.max_tilt, c.max_tilt);
        r.tau_x = uni(-c.tau_max, c.tau_max);
        r.tau_y = uni(-c.tau_max, c.tau_max);
        const DipoleAgent agent{r.p, r.alpha, r.beta, c.params.dipole_magnitude, 1};
        const WrenchTask task = WrenchTask::from_body(r.tau_x, r.tau_y);
        auto flag = [&](const std::string& check, double value) { out.violations.push_back({k, check, value}); };
        try {
            const auto one = allocate_torque_one_step_pure(c.model, agent, task);
            const auto two = allocate_torque_two_step(c.model, agent, task);
            const auto piv = allocate_torque_one_step(c.model, agent, c.params, task);
            const auto jm = allocate_torque_twostep_jm(c.model, agent, c.params, task);
            const auto ma = allocate_torque_twostep_ma(c.model, agent, c.params, task);
            const auto nd = nullspace_diagnostics(c.model, agent, task);
            const Vec3 m = agent.moment();
            const double tau_norm = task.tau_c_body.norm();
            r.norm_one_step = one.current_norm;
            r.norm_two_step = two.current_norm;
            r.norm_pivot_one_step = piv.current_norm;
            r.norm_twostep_jm = jm.current_norm;
            r.norm_twostep_ma = ma.current_norm;
            r.field_norm_one_step = one.field_norm;
            r.field_norm_two_step = two.field_norm;
            r.angle_one_step_deg = field_dipole_angle_deg(one.realized_field.b, m);
            r.angle_two_step_deg = field_dipole_angle_deg(two.realized_field.b, m);
            r.zeta_star = nd.zeta_star;
            const double lhs = one.current_norm * one.current_norm;
            r.identity_rel_error =
                std::abs(lhs - nd.predicted_one_step_norm_sq) / std::max(two.current_norm * two.current_norm, 1e-300);
            const Vec3& b2 = two.realized_field.b;
            r.orthogonality = std::abs(m.dot(b2)) / std::max(m.norm() * b2.norm(), 1e-300);
            r.residual_one_step = relative_residual(one.residual_norm, tau_norm);
            r.residual_pivot = relative_residual(piv.residual_norm, tau_norm);
            if (!(r.norm_one_step <= r.norm_two_step + 1e-9)) flag("one_step_norm_le_two_step", r.norm_one_step - r.norm_two_step);
            if (!(r.field_norm_one_step >= r.field_norm_two_step - 1e-9))
                flag("one_step_field_ge_two_step", r.field_norm_two_step - r.field_norm_one_step);
            if (!(r.identity_rel_error <= 1e-9)) flag("norm_identity", r.identity_rel_error);
            if (!(r.orthogonality <= 1e-10)) flag("two_step_orthogonality", r.orthogonality);
            if (!(r.norm_pivot_one_step <= r.norm_twostep_jm + 1e-9)) flag("pivot_le_twostep_JM", r.norm_pivot_one_step - r.norm_twostep_jm);
            if (!(r.norm_pivot_one_step <= r.norm_twostep_ma + 1e-9)) flag("pivot_le_twostep_MA", r.norm_pivot_one_step - r.norm_twostep_ma);
            if (!(r.residual_one_step < 1e-9)) flag("one_step_residual", r.residual_one_step);
            if (!(r.residual_pivot < 1e-9)) flag("pivot_residual", r.residual_pivot);
        } catch (const Error& e) {
            flag(std::string("exception: ") + e.what(), 0.0);
        }
        out.rows.push_back(r);
    }
    return out;
}

inline void write_alloc_bench_csv(const AllocBenchResult& res, std::FILE* out) {
    std::fputs("sample,x,y,z,alpha,beta,tau_x,tau_y,norm_one_step,norm_two_step,norm_pivot_one_step,"
               "norm_twostep_JM,norm_twostep_MA,field_norm_one_step,field_norm_two_step,angle_one_step_deg,"
               "angle_two_step_deg,zeta_star,identity_rel_error\n",
               out);
    for (const auto& r : res.rows) {
        const double cols[] = {r.p.x(), r.p.y(), r.p.z(), r.alpha, r.beta, r.tau_x, r.tau_y, r.norm_one_step,
                               r.norm_two_step, r.norm_pivot_one_step, r.norm_twostep_jm, r.norm_twostep_ma,
                               r.field_norm_one_step, r.field_norm_two_step, r.angle_one_step_deg,
                               r.angle_two_step_deg, r.zeta_star, r.identity_rel_error};
        std::string line = std::to_string(r.sample);
        for (double v : cols) line += "," + format_number(v);
        line += "\n";
        std::fputs(line.c_str(), out);
    }
}

inline int cmd_alloc_bench(const RunConfig& rc, std::ostream& log) {
    AllocBenchConfig c;
    std::filesystem::path out;
    try {
        c = alloc_bench_from_json(load_json_file(rc.config_path), detail::config_dir(rc.config_path));
        if (rc.seed) c.seed = *rc.seed;
        out = detail::prepare_out_dir(rc.out_dir);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    const AllocBenchResult res = run_alloc_bench(c);
    {
        auto f = detail::open_output(out / "alloc_bench.csv");
        write_alloc_bench_csv(res, f.get());
    }
    nlohmann::json viol = nlohmann::json::array();
    for (const auto& v : res.violations) {
        const auto& r = res.rows[static_cast<std::size_t>(v.sample)];
        viol.push_back({{"sample", v.sample},
                        {"check", v.check},
                        {"value", v.value},
                        {"position", {r.p.x(), r.p.y(), r.p.z()}},
                        {"alpha", r.alpha},
                        {"beta", r.beta},
                        {"tau_body", {r.tau_x, r.tau_y, 0.0}}});
    }
    double max_two_angle_dev = 0.0, max_one_angle_dev = 0.0;
    for (const auto& r : res.rows) {
        max_two_angle_dev = std::max(max_two_angle_dev, std::abs(r.angle_two_step_deg - 90.0));
        max_one_angle_dev = std::max(max_one_angle_dev, std::abs(r.angle_one_step_deg - 90.0));
    }
    detail::write_json(out / "alloc_bench_summary.json",
                       {{"model", c.model.name()},
                        {"samples", c.samples},
                        {"seed", c.seed},
                        {"violations", viol},
                        {"max_two_step_angle_deviation_deg", max_two_angle_dev},
                        {"max_one_step_angle_deviation_deg", max_one_angle_dev}});
    if (!res.violations.empty()) {
        log << fmt::format("{} ordering violations in {} samples\n", res.violations.size(), c.samples);
        return kExitNumerical;
    }
    log << fmt::format("{} samples, no violations\n", c.samples);
    return kExitOk;
}

inline nlohmann::json stats_json(const MapStats& s) {
    return {{"points", s.points},
            {"feasible_points", s.feasible},
            {"max_abs_coordinate", {number_or_null(s.max_abs_coordinate.x()), number_or_null(s.max_abs_coordinate.y()),
                                    number_or_null(s.max_abs_coordinate.z())}}};
}

inline int cmd_workspace(const RunConfig& rc, std::ostream& log) {
    WorkspaceConfig c;
    std::filesystem::path out;
    try {
        c = workspace_from_json(load_json_file(rc.config_path), detail::config_dir(rc.config_path));
        out = detail::prepare_out_dir(rc.out_dir);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    WorkspaceOptions opt = c.options;
    opt.workers = rc.workers;
    std::vector<FeasibilityMap> maps;
    for (const auto& task : c.tasks) {
        maps.push_back(workspace_map(c.model, task, c.grid, c.current_limit, c.params, opt));
        const std::string stem = "map_" + task.kind_name();
        {
            auto f = detail::open_output(out / (stem + ".csv"));
            write_map_csv(maps.back(), f.get());
        }
        detail::write_json(out / (stem + ".json"), map_metadata(maps.back()));
        log << fmt::format("{}: {} of {} points feasible\n", stem, maps.back().feasible_count(),
                           maps.back().points.size());
    }
    if (maps.size() == 2) {
        const FeasibilityMap& field = maps[0].task.kind == TaskSet::Kind::fixed_field ? maps[0] : maps[1];
        const FeasibilityMap& torque = maps[0].task.kind == TaskSet::Kind::fixed_field ? maps[1] : maps[0];
        const WorkspaceComparison cmp = compare_maps(field, torque);
        detail::write_json(out / "comparison.json", {{"name", c.name},
                                                     {"model", c.model.name()},
                                                     {"field", stats_json(cmp.field)},
                                                     {"torque", stats_json(cmp.torque)},
                                                     {"field_only_points", cmp.field_only},
                                                     {"torque_only_points", cmp.torque_only},
                                                     {"torque_contains_field", cmp.torque_contains_field}});
    }
    return kExitOk;
}

inline int run_command(const RunConfig& rc, std::ostream& log) {
    try {
        if (rc.command == "simulate") return cmd_simulate(rc, log);
        if (rc.command == "alloc-bench") return cmd_alloc_bench(rc, log);
        if (rc.command == "workspace") return cmd_workspace(rc, log);
        log << "unknown command '" << rc.command << "'\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        log << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
}

}  // namespace emns
