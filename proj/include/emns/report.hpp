#pragma once

#include "emns/sim.hpp"
#include "emns/workspace.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cstdio>
#include <string>

namespace emns {

/// Trace CSV: t, agent, alpha, beta, phi, theta, alpha_sp, beta_sp, tau_x, tau_y, i_1..i_n, b_x, b_y, b_z.
/// Currents are the applied (clamped, lagged) values at each tick.
inline void write_trace_csv(const SimTrace& tr, std::FILE* out) {
    std::string header = "t,agent,alpha,beta,phi,theta,alpha_sp,beta_sp,tau_x,tau_y";
    for (int c = 1; c <= tr.n_coils; ++c) header += fmt::format(",i_{}", c);
    header += ",b_x,b_y,b_z\n";
    std::fputs(header.c_str(), out);
    fmt::memory_buffer buf;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
        for (int j = 0; j < tr.n_agents; ++j) {
            const TraceRow& r = tr.row(k, j);
            buf.clear();
            auto it = std::back_inserter(buf);
            fmt::format_to(it, "{},{},{},{},{},{},{},{},{},{}", format_number(r.t), r.agent, format_number(r.alpha),
                           format_number(r.beta), format_number(r.phi), format_number(r.theta),
                           format_number(r.alpha_sp), format_number(r.beta_sp), format_number(r.tau_x),
                           format_number(r.tau_y));
            for (int c = 0; c < tr.n_coils; ++c) fmt::format_to(it, ",{}", format_number(tr.currents_applied[k](c)));
            fmt::format_to(it, ",{},{},{}\n", format_number(r.b.x()), format_number(r.b.y()), format_number(r.b.z()));
            std::fwrite(buf.data(), 1, buf.size(), out);
        }
    }
}

inline nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json gains_json(const GainResult& g) {
    std::vector<double> k(g.k.data(), g.k.data() + g.k.size());
    return {{"k", k},
            {"k_i", g.k_i},
            {"riccati_residual", g.riccati_residual},
            {"iterations", g.iterations},
            {"spectral_radius", g.spectral_radius},
            {"augmented_spectral_radius", g.augmented_spectral_radius}};
}

inline nlohmann::json summary_json(const Scenario& sc, const SimTrace& tr) {
    const TraceSummary s = summarize(sc, tr);
    nlohmann::json j;
    j["name"] = sc.name;
    j["status"] = s.status;
    j["failure_time"] = number_or_null(s.failure_time);
    j["message"] = tr.message;
    j["model"] = sc.model.name();
    j["paradigm"] = to_string(sc.paradigm);
    j["strategy"] = to_string(sc.strategy);
    j["control_rate"] = sc.emns.control_rate;
    j["current_limit"] = sc.emns.current_limit;
    j["duration"] = sc.duration;
    j["seed"] = sc.seed;
    j["agents"] = tr.n_agents;
    j["ticks"] = tr.times.size();
    nlohmann::json settle = nlohmann::json::array();
    for (const auto& v : s.settling_time) settle.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    j["settling_time"] = settle;
    j["max_abs_current"] = s.max_abs_current;
    j["max_abs_commanded_current"] = s.max_abs_commanded_current;
    j["steady_state_max_abs_current"] = s.steady_state_max_abs_current;
    j["rms_tracking_error"] = s.rms_tracking_error;
    j["circle_radius"] = s.circle_radius;
    j["steady_state_alpha"] = s.steady_state_alpha;
    j["steady_state_beta"] = s.steady_state_beta;
    j["integral_limit"] = number_or_null(tr.integral_limit);
    j["gains"] = gains_json(tr.gains);
    j["warnings"] = tr.warnings;
    nlohmann::json integrals = nlohmann::json::array();
    for (const auto& v : tr.final_integrals) integrals.push_back({{"alpha", v[0]}, {"beta", v[1]}});
    j["final_integrals"] = integrals;
    return j;
}

}  // namespace emns
