#pragma once

#include "emns/dynamics.hpp"
#include "emns/magmodel.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace emns {

/// Commanded field direction (same parametrization as the dipole) and magnitude.
struct FieldCommand {
    double u_alpha = 0.0;
    double u_beta = 0.0;
    double magnitude = 0.0;

    Vec3 target() const {
        if (!(magnitude >= 0.0)) throw ConfigError("field magnitude must be non-negative");
        return magnitude * DipoleAgent::direction_of(u_alpha, u_beta);
    }
};

/// Torque expressed in the body frame; the body-z entry must be zero because
/// torque about the dipole axis is not producible.
struct WrenchTask {
    Vec3 tau_c_body = Vec3::Zero();
    /// Force on a free dipole. When present, one-step allocation targets
    /// the full wrench [tau; f] instead of the pivot torque.
    std::optional<Vec3> force;

    void validate() const {
        if (tau_c_body.z() != 0.0) throw ConfigError("body-frame torque task must have zero third component");
    }

    static WrenchTask from_body(double tau_x, double tau_y) { return {Vec3(tau_x, tau_y, 0.0), std::nullopt}; }
};

struct AllocationResult {
    Eigen::VectorXd currents;
    /// Realized field at the (first) agent.
    FieldState realized_field;
    double residual_norm = 0.0;
    std::optional<double> zeta_star;
    double current_norm = 0.0;
    double field_norm = 0.0;
    /// Numerical rank of the map that was inverted.
    int rank = 0;
    /// Multi-agent: realized field and residual per agent.
    std::vector<FieldState> agent_fields;
    std::vector<double> agent_residuals;
    std::vector<std::string> warnings;
};

enum class Strategy {
    field_alignment,
    torque_one_step,
    torque_two_step,
    torque_twostep_JM,
    torque_twostep_MA,
    multi_field,
    multi_torque,
};

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::field_alignment: return "field_alignment";
        case Strategy::torque_one_step: return "torque_one_step";
        case Strategy::torque_two_step: return "torque_two_step";
        case Strategy::torque_twostep_JM: return "torque_twostep_JM";
        case Strategy::torque_twostep_MA: return "torque_twostep_MA";
        case Strategy::multi_field: return "multi_field";
        case Strategy::multi_torque: return "multi_torque";
    }
    return "unknown";
}

inline Strategy parse_strategy(const std::string& s) {
    for (Strategy k : {Strategy::field_alignment, Strategy::torque_one_step, Strategy::torque_two_step,
                       Strategy::torque_twostep_JM, Strategy::torque_twostep_MA, Strategy::multi_field,
                       Strategy::multi_torque})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown strategy '" + s + "'", "/strategy");
}

/// Relative residual guard used by every exactness check.
inline double relative_residual(double residual, double task_norm) {
    return residual / std::max(task_norm, 1e-300);
}

/// Image of a torque map is the plane orthogonal to the dipole, so its rank is at most 2.
inline constexpr int kTorqueMapRank = 2;

namespace detail {

inline AllocationResult finish(const ActuationMatrix& a, Eigen::VectorXd currents, double residual, int rank) {
    AllocationResult r;
    r.realized_field = FieldState::from_vector(a * currents);
    r.currents = std::move(currents);
    r.residual_norm = residual;
    r.current_norm = r.currents.norm();
    r.field_norm = r.realized_field.b.norm();
    r.rank = rank;
    return r;
}

inline Mat3 body_to_world(const DipoleAgent& agent) { return agent.rotation_transpose(); }

inline void require_rank(int rank, int expected, const char* what, int agent = -1) {
    if (rank < expected)
        throw RankDeficiencyError(std::string(what) + ": rank " + std::to_string(rank) +
                                      ", expected " + std::to_string(expected),
                                  rank, expected, agent);
}

}  // namespace detail

/// Angle between realized field and dipole moment [deg].
inline double field_dipole_angle_deg(const Vec3& b, const Vec3& m) {
    const double d = b.norm() * m.norm();
    if (d == 0.0) return 0.0;
    return rad2deg(std::acos(std::clamp(b.dot(m) / d, -1.0, 1.0)));
}

/// Minimum-norm currents reproducing [b_SP; 0]. `polarity` flips the target so
/// a reversed dipole is aligned too. With fewer than 8 coils the gradient
/// cannot be zeroed alongside the field, so only A_b^+ b_SP is used.
inline AllocationResult allocate_field_alignment(const ActuationModel& model, const Vec3& p,
                                                 const FieldCommand& cmd, int polarity = 1) {
    const ActuationMatrix a = actuation_matrix(model, p);
    const Vec3 b = (polarity >= 0 ? 1.0 : -1.0) * cmd.target();
    int rank = 0;
    Eigen::VectorXd i;
    double res = 0.0;
    if (model.size() >= 8) {
        Eigen::Matrix<double, 8, 1> target = Eigen::Matrix<double, 8, 1>::Zero();
        target.head<3>() = b;
        i = pinv(Eigen::MatrixXd(a), &rank) * target;
        res = (a * i - target).norm();
    } else {
        const Eigen::MatrixXd ab = a.topRows<3>();
        i = pinv(ab, &rank) * b;
        res = (ab * i - b).norm();
    }
    return detail::finish(a, std::move(i), res, rank);
}

/// Quantities relating the one-step and two-step pure-torque allocations:
/// i_I = i_II + zeta* A_b^+ m with zeta* = -(A_b^+ b)'(A_b^+ m) / |A_b^+ m|^2.
struct NullspaceDiagnostics {
    Vec3 b_two_step;               ///< M_b^+ tau
    Eigen::VectorXd i_field;       ///< A_b^+ b
    Eigen::VectorXd i_moment;      ///< A_b^+ m
    double zeta_star = 0.0;
    /// |i_II|^2 - ((A_b^+ b)'(A_b^+ m))^2 / |A_b^+ m|^2.
    double predicted_one_step_norm_sq = 0.0;
};

inline NullspaceDiagnostics nullspace_diagnostics(const ActuationModel& model, const DipoleAgent& agent,
                                                  const WrenchTask& task) {
    task.validate();
    const ActuationMatrix a = actuation_matrix(model, agent.p);
    const Eigen::MatrixXd ab_pinv = pinv(Eigen::MatrixXd(a.topRows<3>()));
    const Vec3 m = agent.moment();
    const Vec3 tau = agent.rotation_transpose() * task.tau_c_body;
    NullspaceDiagnostics d;
    d.b_two_step = pinv(skew(m)) * tau;
    d.i_field = ab_pinv * d.b_two_step;
    d.i_moment = ab_pinv * m;
    const double nn = d.i_moment.squaredNorm();
    if (std::sqrt(nn) < 1e-12) throw DegenerateError("A_b^+ m vanishes; zeta* undefined");
    const double dot = d.i_field.dot(d.i_moment);
    d.zeta_star = -dot / nn;
    d.predicted_one_step_norm_sq = d.i_field.squaredNorm() - dot * dot / nn;
    return d;
}

/// Nullspace coefficient of the dipole-parallel field component that turns the
/// two-step allocation into the one-step optimum.
inline double zeta_star(const ActuationModel& model, const DipoleAgent& agent, const WrenchTask& task) {
    return nullspace_diagnostics(model, agent, task).zeta_star;
}

namespace detail {

inline std::optional<double> try_zeta(const ActuationModel& model, const DipoleAgent& agent,
                                      const WrenchTask& task) {
    try {
        return zeta_star(model, agent, {task.tau_c_body, std::nullopt});
    } catch (const DegenerateError&) {
        return std::nullopt;
    }
}

}  // namespace detail

/// (J M A)^+ tau_c: minimum-norm currents producing the pivot torque. With a
/// force in the task the free-dipole wrench map M A is inverted instead.
inline AllocationResult allocate_torque_one_step(const ActuationModel& model, const DipoleAgent& agent,
                                                 const PendulumParams& params, const WrenchTask& task) {
    task.validate();
    const ActuationMatrix a = actuation_matrix(model, agent.p);
    const WrenchMaps w = wrench_maps(agent, params.ell_m);
    const Vec3 tau = detail::body_to_world(agent) * task.tau_c_body;
    Eigen::MatrixXd map;
    Eigen::VectorXd target;
    int expected = kTorqueMapRank;
    if (task.force) {
        map = w.stacked() * a;
        target.resize(6);
        target << tau, *task.force;
        expected = std::min(5, model.size());
    } else {
        map = w.pivot_map() * a;
        target = tau;
    }
    int rank = 0;
    const Eigen::MatrixXd mp = pinv(map, &rank);
    detail::require_rank(rank, expected, "one-step torque map is rank deficient");
    Eigen::VectorXd i = mp * target;
    const double res = (map * i - target).norm();
    AllocationResult r = detail::finish(a, std::move(i), res, rank);
    r.zeta_star = detail::try_zeta(model, agent, task);
    return r;
}

/// (M_b A_b)^+ tau: one-step allocation of the pure magnetic torque (no force, no lever arm).
inline AllocationResult allocate_torque_one_step_pure(const ActuationModel& model, const DipoleAgent& agent,
                                                      const WrenchTask& task) {
    task.validate();
    const ActuationMatrix a = actuation_matrix(model, agent.p);
    const Vec3 tau = detail::body_to_world(agent) * task.tau_c_body;
    const Eigen::MatrixXd map = skew(agent.moment()) * a.topRows<3>();
    int rank = 0;
    const Eigen::MatrixXd mp = pinv(map, &rank);
    detail::require_rank(rank, kTorqueMapRank, "pure torque map is rank deficient");
    Eigen::VectorXd i = mp * tau;
    const double res = (map * i - tau).norm();
    AllocationResult r = detail::finish(a, std::move(i), res, rank);
    r.zeta_star = detail::try_zeta(model, agent, task);
    return r;
}

/// Minimum-norm field b = M_b^+ tau first, then i = A_b^+ b.
inline AllocationResult allocate_torque_two_step(const ActuationModel& model, const DipoleAgent& agent,
                                                 const WrenchTask& task) {
    task.validate();
    const ActuationMatrix a = actuation_matrix(model, agent.p);
    const Eigen::MatrixXd ab = a.topRows<3>();
    int rank = 0;
    const Eigen::MatrixXd ab_pinv = pinv(ab, &rank);
    detail::require_rank(rank, 3, "field actuation matrix is rank deficient");
    const Mat3 mb = skew(agent.moment());
    const Vec3 tau = detail::body_to_world(agent) * task.tau_c_body;
    const Vec3 b = pinv(mb) * tau;
    Eigen::VectorXd i = ab_pinv * b;
    const double res = (mb * (ab * i) - tau).norm();
    AllocationResult r = detail::finish(a, std::move(i), res, rank);
    r.zeta_star = detail::try_zeta(model, agent, task);
    return r;
}

/// i = A^+ (J M)^+ tau_c. Diagnostic variant.
inline AllocationResult allocate_torque_twostep_jm(const ActuationModel& model, const DipoleAgent& agent,
                                                   const PendulumParams& params, const WrenchTask& task) {
    task.validate();
    const ActuationMatrix a = actuation_matrix(model, agent.p);
    const WrenchMaps w = wrench_maps(agent, params.ell_m);
    const Eigen::MatrixXd jm = w.pivot_map();
    const Vec3 tau = detail::body_to_world(agent) * task.tau_c_body;
    int rank = 0;
    const Eigen::MatrixXd jm_pinv = pinv(jm, &rank);
    detail::require_rank(rank, kTorqueMapRank, "J M is rank deficient");
    Eigen::VectorXd i = pinv(Eigen::MatrixXd(a)) * (jm_pinv * tau);
    const double res = (jm * (a * i) - tau).norm();
    AllocationResult r = detail::finish(a, std::move(i), res, rank);
    r.zeta_star = detail::try_zeta(model, agent, task);
    return r;
}

/// i = (M A)^+ J^+ tau_c. Diagnostic variant.
inline AllocationResult allocate_torque_twostep_ma(const ActuationModel& model, const DipoleAgent& agent,
                                                   const PendulumParams& params, const WrenchTask& task) {
    task.validate();
    const ActuationMatrix a = actuation_matrix(model, agent.p);
    const WrenchMaps w = wrench_maps(agent, params.ell_m);
    const Eigen::MatrixXd ma = w.stacked() * a;
    const Vec3 tau = detail::body_to_world(agent) * task.tau_c_body;
    int rank = 0;
    const Eigen::MatrixXd ma_pinv = pinv(ma, &rank);
    Eigen::VectorXd i = ma_pinv * (pinv(Eigen::MatrixXd(w.jac)) * tau);
    const Eigen::MatrixXd full = w.jac * ma;
    const int full_rank = numerical_rank(full);
    detail::require_rank(full_rank, kTorqueMapRank, "J M A is rank deficient");
    const double res = (full * i - tau).norm();
    AllocationResult r = detail::finish(a, std::move(i), res, rank);
    r.zeta_star = detail::try_zeta(model, agent, task);
    return r;
}

/// Agents closer than this are flagged as ill-conditioned.
inline constexpr double kNearContactDistance = 0.01;

/// Separation below which the worst-case torque one dipole exerts on another,
/// 2 (mu0/4pi) |m|^2 / d^3, exceeds `tau_bar`. The allocation model has no
/// agent-agent coupling, so maps treat closer points as near contact.
inline double interaction_radius(double dipole_magnitude, double tau_bar) {
    if (!(tau_bar > 0.0)) throw ConfigError("tau_bar must be positive");
    return std::cbrt(2.0 * kMu0Over4Pi * dipole_magnitude * dipole_magnitude / tau_bar);
}

namespace detail {

inline void proximity_warnings(const std::vector<Vec3>& positions, std::vector<std::string>& out) {
    for (std::size_t a = 0; a < positions.size(); ++a)
        for (std::size_t b = a + 1; b < positions.size(); ++b)
            if ((positions[a] - positions[b]).norm() < kNearContactDistance)
                out.push_back("agents " + std::to_string(a) + " and " + std::to_string(b) +
                              " are closer than 1 cm; allocation is ill-conditioned");
}

}  // namespace detail

/// Stacked field-only allocation for several agents: [A_b(p1); A_b(p2)]^+ [b1; b2].
inline AllocationResult allocate_multi_field(const ActuationModel& model, const std::vector<Vec3>& positions,
                                             const std::vector<FieldCommand>& commands,
                                             const std::vector<int>& polarities = {}) {
    if (positions.size() != commands.size() || positions.empty())
        throw ConfigError("multi-field allocation needs one command per position");
    const auto n_agents = static_cast<Eigen::Index>(positions.size());
    std::vector<ActuationMatrix> as;
    Eigen::MatrixXd stacked(3 * n_agents, model.size());
    Eigen::VectorXd target(3 * n_agents);
    for (Eigen::Index k = 0; k < n_agents; ++k) {
        as.push_back(actuation_matrix(model, positions[k]));
        stacked.middleRows(3 * k, 3) = as.back().topRows<3>();
        const int pol = polarities.empty() ? 1 : polarities[k];
        target.segment<3>(3 * k) = (pol >= 0 ? 1.0 : -1.0) * commands[k].target();
    }
    int rank = 0;
    const Eigen::MatrixXd sp = pinv(stacked, &rank);
    Eigen::VectorXd i = sp * target;
    AllocationResult r = detail::finish(as[0], i, (stacked * i - target).norm(), rank);
    for (Eigen::Index k = 0; k < n_agents; ++k) {
        r.agent_fields.push_back(FieldState::from_vector(as[k] * i));
        r.agent_residuals.push_back((r.agent_fields.back().b - target.segment<3>(3 * k)).norm());
    }
    detail::proximity_warnings(positions, r.warnings);
    return r;
}

/// Stacked pivot-torque allocation for several agents: [J1 M1 A(p1); J2 M2 A(p2)]^+ [tau1; tau2].
inline AllocationResult allocate_multi_torque(const ActuationModel& model, const std::vector<DipoleAgent>& agents,
                                              const PendulumParams& params, const std::vector<WrenchTask>& tasks) {
    if (agents.size() != tasks.size() || agents.empty())
        throw ConfigError("multi-torque allocation needs one task per agent");
    const auto n_agents = static_cast<Eigen::Index>(agents.size());
    std::vector<ActuationMatrix> as;
    Eigen::MatrixXd stacked(3 * n_agents, model.size());
    Eigen::VectorXd target(3 * n_agents);
    std::vector<Vec3> positions;
    for (Eigen::Index k = 0; k < n_agents; ++k) {
        tasks[k].validate();
        as.push_back(actuation_matrix(model, agents[k].p));
        stacked.middleRows(3 * k, 3) = wrench_maps(agents[k], params.ell_m).pivot_map() * as.back();
        target.segment<3>(3 * k) = detail::body_to_world(agents[k]) * tasks[k].tau_c_body;
        positions.push_back(agents[k].p);
    }
    int rank = 0;
    const Eigen::MatrixXd sp = pinv(stacked, &rank);
    const int expected = kTorqueMapRank * static_cast<int>(n_agents);
    if (rank < expected) {
        // Attribute the loss: first an agent that is singular on its own,
        // otherwise the first agent whose rows add no new directions.
        int culprit = -1;
        int cumulative = 0;
        for (Eigen::Index k = 0; k < n_agents && culprit < 0; ++k)
            if (numerical_rank(Eigen::MatrixXd(stacked.middleRows(3 * k, 3))) < kTorqueMapRank)
                culprit = static_cast<int>(k);
        for (Eigen::Index k = 0; k < n_agents && culprit < 0; ++k) {
            const int rk = numerical_rank(Eigen::MatrixXd(stacked.topRows(3 * (k + 1))));
            if (rk < cumulative + kTorqueMapRank) culprit = static_cast<int>(k);
            cumulative = rk;
        }
        detail::require_rank(rank, expected, "stacked torque map is rank deficient", culprit);
    }
    Eigen::VectorXd i = sp * target;
    AllocationResult r = detail::finish(as[0], i, (stacked * i - target).norm(), rank);
    for (Eigen::Index k = 0; k < n_agents; ++k) {
        r.agent_fields.push_back(FieldState::from_vector(as[k] * i));
        r.agent_residuals.push_back((stacked.middleRows(3 * k, 3) * i - target.segment<3>(3 * k)).norm());
    }
    detail::proximity_warnings(positions, r.warnings);
    return r;
}

}  // namespace emns
