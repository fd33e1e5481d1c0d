#pragma once

#include "emns/alloc.hpp"
#include "emns/control.hpp"
#include "emns/dynamics.hpp"
#include "emns/magmodel.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace emns {

/// Electromagnetic navigation system operating limits.
struct EmnsConfig {
    double control_rate = 200.0;      ///< [Hz]
    double current_limit = 16.0;      ///< per-coil clamp [A]
    double current_bandwidth = 26.4;  ///< first-order lag cutoff [Hz]; 0 = ideal drivers
    double loop_latency = 0.0;        ///< measurement delay [s], rounded to whole ticks

    void validate() const {
        if (!(control_rate > 0.0)) throw ConfigError("control_rate must be positive", "/emns/control_rate");
        if (!(current_limit > 0.0)) throw ConfigError("current_limit must be positive", "/emns/current_limit");
        if (!(current_bandwidth >= 0.0))
            throw ConfigError("current_bandwidth must be non-negative", "/emns/current_bandwidth");
        if (!(loop_latency >= 0.0)) throw ConfigError("loop_latency must be non-negative", "/emns/loop_latency");
    }

    int latency_ticks() const { return static_cast<int>(std::lround(loop_latency * control_rate)); }
    double sample_time() const { return 1.0 / control_rate; }

    static EmnsConfig octomag() { return {200.0, 16.0, 26.4, 0.0}; }
    static EmnsConfig navion() { return {125.0, 25.0, 24.5, 0.0}; }
};

/// Tilt setpoint: a constant offset plus an optional circle
/// alpha = alpha0 + r cos(w t + phase), beta = beta0 + r sin(w t + phase).
struct SetpointTrajectory {
    double alpha = 0.0;
    double beta = 0.0;
    double radius = 0.0;
    double frequency = 0.0;  ///< [Hz]
    double phase = 0.0;      ///< [rad]

    struct Point {
        double alpha, beta, alpha_dot, beta_dot;
    };

    bool is_circle() const { return radius > 0.0 && frequency > 0.0; }

    Point at(double t) const {
        if (!is_circle()) return {alpha, beta, 0.0, 0.0};
        const double w = 2.0 * kPi * frequency;
        const double a = w * t + phase;
        return {alpha + radius * std::cos(a), beta + radius * std::sin(a), -radius * w * std::sin(a),
                radius * w * std::cos(a)};
    }
};

enum class Channel { alpha, beta };

struct Disturbance {
    enum class Kind { impulse, bias, tilt };
    Kind kind = Kind::bias;
    int agent = 0;
    Channel channel = Channel::alpha;
    double time = 0.0;
    /// End of a bias or tilt; impulses ignore it.
    double end_time = std::numeric_limits<double>::infinity();
    /// Impulse: rate jump [rad/s]. Bias: torque [N m]. Tilt: measurement offset [rad].
    double value = 0.0;

    bool active(double t) const { return t >= time && t < end_time; }
};

struct AgentSpec {
    /// Magnet position with the actuator upright. The pivot sits l_m below it.
    Vec3 position = Vec3::Zero();
    int polarity = 1;
    PendulumState alpha_plane;  ///< (alpha, phi)
    PendulumState beta_plane;   ///< (beta, theta)
    SetpointTrajectory setpoint;
    IntegralSchedule integral;
    double warm_start_alpha = 0.0;
    double warm_start_beta = 0.0;
    /// Upright magnet position at the end of the run; the base moves linearly.
    std::optional<Vec3> move_to;
    /// The plant is held at its initial state and gets no command until then [s].
    double release_time = 0.0;

    bool released(double t) const { return t >= release_time - 1e-12; }
};

struct MetricsConfig {
    double settle_threshold = deg2rad(0.5);
    /// Steady-state statistics use the last `steady_window` seconds.
    double steady_window = 1.0;
    /// Tracking error statistics start here.
    double tracking_start = 0.0;
};

struct Scenario {
    std::string name = "scenario";
    ActuationModel model = ActuationModel::octomag8();
    EmnsConfig emns;
    PendulumParams params;
    Paradigm paradigm = Paradigm::torque;
    Strategy strategy = Strategy::torque_one_step;
    /// |b| for the field paradigm [T].
    double field_magnitude = 0.05;
    ControllerConfig controller;
    std::vector<AgentSpec> agents = {AgentSpec{}};
    std::vector<Disturbance> disturbances;
    double duration = 5.0;
    std::uint64_t seed = 1;
    double noise_std = 0.0;  ///< angle measurement noise [rad]
    double plant_dt = 1e-4;
    /// 2D agents: only the alpha plane moves, the beta plane is locked.
    bool planar = false;
    /// Any angle beyond this aborts the run as diverged [rad].
    double divergence_limit = 1.0;
    MetricsConfig metrics;

    void validate() const {
        emns.validate();
        params.validate();
        if (!(duration > 0.0)) throw ConfigError("duration must be positive", "/duration");
        if (!(plant_dt > 0.0) || plant_dt > emns.sample_time())
            throw ConfigError("plant_dt must be positive and not exceed the control period", "/plant_dt");
        if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative", "/noise_std_deg");
        if (agents.empty() || agents.size() > 2) throw ConfigError("scenario needs one or two agents", "/agents");
        const bool multi = agents.size() == 2;
        const bool field_strategy = strategy == Strategy::field_alignment || strategy == Strategy::multi_field;
        if ((paradigm == Paradigm::field) != field_strategy)
            throw ConfigError("strategy '" + to_string(strategy) + "' does not match the " +
                                  to_string(paradigm) + " paradigm",
                              "/strategy");
        const bool multi_strategy = strategy == Strategy::multi_field || strategy == Strategy::multi_torque;
        if (multi != multi_strategy)
            throw ConfigError("two agents require a multi_* strategy and one agent a single-agent strategy",
                              "/strategy");
        if (paradigm == Paradigm::field && !(field_magnitude > 0.0))
            throw ConfigError("field paradigm needs a positive field_magnitude", "/field_magnitude");
        for (std::size_t k = 0; k < disturbances.size(); ++k) {
            const auto& d = disturbances[k];
            const std::string path = "/disturbances/" + std::to_string(k);
            if (d.agent < 0 || d.agent >= static_cast<int>(agents.size()))
                throw ConfigError("disturbance refers to a missing agent", path + "/agent");
            if (d.time < 0.0 || d.time > duration)
                throw ConfigError("disturbance time outside the run", path + "/time");
        }
        for (std::size_t k = 0; k < agents.size(); ++k) {
            const auto& a = agents[k];
            if (!a.position.allFinite()) throw ConfigError("position must be finite", "/agents/" + std::to_string(k));
            if (!(a.release_time >= 0.0))
                throw ConfigError("release_time must be non-negative", "/agents/" + std::to_string(k) + "/release_time");
            for (const auto& c : model.coils())
                if ((c.position - a.position).norm() < 2.0 * params.ell_m)
                    throw ConfigError("agent too close to a coil for the point-dipole model",
                                      "/agents/" + std::to_string(k) + "/position");
        }
    }
};

/// One row per agent per controller tick.
struct TraceRow {
    double t = 0.0;
    int agent = 0;
    double alpha = 0.0, beta = 0.0, phi = 0.0, theta = 0.0;
    double alpha_sp = 0.0, beta_sp = 0.0;
    /// Controller outputs: field angles or body torques depending on the paradigm.
    double xi_alpha = 0.0, xi_beta = 0.0;
    /// Realized pivot torque in the body frame [N m].
    double tau_x = 0.0, tau_y = 0.0;
    Vec3 b = Vec3::Zero();
    /// Residual of this agent's allocation.
    double residual = 0.0;
};

struct SimTrace {
    int n_coils = 0;
    int n_agents = 0;
    double sample_time = 0.0;
    std::vector<double> times;
    std::vector<TraceRow> rows;
    std::vector<Eigen::VectorXd> currents_commanded;  ///< after the clamp
    std::vector<Eigen::VectorXd> currents_applied;    ///< after the lag, at the tick instant
    std::string status = "ok";
    double failure_time = std::numeric_limits<double>::quiet_NaN();
    std::string message;
    GainResult gains;
    LinearSystem design;
    double integral_limit = 0.0;
    std::vector<std::string> warnings;
    /// Integral values (alpha, beta channel) per agent at the end of the run,
    /// usable as warm starts.
    std::vector<std::array<double, 2>> final_integrals;

    bool ok() const { return status == "ok"; }
    const TraceRow& row(std::size_t tick, int agent) const { return rows[tick * n_agents + agent]; }
};

/// Full plant state of one agent: two planar systems plus the moving base.
struct AgentPlant {
    PendulumState a;  ///< alpha plane
    PendulumState b;  ///< beta plane
};

/// Impulses change the actuator rate immediately. Biases and tilts act
/// through the force and measurement paths and are not applied here.
inline void inject_disturbance(AgentPlant& plant, const Disturbance& d) {
    if (d.kind != Disturbance::Kind::impulse) return;
    if (d.channel == Channel::alpha)
        plant.a.alpha_dot += d.value;
    else
        plant.b.alpha_dot += d.value;
}

namespace detail {

struct PhysicalWrench {
    Vec3 tau_pivot = Vec3::Zero();
    Vec3 b = Vec3::Zero();
};

/// Pivot torque on the magnet produced by coil currents, including the
/// gradient force acting at the magnet offset.
inline PhysicalWrench physical_wrench(const ActuationModel& model, const PendulumParams& params, const Vec3& pivot,
                                      double alpha, double beta, int polarity, const Eigen::VectorXd& currents) {
    const Vec3 dir = DipoleAgent::direction_of(alpha, beta);
    const Vec3 p = pivot + params.ell_m * dir;
    const FieldState f = FieldState::from_vector(actuation_matrix(model, p) * currents);
    const Vec3 m = (polarity >= 0 ? 1.0 : -1.0) * params.dipole_magnitude * dir;
    const Vec3 force = force_map(m) * f.g;
    return {m.cross(f.b) + (params.ell_m * dir).cross(force), f.b};
}

inline AgentPlant plant_derivative(const Scenario& sc, const AgentPlant& x, const Vec3& pivot, int polarity,
                                   const Eigen::VectorXd& currents, double bias_alpha, double bias_beta) {
    const PhysicalWrench w =
        physical_wrench(sc.model, sc.params, pivot, x.a.alpha, sc.planar ? 0.0 : x.b.alpha, polarity, currents);
    const double ca = std::cos(x.a.alpha), sa = std::sin(x.a.alpha);
    const double q_alpha = w.tau_pivot.y() + bias_alpha;
    const double q_beta = w.tau_pivot.x() * ca - w.tau_pivot.z() * sa + bias_beta;
    AgentPlant dx;
    const Accelerations acc_a = eom_pendulum_coupled_generalized(sc.params, x.a, q_alpha);
    dx.a = {x.a.alpha_dot, x.a.phi_dot, acc_a.alpha, acc_a.phi};
    if (sc.params.actuator_only) dx.a.phi = dx.a.phi_dot = 0.0;
    if (!sc.planar) {
        const Accelerations acc_b = eom_pendulum_coupled_generalized(sc.params, x.b, q_beta);
        dx.b = {x.b.alpha_dot, x.b.phi_dot, acc_b.alpha, acc_b.phi};
        if (sc.params.actuator_only) dx.b.phi = dx.b.phi_dot = 0.0;
    }
    return dx;
}

inline AgentPlant axpy(const AgentPlant& x, double h, const AgentPlant& d) {
    return {axpy(x.a, h, d.a), axpy(x.b, h, d.b)};
}

/// Largest body torque (or field angle) that stays within the current limit
/// at the nominal pose of the first agent.
inline double saturation_equivalent_output(const Scenario& sc) {
    if (sc.paradigm == Paradigm::field) return kPi / 2.0;
    const AgentSpec& a = sc.agents.front();
    DipoleAgent agent{a.position, 0.0, 0.0, sc.params.dipole_magnitude, a.polarity};
    try {
        double worst = 0.0;
        for (const Vec3& t : {Vec3(1.0, 0.0, 0.0), Vec3(0.0, 1.0, 0.0)}) {
            const auto r = allocate_torque_one_step(sc.model, agent, sc.params, {t, std::nullopt});
            worst = std::max(worst, r.currents.cwiseAbs().maxCoeff());
        }
        return worst > 0.0 ? sc.emns.current_limit / worst : std::numeric_limits<double>::infinity();
    } catch (const RankDeficiencyError&) {
        return std::numeric_limits<double>::infinity();
    }
}

inline Vec3 pivot_at(const Scenario& sc, const AgentSpec& a, double t) {
    Vec3 top = a.position;
    if (a.move_to) top += (*a.move_to - a.position) * std::clamp(t / sc.duration, 0.0, 1.0);
    return top - sc.params.ell_m * Vec3::UnitZ();
}

struct Measurement {
    double alpha, phi, beta, theta;
};

}  // namespace detail

/// Closed-loop sampled-data simulation with zero-order-hold commands.
inline SimTrace run_scenario(const Scenario& sc) {
    sc.validate();
    const int n_agents = static_cast<int>(sc.agents.size());
    const int n_coils = sc.model.size();
    const double T = sc.emns.sample_time();
    const int n_sub = std::max(1, static_cast<int>(std::lround(T / sc.plant_dt)));
    const double h = T / n_sub;
    const long n_ticks = static_cast<long>(std::floor(sc.duration / T + 1e-9)) + 1;

    SimTrace tr;
    tr.n_coils = n_coils;
    tr.n_agents = n_agents;
    tr.sample_time = T;

    ControllerConfig cfg = sc.controller;
    cfg.sample_time = T;
    tr.design = linearize(sc.params, sc.paradigm, sc.field_magnitude, T);
    tr.gains = design_channel(tr.design, cfg);
    if (!std::isfinite(cfg.integral_limit)) cfg.integral_limit = 2.0 * detail::saturation_equivalent_output(sc);
    tr.integral_limit = cfg.integral_limit;

    struct AgentRuntime {
        AgentPlant x;
        LqriController ca, cb;
        VelocityEstimator va, vp, vb, vt;
        std::deque<detail::Measurement> delay;
    };
    std::vector<AgentRuntime> rt;
    for (const auto& a : sc.agents) {
        ControllerConfig ca = cfg, cb = cfg;
        ca.integral_warm_start = a.warm_start_alpha;
        cb.integral_warm_start = a.warm_start_beta;
        const double fc = cfg.velocity_cutoff_hz;
        rt.push_back({{a.alpha_plane, sc.planar ? PendulumState{} : a.beta_plane},
                      LqriController(tr.gains.k, tr.gains.k_i, ca),
                      LqriController(tr.gains.k, tr.gains.k_i, cb),
                      VelocityEstimator(T, fc), VelocityEstimator(T, fc), VelocityEstimator(T, fc),
                      VelocityEstimator(T, fc), {}});
    }

    std::mt19937_64 rng(sc.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int latency = sc.emns.latency_ticks();
    const double ibar = sc.emns.current_limit;
    const double lag_rate = 2.0 * kPi * sc.emns.current_bandwidth;
    const int states = sc.params.state_size();

    Eigen::VectorXd applied = Eigen::VectorXd::Zero(n_coils);
    std::vector<bool> impulse_done(sc.disturbances.size(), false);

    auto fail = [&](double t, const std::string& status, const std::string& msg) {
        tr.status = status;
        tr.failure_time = t;
        tr.message = msg;
    };

    for (long k = 0; k < n_ticks; ++k) {
        const double t = k * T;

        // Measurement path: delay, tilt bias, noise, finite-difference rates.
        std::vector<detail::Measurement> meas(n_agents);
        for (int j = 0; j < n_agents; ++j) {
            auto& r = rt[j];
            r.delay.push_back({r.x.a.alpha, r.x.a.phi, r.x.b.alpha, r.x.b.phi});
            while (static_cast<int>(r.delay.size()) > latency + 1) r.delay.pop_front();
            detail::Measurement m = r.delay.front();
            for (const auto& d : sc.disturbances)
                if (d.kind == Disturbance::Kind::tilt && d.agent == j && d.active(t))
                    (d.channel == Channel::alpha ? m.alpha : m.beta) += d.value;
            if (sc.noise_std > 0.0) {
                m.alpha += sc.noise_std * noise(rng);
                m.phi += sc.noise_std * noise(rng);
                if (!sc.planar) {
                    m.beta += sc.noise_std * noise(rng);
                    m.theta += sc.noise_std * noise(rng);
                }
            }
            if (sc.planar) m.beta = m.theta = 0.0;
            meas[j] = m;
        }

        // Control law per agent and channel.
        std::vector<double> xi_a(n_agents, 0.0), xi_b(n_agents, 0.0);
        std::vector<SetpointTrajectory::Point> sps(n_agents);
        for (int j = 0; j < n_agents; ++j) {
            auto& r = rt[j];
            const auto& m = meas[j];
            const auto sp = sc.agents[j].setpoint.at(t);
            sps[j] = sp;
            const double ad = r.va.update(m.alpha), pd = r.vp.update(m.phi);
            const double bd = r.vb.update(m.beta), td = r.vt.update(m.theta);
            Eigen::VectorXd xa(states), xb(states);
            if (states == 4) {
                xa << m.alpha, m.phi, ad, pd;
                xb << m.beta, m.theta, bd, td;
            } else {
                xa << m.alpha, ad;
                xb << m.beta, bd;
            }
            if (!sc.agents[j].released(t)) continue;
            const auto& sched = sc.agents[j].integral;
            if (!sched.windows().empty()) {
                apply_integral_schedule(r.ca, sched, t);
                apply_integral_schedule(r.cb, sched, t);
            }
            xi_a[j] = r.ca.step(xa, lift_setpoint(sp.alpha, sp.alpha_dot, states), T);
            if (!sc.planar) xi_b[j] = r.cb.step(xb, lift_setpoint(sp.beta, sp.beta_dot, states), T);
        }

        // Allocation at the measured magnet poses.
        Eigen::VectorXd cmd;
        std::vector<double> residuals(n_agents, 0.0);
        try {
            std::vector<DipoleAgent> poses;
            for (int j = 0; j < n_agents; ++j) {
                const Vec3 pivot = detail::pivot_at(sc, sc.agents[j], t);
                const Vec3 p = pivot + sc.params.ell_m * DipoleAgent::direction_of(meas[j].alpha, meas[j].beta);
                poses.push_back({p, meas[j].alpha, meas[j].beta, sc.params.dipole_magnitude, sc.agents[j].polarity});
            }
            AllocationResult res;
            switch (sc.strategy) {
                case Strategy::field_alignment:
                    res = allocate_field_alignment(sc.model, poses[0].p, {xi_a[0], xi_b[0], sc.field_magnitude},
                                                   poses[0].polarity);
                    break;
                case Strategy::torque_one_step:
                    res = allocate_torque_one_step(sc.model, poses[0], sc.params,
                                                   WrenchTask::from_body(xi_b[0], xi_a[0]));
                    break;
                case Strategy::torque_two_step:
                    res = allocate_torque_two_step(sc.model, poses[0], WrenchTask::from_body(xi_b[0], xi_a[0]));
                    break;
                case Strategy::torque_twostep_JM:
                    res = allocate_torque_twostep_jm(sc.model, poses[0], sc.params,
                                                     WrenchTask::from_body(xi_b[0], xi_a[0]));
                    break;
                case Strategy::torque_twostep_MA:
                    res = allocate_torque_twostep_ma(sc.model, poses[0], sc.params,
                                                     WrenchTask::from_body(xi_b[0], xi_a[0]));
                    break;
                case Strategy::multi_field: {
                    std::vector<Vec3> ps;
                    std::vector<FieldCommand> cmds;
                    std::vector<int> pols;
                    for (int j = 0; j < n_agents; ++j) {
                        ps.push_back(poses[j].p);
                        cmds.push_back({xi_a[j], xi_b[j], sc.field_magnitude});
                        pols.push_back(poses[j].polarity);
                    }
                    res = allocate_multi_field(sc.model, ps, cmds, pols);
                    break;
                }
                case Strategy::multi_torque: {
                    std::vector<WrenchTask> tasks;
                    for (int j = 0; j < n_agents; ++j) tasks.push_back(WrenchTask::from_body(xi_b[j], xi_a[j]));
                    res = allocate_multi_torque(sc.model, poses, sc.params, tasks);
                    break;
                }
            }
            cmd = res.currents;
            if (res.agent_residuals.empty())
                residuals[0] = res.residual_norm;
            else
                for (int j = 0; j < n_agents; ++j) residuals[j] = res.agent_residuals[j];
            if (k == 0)
                for (const auto& w : res.warnings) tr.warnings.push_back(w);
        } catch (const RankDeficiencyError& e) {
            fail(t, "allocation_failure", e.what());
            break;
        } catch (const SingularPositionError& e) {
            fail(t, "allocation_failure", e.what());
            break;
        }
        for (Eigen::Index c = 0; c < cmd.size(); ++c) cmd(c) = std::clamp(cmd(c), -ibar, ibar);

        // Trace at the tick instant.
        tr.times.push_back(t);
        tr.currents_commanded.push_back(cmd);
        tr.currents_applied.push_back(applied);
        for (int j = 0; j < n_agents; ++j) {
            const auto& x = rt[j].x;
            const double beta = sc.planar ? 0.0 : x.b.alpha;
            const auto w = detail::physical_wrench(sc.model, sc.params, detail::pivot_at(sc, sc.agents[j], t),
                                                   x.a.alpha, beta, sc.agents[j].polarity, applied);
            DipoleAgent pose{Vec3::Zero(), x.a.alpha, beta, 1.0, 1};
            const Vec3 tau_body = pose.rotation() * w.tau_pivot;
            TraceRow row;
            row.t = t;
            row.agent = j;
            row.alpha = x.a.alpha;
            row.phi = x.a.phi;
            row.beta = beta;
            row.theta = sc.planar ? 0.0 : x.b.phi;
            row.alpha_sp = sps[j].alpha;
            row.beta_sp = sc.planar ? 0.0 : sps[j].beta;
            row.xi_alpha = xi_a[j];
            row.xi_beta = xi_b[j];
            row.tau_x = tau_body.x();
            row.tau_y = tau_body.y();
            row.b = w.b;
            row.residual = residuals[j];
            tr.rows.push_back(row);
        }
        if (k + 1 == n_ticks) break;

        // Plant integration across the hold interval.
        const Eigen::VectorXd start = applied;
        auto current_at = [&](double tau) -> Eigen::VectorXd {
            if (lag_rate <= 0.0) return cmd;
            return cmd + (start - cmd) * std::exp(-lag_rate * tau);
        };
        for (int s = 0; s < n_sub; ++s) {
            const double ts = t + s * h;
            for (std::size_t d = 0; d < sc.disturbances.size(); ++d) {
                const auto& ev = sc.disturbances[d];
                if (ev.kind == Disturbance::Kind::impulse && !impulse_done[d] && ev.time <= ts + 1e-12) {
                    inject_disturbance(rt[ev.agent].x, ev);
                    impulse_done[d] = true;
                }
            }
            const Eigen::VectorXd i0 = current_at(s * h), i1 = current_at((s + 0.5) * h), i2 = current_at((s + 1) * h);
            for (int j = 0; j < n_agents; ++j) {
                if (!sc.agents[j].released(ts)) continue;
                double ba = 0.0, bb = 0.0;
                for (const auto& ev : sc.disturbances)
                    if (ev.kind == Disturbance::Kind::bias && ev.agent == j && ev.active(ts))
                        (ev.channel == Channel::alpha ? ba : bb) += ev.value;
                const int pol = sc.agents[j].polarity;
                const Vec3 q0 = detail::pivot_at(sc, sc.agents[j], ts);
                const Vec3 q1 = detail::pivot_at(sc, sc.agents[j], ts + 0.5 * h);
                const Vec3 q2 = detail::pivot_at(sc, sc.agents[j], ts + h);
                const AgentPlant& x = rt[j].x;
                const AgentPlant k1 = detail::plant_derivative(sc, x, q0, pol, i0, ba, bb);
                const AgentPlant k2 = detail::plant_derivative(sc, detail::axpy(x, 0.5 * h, k1), q1, pol, i1, ba, bb);
                const AgentPlant k3 = detail::plant_derivative(sc, detail::axpy(x, 0.5 * h, k2), q1, pol, i1, ba, bb);
                const AgentPlant k4 = detail::plant_derivative(sc, detail::axpy(x, h, k3), q2, pol, i2, ba, bb);
                rt[j].x = {detail::rk4_combine(x.a, h, k1.a, k2.a, k3.a, k4.a),
                           detail::rk4_combine(x.b, h, k1.b, k2.b, k3.b, k4.b)};
            }
        }
        applied = current_at(T);

        bool diverged = false;
        for (const auto& r : rt) {
            const auto& x = r.x;
            if (!x.a.finite() || !x.b.finite() || std::abs(x.a.alpha) > sc.divergence_limit ||
                std::abs(x.a.phi) > sc.divergence_limit || std::abs(x.b.alpha) > sc.divergence_limit ||
                std::abs(x.b.phi) > sc.divergence_limit)
                diverged = true;
        }
        if (diverged) {
            fail(t + T, "diverged", "state left the divergence limit");
            break;
        }
    }
    for (const auto& r : rt) tr.final_integrals.push_back({r.ca.state().integral_value, r.cb.state().integral_value});
    return tr;
}

/// Two agents driven by one stacked allocation per tick.
inline SimTrace run_multi_agent(const Scenario& sc) {
    if (sc.agents.size() != 2) throw ConfigError("multi-agent run needs exactly two agents", "/agents");
    if ((sc.agents[0].position - sc.agents[1].position).norm() < 1e-6)
        throw ConfigError("agent positions must be distinct", "/agents");
    return run_scenario(sc);
}

struct TraceSummary {
    std::string status;
    double failure_time = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::optional<double>> settling_time;
    double max_abs_current = 0.0;
    double max_abs_commanded_current = 0.0;
    double steady_state_max_abs_current = 0.0;
    std::vector<double> rms_tracking_error;
    std::vector<double> steady_state_alpha;
    std::vector<double> steady_state_beta;
    double circle_radius = 0.0;
};

inline TraceSummary summarize(const Scenario& sc, const SimTrace& tr) {
    TraceSummary s;
    s.status = tr.status;
    s.failure_time = tr.failure_time;
    const std::size_t ticks = tr.times.size();
    const double t_end = ticks ? tr.times.back() : 0.0;
    const double steady_from = t_end - sc.metrics.steady_window;
    for (std::size_t k = 0; k < ticks; ++k) {
        const double ia = tr.currents_applied[k].size() ? tr.currents_applied[k].cwiseAbs().maxCoeff() : 0.0;
        const double ic = tr.currents_commanded[k].size() ? tr.currents_commanded[k].cwiseAbs().maxCoeff() : 0.0;
        s.max_abs_current = std::max(s.max_abs_current, ia);
        s.max_abs_commanded_current = std::max(s.max_abs_commanded_current, ic);
        if (tr.times[k] >= steady_from - 1e-12) s.steady_state_max_abs_current = std::max(s.steady_state_max_abs_current, ia);
    }
    for (int j = 0; j < tr.n_agents; ++j) {
        std::optional<double> settle = ticks ? std::optional<double>(0.0) : std::nullopt;
        double sq = 0.0, sa = 0.0, sb = 0.0;
        int nt = 0, ns = 0;
        for (std::size_t k = 0; k < ticks; ++k) {
            const TraceRow& r = tr.row(k, j);
            const double th = sc.metrics.settle_threshold;
            if (std::abs(r.alpha - r.alpha_sp) >= th || std::abs(r.phi) >= th || std::abs(r.beta - r.beta_sp) >= th ||
                std::abs(r.theta) >= th)
                settle = k + 1 < ticks ? std::optional<double>(tr.times[k + 1]) : std::nullopt;
            if (r.t >= sc.metrics.tracking_start - 1e-12) {
                sq += (r.alpha - r.alpha_sp) * (r.alpha - r.alpha_sp) + (r.beta - r.beta_sp) * (r.beta - r.beta_sp);
                ++nt;
            }
            if (r.t >= steady_from - 1e-12) {
                sa += r.alpha;
                sb += r.beta;
                ++ns;
            }
        }
        if (!tr.ok()) settle = std::nullopt;
        s.settling_time.push_back(settle);
        s.rms_tracking_error.push_back(nt ? std::sqrt(sq / nt) : 0.0);
        s.steady_state_alpha.push_back(ns ? sa / ns : 0.0);
        s.steady_state_beta.push_back(ns ? sb / ns : 0.0);
        s.circle_radius = std::max(s.circle_radius, sc.agents[j].setpoint.radius);
    }
    return s;
}

}  // namespace emns
