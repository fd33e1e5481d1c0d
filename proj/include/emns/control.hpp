#pragma once

#include "emns/dynamics.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace emns {

struct ControllerConfig {
    /// State weights; four entries for the actuator plus pendulum, two for actuator only.
    Eigen::VectorXd q_diag = (Eigen::VectorXd(4) << 20.0, 40.0, 1.0, 1.0).finished();
    double r_weight = 1000.0;
    /// Explicit integral gain. When absent, `integral_weight` > 0 synthesizes one.
    std::optional<double> k_i;
    /// Weight on the integrated angle error for augmented-state synthesis.
    double integral_weight = 0.0;
    double sample_time = 0.005;
    bool integral_enabled = false;
    double integral_warm_start = 0.0;
    /// Clamp on |integral term|.
    double integral_limit = std::numeric_limits<double>::infinity();
    /// Low-pass cutoff on finite-difference rates; 0 disables the filter.
    double velocity_cutoff_hz = 0.0;
    /// When false the state-feedback gain is zero and only the integral acts.
    bool feedback = true;
    /// Imported gain row overriding synthesis.
    std::optional<Eigen::RowVectorXd> gain;

    void validate(int states = 4) const {
        if (q_diag.size() != states)
            throw ConfigError("q_diag must have " + std::to_string(states) + " entries", "/controller/q_diag");
        if ((q_diag.array() < 0.0).any() || !(q_diag.maxCoeff() > 0.0))
            throw ConfigError("q_diag must be non-negative with a positive entry", "/controller/q_diag");
        if (!(r_weight > 0.0)) throw ConfigError("r_weight must be positive", "/controller/r_weight");
        if (!(sample_time > 0.0)) throw ConfigError("sample_time must be positive", "/controller/sample_time");
        if (!(integral_weight >= 0.0))
            throw ConfigError("integral_weight must be non-negative", "/controller/integral_weight");
        if (!(integral_limit > 0.0))
            throw ConfigError("integral_limit must be positive", "/controller/integral_limit");
        if (!(velocity_cutoff_hz >= 0.0))
            throw ConfigError("velocity_cutoff_hz must be non-negative", "/controller/velocity_cutoff_hz");
        if (gain && gain->size() != states)
            throw ConfigError("gain must have " + std::to_string(states) + " entries", "/controller/gain");
    }
};

/// ||A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q|| / max(||P||, 1).
inline double dare_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& q,
                            const Eigen::MatrixXd& r, const Eigen::MatrixXd& p) {
    const Eigen::MatrixXd bp = b.transpose() * p;
    const Eigen::MatrixXd res = a.transpose() * p * a - p -
                                a.transpose() * p * b * (r + bp * b).ldlt().solve(bp * a) + q;
    return res.norm() / std::max(p.norm(), 1.0);
}

struct DareSolution {
    Eigen::MatrixXd p;
    Eigen::MatrixXd k;
    int iterations = 0;
    double residual = 0.0;
};

inline constexpr int kDareMaxIterations = 100000;
inline constexpr double kDareTolerance = 1e-12;

/// Fixed-point iteration of the Riccati map starting from P = Q.
inline DareSolution solve_dare(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& r) {
    Eigen::MatrixXd p = q;
    for (int it = 1; it <= kDareMaxIterations; ++it) {
        const Eigen::MatrixXd bp = b.transpose() * p;
        const Eigen::MatrixXd k = (r + bp * b).ldlt().solve(bp * a);
        Eigen::MatrixXd next = a.transpose() * p * (a - b * k) + q;
        next = 0.5 * (next + next.transpose());
        if (!next.allFinite()) throw SynthesisError("Riccati iteration diverged");
        const double change = (next - p).norm();
        p = std::move(next);
        if (change <= kDareTolerance * std::max(p.norm(), 1e-300)) {
            const Eigen::MatrixXd bp2 = b.transpose() * p;
            Eigen::MatrixXd kf = (r + bp2 * b).ldlt().solve(bp2 * a);
            return {p, kf, it, dare_residual(a, b, q, r, p)};
        }
    }
    throw SynthesisError("Riccati iteration did not converge in 1e5 steps");
}

struct GainResult {
    Eigen::RowVectorXd k;
    /// Integral gain in xi_I = k_i * integral(alpha_sp - alpha).
    double k_i = 0.0;
    Eigen::MatrixXd p;
    int iterations = 0;
    double riccati_residual = 0.0;
    /// rho(A_d - B_d K), the loop with the integral frozen.
    double spectral_radius = 0.0;
    /// Spectral radius of the loop including the integrator (equals the above when there is none).
    double augmented_spectral_radius = 0.0;
};

/// Discrete LQR gain for one planar channel.
inline GainResult lqr_gain(const LinearSystem& sys, const ControllerConfig& cfg) {
    cfg.validate(sys.states());
    const Eigen::MatrixXd q = cfg.q_diag.asDiagonal();
    const Eigen::MatrixXd r = Eigen::MatrixXd::Constant(1, 1, cfg.r_weight);
    const DareSolution s = solve_dare(sys.a_d, sys.b_d, q, r);
    GainResult g;
    g.k = s.k.row(0);
    g.p = s.p;
    g.iterations = s.iterations;
    g.riccati_residual = s.residual;
    g.spectral_radius = spectral_radius(sys.a_d - sys.b_d * g.k);
    g.augmented_spectral_radius = g.spectral_radius;
    if (!(g.spectral_radius < 1.0)) throw SynthesisError("LQR gain does not stabilize the discrete plant");
    return g;
}

/// LQR on the state augmented with z = sum of (alpha_sp - alpha) * T. The
/// integral gain follows from the last gain entry.
inline GainResult lqri_gain(const LinearSystem& sys, const ControllerConfig& cfg) {
    cfg.validate(sys.states());
    if (!(cfg.integral_weight > 0.0)) throw ConfigError("integral_weight must be positive for LQI synthesis");
    const int n = sys.states();
    const double t = sys.sample_time;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 1, n + 1);
    a.topLeftCorner(n, n) = sys.a_d;
    a(n, 0) = -t;
    a(n, n) = 1.0;
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n + 1, 1);
    b.topRows(n) = sys.b_d;
    Eigen::VectorXd qd(n + 1);
    qd << cfg.q_diag, cfg.integral_weight;
    const Eigen::MatrixXd q = qd.asDiagonal();
    const Eigen::MatrixXd r = Eigen::MatrixXd::Constant(1, 1, cfg.r_weight);
    const DareSolution s = solve_dare(a, b, q, r);
    GainResult g;
    g.k = s.k.row(0).head(n);
    g.k_i = -s.k(0, n);
    g.p = s.p;
    g.iterations = s.iterations;
    g.riccati_residual = s.residual;
    g.augmented_spectral_radius = spectral_radius(a - b * s.k);
    g.spectral_radius = spectral_radius(sys.a_d - sys.b_d * g.k);
    if (!(g.augmented_spectral_radius < 1.0))
        throw SynthesisError("LQI gain does not stabilize the augmented plant");
    return g;
}

/// Closed-loop spectral radius of the discrete plant under u = -K x + k_i z.
inline double integral_loop_spectral_radius(const LinearSystem& sys, const Eigen::RowVectorXd& k, double k_i) {
    const int n = sys.states();
    const double t = sys.sample_time;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 1, n + 1);
    a.topLeftCorner(n, n) = sys.a_d - sys.b_d * k;
    a.topRightCorner(n, 1) = sys.b_d * k_i;
    a(n, 0) = -t;
    a(n, n) = 1.0;
    return spectral_radius(a);
}

/// Gains actually used by a channel: synthesized, imported, or disabled.
inline GainResult design_channel(const LinearSystem& sys, const ControllerConfig& cfg) {
    GainResult g = cfg.integral_weight > 0.0 && !cfg.k_i ? lqri_gain(sys, cfg) : lqr_gain(sys, cfg);
    if (cfg.k_i) g.k_i = *cfg.k_i;
    if (cfg.gain) g.k = *cfg.gain;
    if (!cfg.feedback) g.k = Eigen::RowVectorXd::Zero(sys.states());
    if (cfg.gain || !cfg.feedback) g.spectral_radius = spectral_radius(sys.a_d - sys.b_d * g.k);
    g.augmented_spectral_radius =
        g.k_i != 0.0 ? integral_loop_spectral_radius(sys, g.k, g.k_i) : g.spectral_radius;
    return g;
}

/// Rates by backward differences (theta_k - theta_{k-1}) / dt with an
/// optional single-pole low-pass on the result.
class VelocityEstimator {
public:
    explicit VelocityEstimator(double dt, double cutoff_hz = 0.0) : dt_(dt) {
        if (!(dt > 0.0)) throw ConfigError("velocity estimator needs dt > 0");
        if (cutoff_hz > 0.0) {
            const double tau = 1.0 / (2.0 * kPi * cutoff_hz);
            smoothing_ = dt / (dt + tau);
        }
    }

    /// First call returns 0; afterwards the (filtered) backward difference.
    double update(double angle) {
        if (!has_previous_) {
            has_previous_ = true;
            previous_ = angle;
            return rate_ = 0.0;
        }
        const double raw = (angle - previous_) / dt_;
        previous_ = angle;
        rate_ = smoothing_ >= 1.0 ? raw : rate_ + smoothing_ * (raw - rate_);
        return rate_;
    }

    void reset() { has_previous_ = false; rate_ = 0.0; }
    double rate() const { return rate_; }

private:
    double dt_;
    double smoothing_ = 1.0;
    bool has_previous_ = false;
    double previous_ = 0.0;
    double rate_ = 0.0;
};

/// Rates for samples 1..n-1 of `history`.
inline std::vector<double> estimate_velocities(const std::vector<double>& history, double dt,
                                               double cutoff_hz = 0.0) {
    if (history.size() < 2) throw ConfigError("velocity estimation needs at least two samples");
    VelocityEstimator est(dt, cutoff_hz);
    est.update(history.front());
    std::vector<double> out;
    out.reserve(history.size() - 1);
    for (std::size_t k = 1; k < history.size(); ++k) out.push_back(est.update(history[k]));
    return out;
}

/// Time windows [start, end) during which the integrator accumulates.
class IntegralSchedule {
public:
    IntegralSchedule() = default;

    explicit IntegralSchedule(std::vector<std::pair<double, double>> windows) : windows_(std::move(windows)) {
        for (std::size_t k = 0; k < windows_.size(); ++k) {
            if (!(windows_[k].second > windows_[k].first))
                throw ConfigError("integral window must end after it starts");
            if (k > 0 && windows_[k].first < windows_[k - 1].second)
                throw ConfigError("integral windows overlap or are not ordered");
        }
    }

    static IntegralSchedule always() {
        return IntegralSchedule({{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()}});
    }

    bool active(double t) const {
        for (const auto& [a, b] : windows_)
            if (t >= a && t < b) return true;
        return false;
    }

    const std::vector<std::pair<double, double>>& windows() const { return windows_; }

private:
    std::vector<std::pair<double, double>> windows_;
};

/// Setpoint lift: alpha_sp and its rate to (alpha_sp, 0, alpha_dot_sp, 0).
inline Eigen::VectorXd lift_setpoint(double alpha_sp, double alpha_dot_sp, int states) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(states);
    x(0) = alpha_sp;
    x(states / 2) = alpha_dot_sp;
    return x;
}

struct ControllerState {
    double integral_value = 0.0;
    double last_output = 0.0;
    bool integral_enabled = false;
};

/// xi = K (x_sp - x) + xi_I for one planar channel.
class LqriController {
public:
    LqriController(Eigen::RowVectorXd k, double k_i, ControllerConfig cfg)
        : k_(std::move(k)), k_i_(k_i), cfg_(std::move(cfg)) {
        reset();
    }

    /// Output uses the stored integral, then the integral advances by one rectangle.
    double step(const Eigen::VectorXd& x, const Eigen::VectorXd& x_sp, double dt) {
        if (dt != cfg_.sample_time) throw ConfigError("controller stepped with a foreign sample time");
        const double out = k_.dot(x_sp - x) + state_.integral_value;
        if (state_.integral_enabled) {
            const double next = state_.integral_value + k_i_ * (x_sp(0) - x(0)) * dt;
            state_.integral_value = std::clamp(next, -cfg_.integral_limit, cfg_.integral_limit);
        }
        state_.last_output = out;
        return out;
    }

    void set_integral_enabled(bool on) { state_.integral_enabled = on; }
    void set_integral(double v) { state_.integral_value = v; }
    void reset() {
        state_.integral_value = cfg_.integral_warm_start;
        state_.last_output = 0.0;
        state_.integral_enabled = cfg_.integral_enabled;
    }

    const ControllerState& state() const { return state_; }
    const Eigen::RowVectorXd& gain() const { return k_; }
    double integral_gain() const { return k_i_; }
    const ControllerConfig& config() const { return cfg_; }

private:
    Eigen::RowVectorXd k_;
    double k_i_;
    ControllerConfig cfg_;
    ControllerState state_;
};

/// Apply a schedule at time t: accumulate only inside windows, hold the value otherwise.
inline void apply_integral_schedule(LqriController& c, const IntegralSchedule& s, double t) {
    c.set_integral_enabled(s.active(t));
}

}  // namespace emns
