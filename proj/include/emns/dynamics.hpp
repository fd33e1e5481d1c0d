#pragma once

#include "emns/common.hpp"

#include <json.hpp>

#include <string>

namespace emns {

struct PendulumParams {
    double M = 0.02;        ///< pendulum mass [kg]
    double ell = 0.10;      ///< actuator length, pivot to pendulum joint [m]
    double L = 0.20;        ///< pendulum length [m]
    double ell_m = 0.05;    ///< pivot to magnet center [m]
    double eta = 0.01;      ///< first moment of actuator mass [kg m]
    double J = 5e-4;        ///< second moment of actuator mass [kg m^2]
    double gravity = 9.81;  ///< [m/s^2]
    double dipole_magnitude = 2.0;  ///< [A m^2]
    double damping = 0.0;   ///< viscous damping on both joints [N m s]
    /// No pendulum on top of the actuator: a two-state planar system.
    bool actuator_only = false;

    void validate() const {
        auto pos = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw ConfigError(std::string(name) + " must be positive", std::string("/plant/") + name);
        };
        pos(M, "M");
        pos(ell, "ell");
        pos(L, "L");
        pos(ell_m, "ell_m");
        pos(eta, "eta");
        pos(J, "J");
        pos(gravity, "gravity");
        pos(dipole_magnitude, "dipole_magnitude");
        if (!(damping >= 0.0) || !std::isfinite(damping))
            throw ConfigError("damping must be non-negative", "/plant/damping");
    }

    int state_size() const { return actuator_only ? 2 : 4; }
};

/// One planar channel: (alpha, phi) actuator and pendulum angle with rates.
/// A 3D agent holds two of these, (alpha, phi) and (beta, theta).
struct PendulumState {
    double alpha = 0.0;
    double phi = 0.0;
    double alpha_dot = 0.0;
    double phi_dot = 0.0;

    bool finite() const {
        return std::isfinite(alpha) && std::isfinite(phi) && std::isfinite(alpha_dot) &&
               std::isfinite(phi_dot);
    }
};

enum class Paradigm { field, torque };

inline std::string to_string(Paradigm p) { return p == Paradigm::field ? "field" : "torque"; }

inline Paradigm parse_paradigm(const std::string& s) {
    if (s == "field") return Paradigm::field;
    if (s == "torque") return Paradigm::torque;
    throw ConfigError("unknown paradigm '" + s + "' (expected field or torque)", "/paradigm");
}

/// Input of one planar channel. Field paradigm: `value` is the field angle u and
/// `field_magnitude` is |b|. Torque paradigm: `value` is the generalized torque.
struct PlanarInput {
    Paradigm paradigm = Paradigm::torque;
    double value = 0.0;
    double field_magnitude = 0.0;

    static PlanarInput torque(double tau) { return {Paradigm::torque, tau, 0.0}; }
    static PlanarInput field(double u, double b) { return {Paradigm::field, u, b}; }

    /// Generalized force on the actuator coordinate at angle alpha.
    double generalized_force(const PendulumParams& p, double alpha) const {
        if (paradigm == Paradigm::torque) return value;
        return p.dipole_magnitude * field_magnitude * std::sin(value - alpha);
    }
};

/// J a'' - eta g sin(a) = |m||b| sin(u - a), with optional damping.
inline double eom_actuator_field(const PendulumParams& p, double alpha, double alpha_dot,
                                 double u_alpha, double field_magnitude) {
    return (p.eta * p.gravity * std::sin(alpha) - p.damping * alpha_dot +
            p.dipole_magnitude * field_magnitude * std::sin(u_alpha - alpha)) / p.J;
}

/// J a'' - eta g sin(a) = tau, with optional damping.
inline double eom_actuator_torque(const PendulumParams& p, double alpha, double alpha_dot, double tau) {
    return (p.eta * p.gravity * std::sin(alpha) - p.damping * alpha_dot + tau) / p.J;
}

struct Accelerations {
    double alpha = 0.0;
    double phi = 0.0;
};

/// Actuator plus pendulum under a generalized actuator force q_alpha, from the
/// full nonlinear Lagrangian. `q_phi` is an extra generalized force on the pendulum.
inline Accelerations eom_pendulum_coupled_generalized(const PendulumParams& p, const PendulumState& x,
                                                      double q_alpha, double q_phi = 0.0) {
    if (p.actuator_only) {
        return {eom_actuator_torque(p, x.alpha, x.alpha_dot, q_alpha), 0.0};
    }
    const double s = std::sin(x.alpha - x.phi), c = std::cos(x.alpha - x.phi);
    const double h = 0.5 * p.M * p.ell * p.L;
    const double m11 = p.J + p.M * p.ell * p.ell;
    const double m12 = h * c;
    const double m22 = 0.25 * p.M * p.L * p.L;
    const double rel = x.phi_dot - x.alpha_dot;
    const double qa = q_alpha - p.damping * x.alpha_dot + p.damping * rel;
    const double qp = q_phi - p.damping * rel;
    const double r1 = qa + (p.eta + p.M * p.ell) * p.gravity * std::sin(x.alpha) - h * s * x.phi_dot * x.phi_dot;
    const double r2 = qp + 0.5 * p.M * p.gravity * p.L * std::sin(x.phi) + h * s * x.alpha_dot * x.alpha_dot;
    const double det = m11 * m22 - m12 * m12;
    return {(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det};
}

inline Accelerations eom_pendulum_coupled(const PendulumParams& p, const PendulumState& x,
                                          const PlanarInput& input) {
    if (p.actuator_only && input.paradigm == Paradigm::field)
        return {eom_actuator_field(p, x.alpha, x.alpha_dot, input.value, input.field_magnitude), 0.0};
    return eom_pendulum_coupled_generalized(p, x, input.generalized_force(p, x.alpha));
}

namespace detail {

inline PendulumState axpy(const PendulumState& x, double h, const PendulumState& d) {
    return {x.alpha + h * d.alpha, x.phi + h * d.phi, x.alpha_dot + h * d.alpha_dot, x.phi_dot + h * d.phi_dot};
}

inline PendulumState rk4_combine(const PendulumState& x, double h, const PendulumState& k1, const PendulumState& k2,
                                 const PendulumState& k3, const PendulumState& k4) {
    auto c = [&](double a, double d1, double d2, double d3, double d4) {
        return a + h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    };
    return {c(x.alpha, k1.alpha, k2.alpha, k3.alpha, k4.alpha), c(x.phi, k1.phi, k2.phi, k3.phi, k4.phi),
            c(x.alpha_dot, k1.alpha_dot, k2.alpha_dot, k3.alpha_dot, k4.alpha_dot),
            c(x.phi_dot, k1.phi_dot, k2.phi_dot, k3.phi_dot, k4.phi_dot)};
}

}  // namespace detail

/// One RK4 step of a planar channel with the input held over the step.
inline PendulumState rk4_step(const PendulumParams& p, const PendulumState& x, const PlanarInput& input, double h) {
    auto f = [&](const PendulumState& s) {
        const Accelerations acc = eom_pendulum_coupled(p, s, input);
        return PendulumState{s.alpha_dot, p.actuator_only ? 0.0 : s.phi_dot, acc.alpha, acc.phi};
    };
    const PendulumState k1 = f(x);
    const PendulumState k2 = f(detail::axpy(x, 0.5 * h, k1));
    const PendulumState k3 = f(detail::axpy(x, 0.5 * h, k2));
    const PendulumState k4 = f(detail::axpy(x, h, k3));
    return detail::rk4_combine(x, h, k1, k2, k3, k4);
}

/// Open-loop response to a constant input.
inline PendulumState integrate_channel(const PendulumParams& p, PendulumState x, const PlanarInput& input,
                                       double duration, double h) {
    if (!(h > 0.0) || !(duration >= 0.0)) throw ConfigError("integration step must be positive");
    const long n = std::lround(duration / h);
    for (long k = 0; k < n; ++k) x = rk4_step(p, x, input, h);
    return x;
}

/// Kinetic plus gravitational potential energy (magnetic energy excluded).
inline double mechanical_energy(const PendulumParams& p, const PendulumState& x) {
    if (p.actuator_only)
        return 0.5 * p.J * x.alpha_dot * x.alpha_dot + p.eta * p.gravity * std::cos(x.alpha);
    const double t = 0.5 * (p.J + p.M * p.ell * p.ell) * x.alpha_dot * x.alpha_dot +
                     0.125 * p.M * p.L * p.L * x.phi_dot * x.phi_dot +
                     0.5 * p.M * p.ell * p.L * x.alpha_dot * x.phi_dot * std::cos(x.alpha - x.phi);
    const double u = (p.eta + p.M * p.ell) * p.gravity * std::cos(x.alpha) +
                     0.5 * p.M * p.gravity * p.L * std::cos(x.phi);
    return t + u;
}

struct GradientAugmentedAccel {
    double alpha_ddot = 0.0;
    /// Outside the small-angle regime the linearized model is only indicative.
    bool approximate = false;
};

inline constexpr double kSmallAngleLimit = 0.2;

/// Actuator-only field alignment with first-order field variation across the
/// magnet offset: J a'' + d a' + (|m||b| - eta g) a = |m||b| u + l_m |m| (u_xy + u_yx).
inline GradientAugmentedAccel eom_field_with_gradients(const PendulumParams& p, double alpha,
                                                       double alpha_dot, double u_alpha,
                                                       double field_magnitude, double u_xy, double u_yx) {
    const double mb = p.dipole_magnitude * field_magnitude;
    const double rhs = mb * u_alpha + p.ell_m * p.dipole_magnitude * (u_xy + u_yx) -
                       (mb - p.eta * p.gravity) * alpha - p.damping * alpha_dot;
    return {rhs / p.J, std::abs(alpha) >= kSmallAngleLimit};
}

/// Truncated-series matrix exponential with scaling and squaring.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Eigen::MatrixXd as = a / std::ldexp(1.0, squarings);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    Eigen::MatrixXd term = sum;
    for (int k = 1; k < 40; ++k) {
        term = term * as / static_cast<double>(k);
        sum += term;
        if (term.norm() <= 1e-18 * sum.norm()) break;
    }
    for (int k = 0; k < squarings; ++k) sum = sum * sum;
    return sum;
}

struct LinearSystem {
    Eigen::MatrixXd a_matrix;
    Eigen::MatrixXd b_matrix;
    Eigen::MatrixXd a_d;
    Eigen::MatrixXd b_d;
    double sample_time = 0.0;

    int states() const { return static_cast<int>(a_matrix.rows()); }
};

/// Exact ZOH discretization: exp([[A, B], [0, 0]] dt).
inline LinearSystem discretize(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double dt) {
    if (!(dt > 0.0)) throw ConfigError("sample time must be positive");
    const auto n = a.rows(), m = b.cols();
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = a * dt;
    aug.topRightCorner(n, m) = b * dt;
    const Eigen::MatrixXd e = expm(aug);
    return {a, b, e.topLeftCorner(n, n), e.topRightCorner(n, m), dt};
}

/// Analytic linearization about the upright rest state. States are
/// (alpha, phi, alpha_dot, phi_dot), or (alpha, alpha_dot) when actuator_only.
/// Input is the generalized torque (torque paradigm) or the field angle u (field paradigm).
inline LinearSystem linearize(const PendulumParams& p, Paradigm paradigm, double field_magnitude,
                              double sample_time) {
    p.validate();
    const double mb = paradigm == Paradigm::field ? p.dipole_magnitude * field_magnitude : 0.0;
    const double gain = paradigm == Paradigm::field ? mb : 1.0;
    Eigen::MatrixXd a, b;
    if (p.actuator_only) {
        a.resize(2, 2);
        a << 0.0, 1.0, (p.eta * p.gravity - mb) / p.J, -p.damping / p.J;
        b.resize(2, 1);
        b << 0.0, gain / p.J;
    } else {
        Eigen::Matrix2d m0, k0, d0;
        const double h = 0.5 * p.M * p.ell * p.L;
        m0 << p.J + p.M * p.ell * p.ell, h, h, 0.25 * p.M * p.L * p.L;
        k0 << (p.eta + p.M * p.ell) * p.gravity - mb, 0.0, 0.0, 0.5 * p.M * p.gravity * p.L;
        d0 << 2.0 * p.damping, -p.damping, -p.damping, p.damping;
        const Eigen::Matrix2d minv = m0.inverse();
        a = Eigen::MatrixXd::Zero(4, 4);
        a.topRightCorner(2, 2).setIdentity();
        a.bottomLeftCorner(2, 2) = minv * k0;
        a.bottomRightCorner(2, 2) = -minv * d0;
        b = Eigen::MatrixXd::Zero(4, 1);
        b.bottomRows(2) = minv * Eigen::Vector2d(gain, 0.0);
    }
    return discretize(a, b, sample_time);
}

/// Right-hand side of the nonlinear model in the state layout of `linearize`.
inline Eigen::VectorXd nonlinear_rhs(const PendulumParams& p, Paradigm paradigm, double field_magnitude,
                                     const Eigen::VectorXd& x, double u) {
    const PlanarInput in = paradigm == Paradigm::field ? PlanarInput::field(u, field_magnitude)
                                                       : PlanarInput::torque(u);
    if (p.actuator_only) {
        const PendulumState s{x(0), 0.0, x(1), 0.0};
        Eigen::VectorXd dx(2);
        dx << x(1), eom_pendulum_coupled(p, s, in).alpha;
        return dx;
    }
    const PendulumState s{x(0), x(1), x(2), x(3)};
    const Accelerations acc = eom_pendulum_coupled(p, s, in);
    Eigen::VectorXd dx(4);
    dx << x(2), x(3), acc.alpha, acc.phi;
    return dx;
}

inline void to_json(nlohmann::json& j, const PendulumParams& p) {
    j = {{"M", p.M}, {"ell", p.ell}, {"L", p.L}, {"ell_m", p.ell_m}, {"eta", p.eta}, {"J", p.J},
         {"gravity", p.gravity}, {"dipole_magnitude", p.dipole_magnitude}, {"damping", p.damping},
         {"actuator_only", p.actuator_only}};
}

}  // namespace emns
