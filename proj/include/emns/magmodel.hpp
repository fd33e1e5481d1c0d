#pragma once

#include "emns/common.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace emns {

/// Point-dipole electromagnet: moment = moment_per_ampere * axis * current.
struct CoilSpec {
    Vec3 position = Vec3::Zero();
    Vec3 axis = Vec3::UnitZ();
    double moment_per_ampere = 1.0;
};

/// Field (3) and gradient (5) rows per ampere, one column per coil.
using ActuationMatrix = Eigen::Matrix<double, 8, Eigen::Dynamic>;

/// Closest admissible distance between an evaluation point and a coil center.
inline constexpr double kSingularDistance = 1e-6;

class ActuationModel {
public:
    ActuationModel() = default;

    ActuationModel(std::string name, std::vector<CoilSpec> coils)
        : name_(std::move(name)), coils_(std::move(coils)) {
        if (coils_.empty()) throw ConfigError("actuation model needs at least one coil");
        for (std::size_t j = 0; j < coils_.size(); ++j) {
            const auto& c = coils_[j];
            if (std::abs(c.axis.norm() - 1.0) > 1e-12)
                throw ConfigError("coil axis must have unit norm", "/coils/" + std::to_string(j) + "/axis");
            if (!(c.moment_per_ampere > 0.0))
                throw ConfigError("moment_per_ampere must be positive",
                                  "/coils/" + std::to_string(j) + "/moment_per_ampere");
            if (!c.position.allFinite())
                throw ConfigError("coil position must be finite", "/coils/" + std::to_string(j) + "/position");
        }
    }

    const std::string& name() const { return name_; }
    const std::vector<CoilSpec>& coils() const { return coils_; }
    int size() const { return static_cast<int>(coils_.size()); }

    /// Eight coils on two interleaved cones (45 deg and 90 deg polar angle) at 20 cm,
    /// all pointing at the origin.
    static ActuationModel octomag8() {
        constexpr double radius = 0.20;
        constexpr double k = 61.3;
        std::vector<CoilSpec> coils;
        auto add = [&](double polar_deg, double azimuth_deg) {
            const double th = deg2rad(polar_deg), ph = deg2rad(azimuth_deg);
            Vec3 u(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
            u.normalize();
            coils.push_back({radius * u, -u, k});
        };
        for (double az : {0.0, 90.0, 180.0, 270.0}) add(45.0, az);
        for (double az : {45.0, 135.0, 225.0, 315.0}) add(90.0, az);
        return ActuationModel("octomag8", std::move(coils));
    }

    /// Three parallel coils (axis +y) on a 15 cm triangle in the y = 0 plane.
    /// The workspace lies in front of them at y > 0.
    static ActuationModel navion3() {
        constexpr double radius = 0.15;
        constexpr double k = 28.2;
        std::vector<CoilSpec> coils;
        for (double az : {0.0, 120.0, 240.0}) {
            const double ph = deg2rad(az);
            coils.push_back({Vec3(radius * std::sin(ph), 0.0, radius * std::cos(ph)), Vec3::UnitY(), k});
        }
        return ActuationModel("navion3", std::move(coils));
    }

    static ActuationModel preset(const std::string& name) {
        if (name == "octomag8") return octomag8();
        if (name == "navion3") return navion3();
        throw ConfigError("unknown actuation preset '" + name + "'");
    }

    static ActuationModel from_json(const nlohmann::json& j);

    static ActuationModel load_json(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open coil file '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(ss.str());
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("malformed JSON: ") + e.what(), path);
        }
        return from_json(j);
    }

    nlohmann::json to_json() const {
        nlohmann::json coils = nlohmann::json::array();
        for (const auto& c : coils_)
            coils.push_back({{"position", {c.position.x(), c.position.y(), c.position.z()}},
                             {"axis", {c.axis.x(), c.axis.y(), c.axis.z()}},
                             {"moment_per_ampere", c.moment_per_ampere}});
        return {{"name", name_}, {"coils", coils}};
    }

private:
    std::string name_;
    std::vector<CoilSpec> coils_;
};

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError("expected an array of 3 numbers", path);
    Vec3 v;
    for (int k = 0; k < 3; ++k) {
        if (!j[k].is_number()) throw ConfigError("expected an array of 3 numbers", path);
        v(k) = j[k].get<double>();
    }
    return v;
}

}  // namespace detail

inline ActuationModel ActuationModel::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("coil model must be a JSON object");
    if (!j.contains("coils") || !j["coils"].is_array())
        throw ConfigError("missing array 'coils'", "/coils");
    std::string name = j.value("name", std::string("custom"));
    std::vector<CoilSpec> coils;
    for (std::size_t k = 0; k < j["coils"].size(); ++k) {
        const auto& c = j["coils"][k];
        const std::string base = "/coils/" + std::to_string(k);
        if (!c.is_object()) throw ConfigError("coil entry must be an object", base);
        for (const char* key : {"position", "axis", "moment_per_ampere"})
            if (!c.contains(key)) throw ConfigError(std::string("missing field '") + key + "'", base);
        if (!c["moment_per_ampere"].is_number())
            throw ConfigError("expected a number", base + "/moment_per_ampere");
        coils.push_back({detail::json_vec3(c["position"], base + "/position"),
                         detail::json_vec3(c["axis"], base + "/axis"),
                         c["moment_per_ampere"].get<double>()});
    }
    return ActuationModel(std::move(name), std::move(coils));
}

/// Field b and the five independent gradient entries g.
struct FieldState {
    Vec3 b = Vec3::Zero();
    /// (dbx/dx, dbx/dy, dbx/dz, dby/dy, dby/dz)
    Vec5 g = Vec5::Zero();

    /// Symmetric, traceless gradient matrix G(a, c) = d b_a / d x_c.
    Mat3 gradient_matrix() const {
        Mat3 m;
        m << g(0), g(1), g(2),
             g(1), g(3), g(4),
             g(2), g(4), -g(0) - g(3);
        return m;
    }

    static Vec5 pack(const Mat3& grad) {
        Vec5 g;
        g << grad(0, 0), grad(0, 1), grad(0, 2), grad(1, 1), grad(1, 2);
        return g;
    }

    static FieldState from_vector(const Eigen::Matrix<double, 8, 1>& v) {
        return {v.head<3>(), v.tail<5>()};
    }
};

namespace detail {

/// Field and gradient of one coil carrying one ampere.
inline Eigen::Matrix<double, 8, 1> coil_column(const CoilSpec& c, const Vec3& p) {
    const Vec3 r = p - c.position;
    const double d = r.norm();
    if (d <= kSingularDistance)
        throw SingularPositionError("evaluation point coincides with a coil center");
    const Vec3 m = c.moment_per_ampere * c.axis;
    const double d2 = d * d;
    const double inv3 = 1.0 / (d2 * d);
    const double inv5 = inv3 / d2;
    const double inv7 = inv5 / d2;
    const double mr = m.dot(r);
    const Vec3 b = kMu0Over4Pi * (3.0 * mr * inv5 * r - inv3 * m);
    Mat3 grad = 3.0 * inv5 * (r * m.transpose() + m * r.transpose() + mr * Mat3::Identity())
              - 15.0 * mr * inv7 * (r * r.transpose());
    grad *= kMu0Over4Pi;
    Eigen::Matrix<double, 8, 1> col;
    col << b, FieldState::pack(grad);
    return col;
}

}  // namespace detail

/// A(p): rows 0..2 field per ampere, rows 3..7 gradient per ampere.
inline ActuationMatrix actuation_matrix(const ActuationModel& model, const Vec3& p) {
    ActuationMatrix a(8, model.size());
    for (int j = 0; j < model.size(); ++j) a.col(j) = detail::coil_column(model.coils()[j], p);
    return a;
}

inline FieldState field_and_gradient(const ActuationModel& model, const Vec3& p,
                                     const Eigen::VectorXd& currents) {
    if (currents.size() != model.size())
        throw ConfigError("current vector length does not match the number of coils");
    return FieldState::from_vector(actuation_matrix(model, p) * currents);
}

/// Magnetic dipole with orientation parametrized by two tilt angles.
/// The orientation is R^T = Ry(alpha) * Rx(beta), the dipole points along
/// polarity * R^T e_z.
struct DipoleAgent {
    Vec3 p = Vec3::Zero();
    double alpha = 0.0;
    double beta = 0.0;
    double dipole_magnitude = 1.0;
    /// +1 or -1. Flips the moment without changing the geometry.
    int polarity = 1;

    /// Body-to-world rotation R^T.
    Mat3 rotation_transpose() const {
        const double ca = std::cos(alpha), sa = std::sin(alpha);
        const double cb = std::cos(beta), sb = std::sin(beta);
        Mat3 rt;
        rt << ca, sa * sb, sa * cb,
              0.0, cb, -sb,
              -sa, ca * sb, ca * cb;
        return rt;
    }

    /// World-to-body rotation R.
    Mat3 rotation() const { return rotation_transpose().transpose(); }

    /// Unit vector along the pendulum body axis (independent of polarity).
    Vec3 direction() const { return direction_of(alpha, beta); }

    Vec3 moment() const { return (polarity >= 0 ? 1.0 : -1.0) * dipole_magnitude * direction(); }

    static Vec3 direction_of(double alpha, double beta) {
        return {std::sin(alpha) * std::cos(beta), -std::sin(beta), std::cos(alpha) * std::cos(beta)};
    }
};

using Mat35 = Eigen::Matrix<double, 3, 5>;
using Mat38 = Eigen::Matrix<double, 3, 8>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat68 = Eigen::Matrix<double, 6, 8>;

struct WrenchMaps {
    Mat3 m_b;
    Mat35 m_g;
    Mat3 jac_tilde;
    /// [I | jac_tilde], maps [tau; f] at the magnet to pivot torque.
    Mat36 jac;

    /// Block-diagonal wrench map [tau; f] = diag(M_b, M_g) [b; g].
    Mat68 stacked() const {
        Mat68 m = Mat68::Zero();
        m.topLeftCorner<3, 3>() = m_b;
        m.bottomRightCorner<3, 5>() = m_g;
        return m;
    }

    /// J * diag(M_b, M_g): pivot torque from [b; g].
    Mat38 pivot_map() const { return jac * stacked(); }
};

inline Mat35 force_map(const Vec3& m) {
    Mat35 mg;
    mg << m.x(), m.y(), m.z(), 0.0, 0.0,
          0.0, m.x(), 0.0, m.y(), m.z(),
          -m.z(), 0.0, m.x(), -m.z(), m.y();
    return mg;
}

/// Wrench maps of a dipole sitting at arm length `arm_length` from a pivot.
inline WrenchMaps wrench_maps(const DipoleAgent& agent, double arm_length) {
    if (!(arm_length > 0.0)) throw ConfigError("arm length must be positive");
    if (!(agent.dipole_magnitude > 0.0)) throw ConfigError("dipole magnitude must be positive");
    const Vec3 m = agent.moment();
    WrenchMaps w;
    w.m_b = skew(m);
    w.m_g = force_map(m);
    w.jac_tilde = skew(arm_length * agent.direction());
    w.jac.leftCols<3>().setIdentity();
    w.jac.rightCols<3>() = w.jac_tilde;
    return w;
}

struct TorqueMapSvd {
    Mat3 u;
    Vec3 sigma;
    Mat3 v;
};

/// Closed-form SVD of skew(m): U = R^T U_body, Sigma = (|m|, |m|, 0), V = R^T.
inline TorqueMapSvd torque_map_svd(const DipoleAgent& agent) {
    if (!(agent.dipole_magnitude > 0.0)) throw ConfigError("dipole magnitude must be positive");
    const double s = agent.polarity >= 0 ? 1.0 : -1.0;
    Mat3 u_body;
    u_body << 0.0, -s, 0.0,
              s, 0.0, 0.0,
              0.0, 0.0, 1.0;
    const Mat3 rt = agent.rotation_transpose();
    TorqueMapSvd out;
    out.u = rt * u_body;
    out.sigma = Vec3(agent.dipole_magnitude, agent.dipole_magnitude, 0.0);
    out.v = rt;
    return out;
}

}  // namespace emns
