#pragma once

#include "emns/alloc.hpp"
#include "emns/dynamics.hpp"
#include "emns/magmodel.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace emns {

struct TaskSet {
    enum class Kind { torque_box, fixed_field };
    Kind kind = Kind::torque_box;
    double tau_bar = 0.01;          ///< [N m]
    double field_magnitude = 0.025; ///< along +z [T]

    void validate() const {
        if (kind == Kind::torque_box && !(tau_bar > 0.0)) throw ConfigError("tau_bar must be positive", "/tau_bar");
        if (kind == Kind::fixed_field && !(field_magnitude > 0.0))
            throw ConfigError("field_magnitude must be positive", "/field_magnitude");
    }

    std::string kind_name() const { return kind == Kind::torque_box ? "torque_box" : "fixed_field"; }

    static TaskSet torque_box(double tau_bar) { return {Kind::torque_box, tau_bar, 0.0}; }
    static TaskSet fixed_field(double b) { return {Kind::fixed_field, 0.0, b}; }
};

/// Axis-aligned lattice min + k * spacing, k = 0.. while inside [min, max].
struct GridSpec {
    Vec3 min = Vec3::Constant(-0.15);
    Vec3 max = Vec3::Constant(0.15);
    double spacing = 0.002;

    void validate() const {
        if (!(spacing > 0.0)) throw ConfigError("grid spacing must be positive", "/grid/spacing");
        if (!min.allFinite() || !max.allFinite()) throw ConfigError("grid bounds must be finite", "/grid");
    }

    int count(int axis) const {
        const double span = max(axis) - min(axis);
        if (span < 0.0) return 0;
        return static_cast<int>(std::floor(span / spacing + 1e-9)) + 1;
    }

    std::size_t size() const {
        return static_cast<std::size_t>(count(0)) * static_cast<std::size_t>(count(1)) *
               static_cast<std::size_t>(count(2));
    }

    /// x-major ordering: index = (ix * ny + iy) * nz + iz.
    Vec3 point(std::size_t index) const {
        const std::size_t ny = count(1), nz = count(2);
        const std::size_t iz = index % nz;
        const std::size_t iy = (index / nz) % ny;
        const std::size_t ix = index / (nz * ny);
        return {min.x() + ix * spacing, min.y() + iy * spacing, min.z() + iz * spacing};
    }
};

enum class PointFlag { ok, singular, near_contact };

inline const char* to_string(PointFlag f) {
    switch (f) {
        case PointFlag::ok: return "ok";
        case PointFlag::singular: return "singular";
        case PointFlag::near_contact: return "near_contact";
    }
    return "unknown";
}

struct MapPoint {
    Vec3 p = Vec3::Zero();
    double fm = 0.0;
    bool feasible = false;
    PointFlag flag = PointFlag::ok;
};

struct FeasibilityMap {
    std::string model;
    TaskSet task;
    GridSpec grid;
    double current_limit = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    std::optional<Vec3> second_agent;
    double near_contact_radius = 0.0;
    std::vector<MapPoint> points;

    std::size_t feasible_count() const {
        return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const MapPoint& m) {
            return m.feasible;
        }));
    }
};

inline constexpr double kSingularFm = -std::numeric_limits<double>::infinity();

namespace detail {

template <int N>
using ActMat = Eigen::Matrix<double, 8, N>;

template <int N>
ActMat<N> actuation_matrix_fixed(const ActuationModel& model, const Vec3& p) {
    ActMat<N> a(8, model.size());
    for (int j = 0; j < model.size(); ++j) a.col(j) = coil_column(model.coils()[j], p);
    return a;
}

/// Pivot-torque map rows of one agent, 3 x N.
template <int N>
Eigen::Matrix<double, 3, N> torque_rows(const ActMat<N>& a, const DipoleAgent& agent, double ell_m) {
    return wrench_maps(agent, ell_m).pivot_map() * a;
}

template <int N>
double fm_torque_single(const ActuationModel& model, const Vec3& p, double alpha, double beta,
                        const PendulumParams& params, double tau_bar, double ibar) {
    const DipoleAgent agent{p, alpha, beta, params.dipole_magnitude, 1};
    ActMat<N> a;
    try {
        a = actuation_matrix_fixed<N>(model, p);
    } catch (const SingularPositionError&) {
        return kSingularFm;
    }
    const Eigen::Matrix<double, 3, N> map = torque_rows<N>(a, agent, params.ell_m);
    int rank = 0;
    const auto mp = pinv(map, &rank);
    if (rank < kTorqueMapRank) return kSingularFm;
    const Mat3 rt = agent.rotation_transpose();
    double worst = 0.0;
    for (double sx : {1.0, -1.0})
        for (double sy : {1.0, -1.0}) {
            const Vec3 tau = rt * Vec3(sx * tau_bar, sy * tau_bar, 0.0);
            worst = std::max(worst, (mp * tau).cwiseAbs().maxCoeff());
        }
    return ibar - worst;
}

template <int N>
double fm_field_single(const ActuationModel& model, const Vec3& p, double b, double ibar) {
    if (b == 0.0) return ibar;
    ActMat<N> a;
    try {
        a = actuation_matrix_fixed<N>(model, p);
    } catch (const SingularPositionError&) {
        return kSingularFm;
    }
    if (model.size() >= 8) {
        Eigen::Matrix<double, 8, 1> target = Eigen::Matrix<double, 8, 1>::Zero();
        target(2) = b;
        return ibar - (pinv(a) * target).cwiseAbs().maxCoeff();
    }
    const Eigen::Matrix<double, 3, N> ab = a.template topRows<3>();
    int rank = 0;
    const auto abp = pinv(ab, &rank);
    if (rank < 3) return kSingularFm;
    return ibar - (abp * Vec3(0.0, 0.0, b)).cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Current headroom for the body-frame torque box |tau_x|, |tau_y| <= tau_bar
/// (tau_z = 0). The maximum of a convex function over the box sits at a vertex.
inline double feasibility_margin_torque(const ActuationModel& model, const Vec3& p, double alpha, double beta,
                                        const PendulumParams& params, double tau_bar, double ibar) {
    switch (model.size()) {
        case 3: return detail::fm_torque_single<3>(model, p, alpha, beta, params, tau_bar, ibar);
        case 8: return detail::fm_torque_single<8>(model, p, alpha, beta, params, tau_bar, ibar);
        default: return detail::fm_torque_single<Eigen::Dynamic>(model, p, alpha, beta, params, tau_bar, ibar);
    }
}

/// Current headroom for the single field |b| e_z (with zero gradient on models
/// with at least eight coils).
inline double feasibility_margin_field(const ActuationModel& model, const Vec3& p, double b, double ibar) {
    switch (model.size()) {
        case 3: return detail::fm_field_single<3>(model, p, b, ibar);
        case 8: return detail::fm_field_single<8>(model, p, b, ibar);
        default: return detail::fm_field_single<Eigen::Dynamic>(model, p, b, ibar);
    }
}

/// Two upright agents at p and p2, both holding the torque box.
inline double feasibility_margin_torque_pair(const ActuationModel& model, const Vec3& p, const Vec3& p2,
                                             const PendulumParams& params, double tau_bar, double ibar) {
    Eigen::MatrixXd stacked(6, model.size());
    try {
        const DipoleAgent a1{p, 0.0, 0.0, params.dipole_magnitude, 1};
        const DipoleAgent a2{p2, 0.0, 0.0, params.dipole_magnitude, 1};
        stacked.topRows(3) = wrench_maps(a1, params.ell_m).pivot_map() * actuation_matrix(model, p);
        stacked.bottomRows(3) = wrench_maps(a2, params.ell_m).pivot_map() * actuation_matrix(model, p2);
    } catch (const SingularPositionError&) {
        return kSingularFm;
    }
    int rank = 0;
    const Eigen::MatrixXd sp = pinv(stacked, &rank);
    if (rank < 2 * kTorqueMapRank) return kSingularFm;
    // Upright agents: body and world frames coincide.
    double worst = 0.0;
    for (int v = 0; v < 16; ++v) {
        Eigen::Matrix<double, 6, 1> tau;
        tau << ((v & 1) ? -tau_bar : tau_bar), ((v & 2) ? -tau_bar : tau_bar), 0.0,
               ((v & 4) ? -tau_bar : tau_bar), ((v & 8) ? -tau_bar : tau_bar), 0.0;
        worst = std::max(worst, (sp * tau).cwiseAbs().maxCoeff());
    }
    return ibar - worst;
}

/// Two agents at p and p2, both holding the field |b| e_z.
inline double feasibility_margin_field_pair(const ActuationModel& model, const Vec3& p, const Vec3& p2,
                                            double b, double ibar) {
    if (b == 0.0) return ibar;
    Eigen::MatrixXd stacked(6, model.size());
    try {
        stacked.topRows(3) = actuation_matrix(model, p).topRows<3>();
        stacked.bottomRows(3) = actuation_matrix(model, p2).topRows<3>();
    } catch (const SingularPositionError&) {
        return kSingularFm;
    }
    Eigen::Matrix<double, 6, 1> target;
    target << 0.0, 0.0, b, 0.0, 0.0, b;
    return ibar - (pinv(stacked) * target).cwiseAbs().maxCoeff();
}

struct WorkspaceOptions {
    double alpha = 0.0;
    double beta = 0.0;
    std::optional<Vec3> second_agent;
    double near_contact_radius = kNearContactDistance;
    int workers = 1;
};

/// Feasibility margin on every grid point. Points independent, so workers
/// split the index range; the result does not depend on the worker count.
inline FeasibilityMap workspace_map(const ActuationModel& model, const TaskSet& task, const GridSpec& grid,
                                    double ibar, const PendulumParams& params, const WorkspaceOptions& opt = {}) {
    task.validate();
    grid.validate();
    if (!(ibar > 0.0)) throw ConfigError("current limit must be positive", "/current_limit");
    FeasibilityMap map;
    map.model = model.name();
    map.task = task;
    map.grid = grid;
    map.current_limit = ibar;
    map.alpha = opt.alpha;
    map.beta = opt.beta;
    map.second_agent = opt.second_agent;
    if (opt.second_agent) map.near_contact_radius = opt.near_contact_radius;
    const std::size_t n = grid.size();
    map.points.resize(n);

    auto eval = [&](std::size_t k) {
        MapPoint& mp = map.points[k];
        mp.p = grid.point(k);
        if (opt.second_agent) {
            const Vec3& p2 = *opt.second_agent;
            mp.fm = task.kind == TaskSet::Kind::torque_box
                        ? feasibility_margin_torque_pair(model, mp.p, p2, params, task.tau_bar, ibar)
                        : feasibility_margin_field_pair(model, mp.p, p2, task.field_magnitude, ibar);
        } else {
            mp.fm = task.kind == TaskSet::Kind::torque_box
                        ? feasibility_margin_torque(model, mp.p, opt.alpha, opt.beta, params, task.tau_bar, ibar)
                        : feasibility_margin_field(model, mp.p, task.field_magnitude, ibar);
        }
        mp.feasible = mp.fm > 0.0;
        if (mp.fm == kSingularFm) mp.flag = PointFlag::singular;
        if (opt.second_agent && (mp.p - *opt.second_agent).norm() < opt.near_contact_radius)
            mp.flag = PointFlag::near_contact;
    };

    const int workers = std::max(1, opt.workers);
    if (workers == 1 || n < 1024) {
        for (std::size_t k = 0; k < n; ++k) eval(k);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] {
                for (std::size_t k = lo; k < hi; ++k) eval(k);
            });
        }
        for (auto& t : pool) t.join();
    }
    return map;
}

struct MapStats {
    std::size_t points = 0;
    std::size_t feasible = 0;
    /// Largest |coordinate| among feasible points, per axis; NaN when none.
    Vec3 max_abs_coordinate = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
};

inline MapStats map_stats(const FeasibilityMap& m) {
    MapStats s;
    s.points = m.points.size();
    for (const auto& p : m.points) {
        if (!p.feasible) continue;
        ++s.feasible;
        for (int a = 0; a < 3; ++a) {
            const double v = std::abs(p.p(a));
            if (!(s.max_abs_coordinate(a) >= v)) s.max_abs_coordinate(a) = v;
        }
    }
    return s;
}

struct WorkspaceComparison {
    MapStats field;
    MapStats torque;
    /// Points feasible for the field task but not the torque task (near-contact excluded).
    std::size_t field_only = 0;
    std::size_t torque_only = 0;
    bool torque_contains_field = false;
};

inline WorkspaceComparison compare_maps(const FeasibilityMap& field, const FeasibilityMap& torque) {
    if (field.points.size() != torque.points.size()) throw ConfigError("compared maps use different grids");
    WorkspaceComparison c;
    c.field = map_stats(field);
    c.torque = map_stats(torque);
    for (std::size_t k = 0; k < field.points.size(); ++k) {
        if (field.points[k].flag == PointFlag::near_contact || torque.points[k].flag == PointFlag::near_contact)
            continue;
        if (field.points[k].feasible && !torque.points[k].feasible) ++c.field_only;
        if (torque.points[k].feasible && !field.points[k].feasible) ++c.torque_only;
    }
    c.torque_contains_field = c.field_only == 0;
    return c;
}

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{:.12g}", v);
}

inline void write_map_csv(const FeasibilityMap& m, std::FILE* out) {
    fmt::print(out, "x,y,z,fm,feasible,flag\n");
    for (const auto& p : m.points)
        fmt::print(out, "{},{},{},{},{},{}\n", format_number(p.p.x()), format_number(p.p.y()),
                   format_number(p.p.z()), format_number(p.fm), p.feasible ? 1 : 0, to_string(p.flag));
}

inline nlohmann::json map_metadata(const FeasibilityMap& m) {
    nlohmann::json j;
    j["model"] = m.model;
    j["task"] = {{"kind", m.task.kind_name()}};
    if (m.task.kind == TaskSet::Kind::torque_box)
        j["task"]["tau_bar"] = m.task.tau_bar;
    else
        j["task"]["field_magnitude"] = m.task.field_magnitude;
    j["current_limit"] = m.current_limit;
    j["orientation"] = {{"alpha", m.alpha}, {"beta", m.beta}};
    j["second_agent"] = m.second_agent ? nlohmann::json::array({m.second_agent->x(), m.second_agent->y(),
                                                                m.second_agent->z()})
                                       : nlohmann::json(nullptr);
    if (m.second_agent) j["near_contact_radius"] = m.near_contact_radius;
    j["grid"] = {{"min", {m.grid.min.x(), m.grid.min.y(), m.grid.min.z()}},
                 {"max", {m.grid.max.x(), m.grid.max.y(), m.grid.max.z()}},
                 {"spacing", m.grid.spacing},
                 {"counts", {m.grid.count(0), m.grid.count(1), m.grid.count(2)}}};
    const MapStats s = map_stats(m);
    j["points"] = s.points;
    j["feasible_points"] = s.feasible;
    return j;
}

}  // namespace emns
