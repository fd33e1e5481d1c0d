#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace emns {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;

/// mu_0 / (4 pi) in T*m/A.
inline constexpr double kMu0Over4Pi = 1e-7;

/// Singular values below this fraction of sigma_max are treated as zero.
inline constexpr double kPinvTolerance = 1e-10;

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double d) { return d * kPi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / kPi; }

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Evaluation point sits on a coil center.
class SingularPositionError : public Error {
public:
    using Error::Error;
};

/// Allocation map lost rank. `agent` is -1 when it cannot be attributed.
class RankDeficiencyError : public Error {
public:
    RankDeficiencyError(const std::string& what, int rank, int expected, int agent = -1)
        : Error(what), rank_(rank), expected_(expected), agent_(agent) {}
    int rank() const { return rank_; }
    int expected() const { return expected_; }
    int agent() const { return agent_; }

private:
    int rank_;
    int expected_;
    int agent_;
};

/// Nullspace coefficient undefined because its normalizer vanished.
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// Riccati iteration failed or produced a non-stabilizing gain.
class SynthesisError : public Error {
public:
    using Error::Error;
};

/// Invalid parameters or configuration. `path` locates the offending entry.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::string path = {})
        : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

inline Mat3 skew(const Vec3& v) {
    Mat3 s;
    s << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return s;
}

template <typename Derived>
using PinvType = Eigen::Matrix<typename Derived::Scalar, Derived::ColsAtCompileTime,
                               Derived::RowsAtCompileTime>;

/// Moore-Penrose pseudoinverse with the relative rank tolerance above.
/// Optionally reports the numerical rank.
template <typename Derived>
PinvType<Derived> pinv(const Eigen::MatrixBase<Derived>& a, int* rank = nullptr,
                       double rel_tol = kPinvTolerance) {
    using Plain = typename Derived::PlainObject;
    constexpr bool dynamic = Derived::ColsAtCompileTime == Eigen::Dynamic;
    constexpr int opts = dynamic ? (Eigen::ComputeThinU | Eigen::ComputeThinV)
                                 : (Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::JacobiSVD<Plain> svd(a.eval(), opts);
    const auto& s = svd.singularValues();
    PinvType<Derived> out(a.cols(), a.rows());
    out.setZero();
    int r = 0;
    if (s.size() > 0 && s(0) > 0.0) {
        const double cut = rel_tol * s(0);
        for (Eigen::Index k = 0; k < s.size(); ++k) {
            if (s(k) < cut) break;
            out.noalias() += svd.matrixV().col(k) * (1.0 / s(k)) * svd.matrixU().col(k).transpose();
            ++r;
        }
    }
    if (rank) *rank = r;
    return out;
}

template <typename Derived>
int numerical_rank(const Eigen::MatrixBase<Derived>& a, double rel_tol = kPinvTolerance) {
    Eigen::JacobiSVD<typename Derived::PlainObject> svd(a.eval());
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= 0.0) return 0;
    int r = 0;
    for (Eigen::Index k = 0; k < s.size(); ++k)
        if (s(k) >= rel_tol * s(0)) ++r;
    return r;
}

inline double spectral_radius(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    return m.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace emns
