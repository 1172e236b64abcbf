#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "fieldalign/error.hpp"

namespace fieldalign {

/// k x m coordinate block, one point per row.
using Points = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Points in R^2 or R^3 carrying one scalar mark each.
struct MarkedPointSet {
    Points coords;
    Vector marks;
    std::vector<std::string> labels;  // empty or one per point

    MarkedPointSet() = default;
    MarkedPointSet(Points c, Vector z, std::vector<std::string> l = {})
        : coords(std::move(c)), marks(std::move(z)), labels(std::move(l)) {
        validate();
    }

    Eigen::Index size() const { return coords.rows(); }
    int dim() const { return static_cast<int>(coords.cols()); }

    void validate() const {
        if (coords.rows() < 1)
            throw DomainError("marked point set must contain at least one point");
        if (coords.cols() != 2 && coords.cols() != 3)
            throw DomainError("marked point set dimension must be 2 or 3");
        if (coords.rows() != marks.size())
            throw DomainError("coordinate rows and mark count differ");
        if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != coords.rows())
            throw DomainError("label count differs from point count");
        if (!coords.allFinite() || !marks.allFinite())
            throw DomainError("coordinates and marks must be finite");
    }
};

/// Which Euler-angle box a rotation parameter is checked against.
///
/// Principal: theta1, theta3 in [-pi, pi), theta2 in [-pi/2, pi/2). With the
/// z-x-z product this box only reaches rotations whose (3,3) entry is
/// nonnegative. Extended lets theta2 range over [-pi, pi) so every rotation is
/// reachable; the samplers work in this box.
enum class EulerDomain { Principal, Extended };

inline int euler_count(int dim) { return dim * (dim - 1) / 2; }

/// Maps an angle onto [-pi, pi).
inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a + std::numbers::pi, two_pi);
    if (r < 0.0) r += two_pi;
    r -= std::numbers::pi;
    if (r >= std::numbers::pi) r -= two_pi;
    return r;
}

inline bool in_euler_domain(const Vector& euler, EulerDomain domain = EulerDomain::Principal) {
    constexpr double pi = std::numbers::pi;
    auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v < hi; };
    if (euler.size() == 1) return in(euler[0], -pi, pi);
    if (euler.size() != 3) return false;
    const double half = domain == EulerDomain::Principal ? pi / 2 : pi;
    return in(euler[0], -pi, pi) && in(euler[1], -half, half) && in(euler[2], -pi, pi);
}

namespace detail {

inline Matrix rotation_product(const Vector& euler) {
    if (euler.size() == 1) {
        const double c = std::cos(euler[0]), s = std::sin(euler[0]);
        Matrix r(2, 2);
        r << c, -s, s, c;
        return r;
    }
    auto about_z = [](double t) {
        Matrix r = Matrix::Identity(3, 3);
        r(0, 0) = std::cos(t);
        r(0, 1) = std::sin(t);
        r(1, 0) = -std::sin(t);
        r(1, 1) = std::cos(t);
        return r;
    };
    auto about_x = [](double t) {
        Matrix r = Matrix::Identity(3, 3);
        r(1, 1) = std::cos(t);
        r(1, 2) = std::sin(t);
        r(2, 1) = -std::sin(t);
        r(2, 2) = std::cos(t);
        return r;
    };
    return about_z(euler[2]) * about_x(euler[1]) * about_z(euler[0]);
}

}  // namespace detail

/// Rotation for Euler angles: the planar rotation for m = 2, the x-convention
/// product R_z(theta3) R_x(theta2) R_z(theta1) for m = 3.
inline Matrix rotation_matrix(const Vector& euler, EulerDomain domain = EulerDomain::Principal) {
    if (euler.size() != 1 && euler.size() != 3)
        throw DomainError("Euler vector must have 1 (m=2) or 3 (m=3) angles");
    if (!in_euler_domain(euler, domain))
        throw DomainError("Euler angles outside their domain");
    return detail::rotation_product(euler);
}

/// Inverse of rotation_matrix. Returns Principal-domain angles whenever the
/// rotation is reachable there, Extended-domain angles otherwise.
inline Vector euler_from_rotation(const Matrix& r) {
    auto clamp = [](double v) { return std::max(-1.0, std::min(1.0, v)); };
    if (r.rows() == 2) {
        Vector e(1);
        e[0] = wrap_angle(std::atan2(r(1, 0), r(0, 0)));
        return e;
    }
    if (r.rows() != 3 || r.cols() != 3) throw DomainError("rotation must be 2x2 or 3x3");
    Vector e(3);
    const double c2 = clamp(r(2, 2));
    const double s2 = std::hypot(r(2, 0), r(2, 1));
    const double theta2 = std::atan2(s2, c2);  // [0, pi]
    if (s2 < 1e-12) {
        // theta2 in {0, pi}: only theta1 +/- theta3 is determined, take theta3 = 0.
        e[0] = wrap_angle(std::atan2(r(0, 1), r(0, 0)));
        e[1] = c2 > 0 ? 0.0 : -std::numbers::pi;
        e[2] = 0.0;
        return e;
    }
    e[0] = std::atan2(r(2, 0), -r(2, 1));
    e[1] = theta2;
    e[2] = std::atan2(r(0, 2), r(1, 2));
    if (theta2 == std::numbers::pi / 2) {
        // +pi/2 is outside the principal box; (t1 + pi, -t2, t3 + pi) is the same rotation.
        e[0] += std::numbers::pi;
        e[1] = -theta2;
        e[2] += std::numbers::pi;
    }
    e[0] = wrap_angle(e[0]);
    e[2] = wrap_angle(e[2]);
    return e;
}

/// x -> Gamma(theta) x + gamma.
struct RigidTransform {
    Vector euler;
    Vector translation;

    static RigidTransform identity(int dim) {
        return {Vector::Zero(euler_count(dim)), Vector::Zero(dim)};
    }

    int dim() const { return static_cast<int>(translation.size()); }

    Matrix rotation() const { return rotation_matrix(euler, EulerDomain::Extended); }

    /// Builds a transform from a rotation matrix, recovering Euler angles.
    static RigidTransform from_matrix(const Matrix& rotation, const Vector& shift) {
        return {euler_from_rotation(rotation), shift};
    }
};

inline void check_transform_shape(const RigidTransform& t) {
    const int m = t.dim();
    if ((m != 2 && m != 3) || t.euler.size() != euler_count(m))
        throw DomainError("rigid transform has inconsistent dimensions");
}

/// Applies the transform to every row of points.
inline Points apply_transform(const RigidTransform& t, const Points& points) {
    check_transform_shape(t);
    if (points.cols() != t.dim()) throw DomainError("point dimension does not match transform");
    const Matrix g = t.rotation();
    Points out = points * g.transpose();
    out.rowwise() += t.translation.transpose();
    return out;
}

/// Applies a raw rotation + shift to every row.
inline Points apply_rotation(const Matrix& rotation, const Vector& shift, const Points& points) {
    Points out = points * rotation.transpose();
    out.rowwise() += shift.transpose();
    return out;
}

/// first o second, i.e. x -> first(second(x)).
inline RigidTransform compose(const RigidTransform& first, const RigidTransform& second) {
    const Matrix g1 = first.rotation();
    return RigidTransform::from_matrix(g1 * second.rotation(),
                                       g1 * second.translation + first.translation);
}

inline RigidTransform inverse(const RigidTransform& t) {
    const Matrix gt = t.rotation().transpose();
    return RigidTransform::from_matrix(gt, -gt * t.translation);
}

/// Unnormalized log density of the uniform rotation law in Euler coordinates.
///
/// m = 2 is flat. m = 3 is log cos(theta2); in the Extended domain the
/// density is continued as |cos(theta2)|. cos(theta2) = 0 gives -infinity.
inline double euler_prior_log_density(const Vector& euler,
                                      EulerDomain domain = EulerDomain::Principal) {
    if (!in_euler_domain(euler, domain)) throw DomainError("Euler angles outside their domain");
    if (euler.size() == 1) return 0.0;
    const double c = std::abs(std::cos(euler[1]));
    if (euler[1] == -std::numbers::pi / 2 || c == 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(c);
}

/// Root mean square of row-wise Euclidean distances.
inline double rmsd(const Points& a, const Points& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DomainError("rmsd needs equally shaped point blocks");
    if (a.rows() == 0) throw DomainError("rmsd of empty point blocks");
    return std::sqrt((a - b).rowwise().squaredNorm().mean());
}

/// Centering + rotation that puts a point set on its principal axes.
struct PrincipalFrame {
    Vector center;
    Matrix rotation;  // rows are the principal directions

    Points to_frame(const Points& p) const {
        Points centered = p.rowwise() - center.transpose();
        return centered * rotation.transpose();
    }
};

/// Principal axes with eigenvalues descending. Each axis is oriented so the
/// third central moment of the projected coordinates is nonnegative; for
/// m = 3 the last axis is then flipped if needed to keep det = +1.
inline PrincipalFrame principal_frame(const Points& p) {
    PrincipalFrame f;
    f.center = p.colwise().mean().transpose();
    const Points c = p.rowwise() - f.center.transpose();
    const Matrix cov = c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(1, p.rows()));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Eigen::Index m = p.cols();
    f.rotation.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
        Vector axis = eig.eigenvectors().col(m - 1 - a);
        const Vector proj = c * axis;
        if (proj.array().cube().sum() < 0.0) axis = -axis;
        f.rotation.row(a) = axis.transpose();
    }
    if (f.rotation.determinant() < 0.0) f.rotation.row(m - 1) *= -1.0;
    return f;
}

}  // namespace fieldalign
