#include "catch_amalgamated.hpp"

#include <cmath>
#include <numbers>

#include "test_support.hpp"

using namespace fieldalign;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

}  // namespace

TEST_CASE("zero angles give the identity", "[geometry]") {
    REQUIRE(rotation_matrix(vec({0.0, 0.0, 0.0})).isApprox(Matrix::Identity(3, 3)));
    REQUIRE(rotation_matrix(vec({0.0})).isApprox(Matrix::Identity(2, 2)));
}

TEST_CASE("quarter turn of the first angle", "[geometry]") {
    Matrix expected(3, 3);
    expected << 0, 1, 0, -1, 0, 0, 0, 0, 1;
    REQUIRE((rotation_matrix(vec({pi / 2, 0.0, 0.0})) - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("planar half turn", "[geometry]") {
    Matrix expected(2, 2);
    expected << -1, 0, 0, -1;
    REQUIRE((rotation_matrix(vec({-pi})) - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("product order is theta3 factor times theta2 factor times theta1 factor", "[geometry]") {
    const double a = 0.3, b = -0.5, c = 1.1;
    auto rz = [](double t) {
        Matrix r(3, 3);
        r << std::cos(t), std::sin(t), 0, -std::sin(t), std::cos(t), 0, 0, 0, 1;
        return r;
    };
    auto rx = [](double t) {
        Matrix r(3, 3);
        r << 1, 0, 0, 0, std::cos(t), std::sin(t), 0, -std::sin(t), std::cos(t);
        return r;
    };
    const Matrix expected = rz(c) * rx(b) * rz(a);
    REQUIRE((rotation_matrix(vec({a, b, c})) - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("angles outside the box are rejected", "[geometry]") {
    REQUIRE_THROWS_AS(rotation_matrix(vec({0.0, pi / 2, 0.0})), DomainError);
    REQUIRE_THROWS_AS(rotation_matrix(vec({pi, 0.0, 0.0})), DomainError);
    REQUIRE_NOTHROW(rotation_matrix(vec({0.0, 2.0, 0.0}), EulerDomain::Extended));
    REQUIRE_THROWS_AS(rotation_matrix(vec({0.1, 0.2})), DomainError);
}

TEST_CASE("wrap_angle lands in [-pi, pi)", "[geometry]") {
    REQUIRE(wrap_angle(pi) == Approx(-pi));
    REQUIRE(wrap_angle(3 * pi / 2) == Approx(-pi / 2));
    REQUIRE(wrap_angle(-3 * pi / 2) == Approx(pi / 2));
    REQUIRE(wrap_angle(0.25) == 0.25);
    for (double a = -20.0; a < 20.0; a += 0.37) {
        const double w = wrap_angle(a);
        REQUIRE(w >= -pi);
        REQUIRE(w < pi);
        REQUIRE(std::abs(std::remainder(w - a, 2 * pi)) < 1e-12);
    }
}

TEST_CASE("matrix to angles round trip", "[geometry]") {
    Rng rng = make_rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const Matrix r = random_rotation(3, rng);
        const Vector e = euler_from_rotation(r);
        REQUIRE(in_euler_domain(e, EulerDomain::Extended));
        REQUIRE((rotation_matrix(e, EulerDomain::Extended) - r).cwiseAbs().maxCoeff() < 1e-10);
        if (r(2, 2) > 1e-9) REQUIRE(in_euler_domain(e, EulerDomain::Principal));
    }
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix r = random_rotation(2, rng);
        REQUIRE((rotation_matrix(euler_from_rotation(r)) - r).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("gimbal-lock rotations round trip", "[geometry]") {
    for (double a : {-2.0, 0.0, 1.0}) {
        const Matrix r0 = rotation_matrix(vec({a, 0.0, 0.4}));
        REQUIRE((rotation_matrix(euler_from_rotation(r0), EulerDomain::Extended) - r0).cwiseAbs().maxCoeff() < 1e-10);
        const Matrix r1 = rotation_matrix(vec({a, -pi, 0.4}), EulerDomain::Extended);
        REQUIRE((rotation_matrix(euler_from_rotation(r1), EulerDomain::Extended) - r1).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("rotation matrices are orthogonal with unit determinant", "[geometry]") {
    Rng rng = make_rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const Vector e = vec({uniform(rng, -pi, pi), uniform(rng, -pi / 2, pi / 2), uniform(rng, -pi, pi)});
        const Matrix g = rotation_matrix(e);
        REQUIRE((g.transpose() * g - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(std::abs(g.determinant() - 1.0) < 1e-12);
    }
}

TEST_CASE("apply_transform basics", "[geometry]") {
    Points origin = Points::Zero(1, 3);
    RigidTransform t = RigidTransform::identity(3);
    t.translation = vec({1.0, 2.0, 3.0});
    REQUIRE(apply_transform(t, origin).row(0).transpose().isApprox(vec({1.0, 2.0, 3.0})));

    Rng rng = make_rng(13);
    const Points p = testing::separated_points(8, 3, 2.0, 0.1, rng);
    REQUIRE(apply_transform(RigidTransform::identity(3), p) == p);
    REQUIRE_THROWS_AS(apply_transform(RigidTransform::identity(2), p), DomainError);
}

TEST_CASE("compose and inverse", "[geometry]") {
    Rng rng = make_rng(14);
    const Points p = testing::separated_points(6, 3, 3.0, 0.2, rng);
    const RigidTransform f = testing::random_transform(3, 2.0, rng);
    const RigidTransform g = testing::random_transform(3, 2.0, rng);
    const Points fg = apply_transform(compose(f, g), p);
    REQUIRE((fg - apply_transform(f, apply_transform(g, p))).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((apply_transform(inverse(f), apply_transform(f, p)) - p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rotation prior density", "[geometry]") {
    REQUIRE(euler_prior_log_density(vec({0.5, 0.0, -0.2})) == 0.0);
    REQUIRE(euler_prior_log_density(vec({0.5, pi / 3, -0.2})) == Approx(std::log(0.5)).epsilon(1e-14));
    REQUIRE(euler_prior_log_density(vec({1.0})) == 0.0);
    REQUIRE(euler_prior_log_density(vec({0.0, -pi / 2, 0.0})) == -std::numeric_limits<double>::infinity());
    REQUIRE(euler_prior_log_density(vec({0.0, 2 * pi / 3, 0.0}), EulerDomain::Extended) ==
            Approx(std::log(0.5)).epsilon(1e-13));
}

TEST_CASE("rmsd examples", "[geometry]") {
    Points a(1, 2), b(1, 2);
    a << 0, 0;
    b << 3, 4;
    REQUIRE(rmsd(a, b) == 5.0);
    Points c(2, 2), d(2, 2);
    c << 0, 0, 0, 0;
    d << 1, 0, 0, 1;
    REQUIRE(rmsd(c, d) == Approx(1.0));
    REQUIRE(rmsd(d, apply_transform(RigidTransform::identity(2), d)) == 0.0);
    REQUIRE_THROWS_AS(rmsd(a, c), DomainError);
}

TEST_CASE("marked point set validation", "[geometry]") {
    REQUIRE_THROWS_AS(MarkedPointSet(Points(0, 3), Vector(0)), DomainError);
    REQUIRE_THROWS_AS(MarkedPointSet(Points::Zero(2, 3), Vector::Zero(3)), DomainError);
    REQUIRE_THROWS_AS(MarkedPointSet(Points::Zero(2, 4), Vector::Zero(2)), DomainError);
    Points bad = Points::Zero(2, 2);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(MarkedPointSet(bad, Vector::Zero(2)), DomainError);
    REQUIRE_THROWS_AS(MarkedPointSet(Points::Zero(2, 2), Vector::Zero(2), {"C"}), DomainError);
    const MarkedPointSet ok(Points::Zero(2, 3), Vector::Ones(2), {"C", "O"});
    REQUIRE(ok.size() == 2);
    REQUIRE(ok.dim() == 3);
}

TEST_CASE("principal frame is centered and ordered", "[geometry]") {
    Rng rng = make_rng(15);
    Points p(40, 3);
    for (int i = 0; i < 40; ++i) p.row(i) << 4 * standard_normal(rng), 2 * standard_normal(rng), standard_normal(rng);
    const Points moved = apply_transform(testing::random_transform(3, 5.0, rng), p);
    const PrincipalFrame f = principal_frame(moved);
    REQUIRE(std::abs(f.rotation.determinant() - 1.0) < 1e-12);
    const Points q = f.to_frame(moved);
    REQUIRE(q.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    const Matrix cov = q.transpose() * q / 40.0;
    REQUIRE(std::abs(cov(0, 1)) < 1e-9);
    REQUIRE(std::abs(cov(0, 2)) < 1e-9);
    REQUIRE(cov(0, 0) >= cov(1, 1));
    REQUIRE(cov(1, 1) >= cov(2, 2));
    // the frame does not depend on the pose the points arrive in
    const PrincipalFrame g = principal_frame(p);
    REQUIRE((g.to_frame(p) - q).cwiseAbs().maxCoeff() < 1e-8);
}
