#include "catch_amalgamated.hpp"

#include "test_support.hpp"

using namespace fieldalign;
using Catch::Approx;

TEST_CASE("Carbo dissimilarity map", "[similarity]") {
    REQUIRE(carbo_dissimilarity(1.0) == 0.0);
    REQUIRE(carbo_dissimilarity(0.0) == 1.0);
    REQUIRE(carbo_dissimilarity(0.5) == Approx(1.0 / 3.0));
    REQUIRE(std::isinf(carbo_dissimilarity(-1.0)));
    for (double c = -0.99; c <= 1.0; c += 0.01)
        REQUIRE(carbo_similarity_from_dissimilarity(carbo_dissimilarity(c)) == Approx(c).margin(1e-12));
    REQUIRE(carbo_similarity_from_dissimilarity(std::numeric_limits<double>::infinity()) == -1.0);
}

TEST_CASE("a field is fully similar to itself", "[similarity]") {
    Rng rng = make_rng(41);
    const Points p = testing::separated_points(9, 3, 2.0, 0.3, rng);
    const Vector z = testing::normal_vector(9, rng);
    const auto f = PredictedField::build(p, z, full_mask(9), CovarianceModel::matern(0.5, 1.0));
    const auto s = partial_carbo(f, f, RigidTransform::identity(3));
    REQUIRE(s.similarity == Approx(1.0).margin(1e-12));
    REQUIRE(s.dissimilarity == Approx(0.0).margin(1e-12));
    REQUIRE(rkhs_inner(f, f, RigidTransform::identity(3)) == Approx(f.norm() * f.norm()).epsilon(1e-10));
}

TEST_CASE("negated marks are fully dissimilar", "[similarity]") {
    Rng rng = make_rng(42);
    const Points p = testing::separated_points(5, 2, 1.0, 0.2, rng);
    const Vector z = testing::normal_vector(5, rng);
    const auto model = CovarianceModel::gaussian(0.7);
    const auto f = PredictedField::build(p, z, full_mask(5), model);
    const auto g = PredictedField::build(p, -z, full_mask(5), model);
    const auto s = partial_carbo(f, g, RigidTransform::identity(2));
    REQUIRE(s.similarity == Approx(-1.0).margin(1e-12));
    REQUIRE(s.dissimilarity > 1e10);
}

TEST_CASE("inner product equals the explicit double sum", "[similarity]") {
    Rng rng = make_rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = trial % 2 ? 3 : 2;
        const Points pa = testing::separated_points(8, m, 2.0, 0.2, rng);
        const Points pb = testing::separated_points(6, m, 2.0, 0.2, rng);
        const auto model = CovarianceModel::matern(1.0, 1.0);
        const auto a = PredictedField::build(pa, testing::normal_vector(8, rng), testing::random_mask(8, rng), model);
        const auto b = PredictedField::build(pb, testing::normal_vector(6, rng), testing::random_mask(6, rng), model);
        const RigidTransform t = testing::random_transform(m, 1.0, rng);
        REQUIRE(std::abs(rkhs_inner(a, b, t) - testing::brute_inner(a, b, t)) < 1e-10);
        const auto s = partial_carbo(a, b, t);
        REQUIRE(std::abs(s.similarity) <= 1.0);
        REQUIRE(s.dissimilarity >= 0.0);
    }
}

TEST_CASE("moving both fields together leaves the score unchanged", "[similarity]") {
    Rng rng = make_rng(44);
    const Points pa = testing::separated_points(7, 3, 2.0, 0.3, rng);
    const Points pb = testing::separated_points(7, 3, 2.0, 0.3, rng);
    const auto model = CovarianceModel::gaussian(1.5);
    const auto a = PredictedField::build(pa, testing::normal_vector(7, rng), full_mask(7), model);
    const auto b = PredictedField::build(pb, testing::normal_vector(7, rng), full_mask(7), model);
    const RigidTransform t = testing::random_transform(3, 1.0, rng);
    const RigidTransform u = testing::random_transform(3, 3.0, rng);
    const double before = rkhs_inner(a, b, t);
    const double after = rkhs_inner(a.transformed(u), b, compose(u, t));
    REQUIRE(after == Approx(before).epsilon(1e-10));
}

TEST_CASE("inner product is symmetric under the inverse transform", "[similarity]") {
    Rng rng = make_rng(45);
    const Points pa = testing::separated_points(6, 2, 1.5, 0.2, rng);
    const Points pb = testing::separated_points(5, 2, 1.5, 0.2, rng);
    const auto model = CovarianceModel::matern(1.5, 0.8);
    const auto a = PredictedField::build(pa, testing::normal_vector(6, rng), full_mask(6), model);
    const auto b = PredictedField::build(pb, testing::normal_vector(5, rng), full_mask(5), model);
    const RigidTransform t = testing::random_transform(2, 1.0, rng);
    REQUIRE(rkhs_inner(a, b, t) == Approx(rkhs_inner(b, a, inverse(t))).epsilon(1e-10));
}

TEST_CASE("model mismatch and empty fields are errors", "[similarity]") {
    Points p(2, 2);
    p << 0, 0, 1, 1;
    const auto a = PredictedField::build(p, Vector::Ones(2), full_mask(2), CovarianceModel::gaussian(1.0));
    const auto b = PredictedField::build(p, Vector::Ones(2), full_mask(2), CovarianceModel::gaussian(2.0));
    REQUIRE_THROWS_AS(rkhs_inner(a, b, RigidTransform::identity(2)), ConfigError);
    REQUIRE_THROWS_AS(rkhs_inner(a, PredictedField(), RigidTransform::identity(2)), EmptyFieldError);
}

TEST_CASE("two channel combination", "[similarity]") {
    const auto q = CarboScore::from_inner(0.5, 1.0, 1.0);
    const auto s = CarboScore::from_inner(0.8, 1.0, 1.0);
    REQUIRE(combined_carbo(q, s, 1.0) == q.dissimilarity);
    REQUIRE(combined_carbo(q, s, 0.0) == s.dissimilarity);
    REQUIRE(combined_carbo(q, s, 0.25) == Approx(0.25 * (1.0 / 3.0) + 0.75 * (0.2 / 1.8)));
    REQUIRE_THROWS_AS(combined_carbo(q, s, 1.5), DomainError);
}

TEST_CASE("scores are clamped to the unit interval", "[similarity]") {
    REQUIRE(CarboScore::from_inner(1.0 + 1e-15, 1.0, 1.0).similarity == 1.0);
    REQUIRE(CarboScore::from_inner(-2.0, 1.0, 1.0).similarity == -1.0);
    REQUIRE(CarboScore::from_inner(3.0, 2.0, 3.0).similarity == 0.5);
}
