#include "catch_amalgamated.hpp"

#include "test_support.hpp"

using namespace fieldalign;
using Catch::Approx;

namespace {

struct Family {
    std::vector<MarkedPointSet> sets;
    std::vector<RigidTransform> truth;  // maps set i back onto set 0
};

/// Copies of one labelled set under random rigid motions, one point dropped per copy.
Family family(int n, int k, int m, std::uint64_t seed, double noise = 0.0) {
    Rng rng = make_rng(seed);
    const Points p = testing::separated_points(k, m, 1.5, 0.3, rng);
    const Vector z = testing::normal_vector(k, rng);
    Family f;
    for (int i = 0; i < n; ++i) {
        RigidTransform t = RigidTransform::identity(m);
        if (i > 0) {
            for (auto& e : t.euler) e = uniform(rng, -0.3, 0.3);
            for (auto& s : t.translation) s = uniform(rng, -0.3, 0.3);
        }
        const int keep = i == 0 ? k : k - 1;
        Points q = apply_transform(t, p.topRows(keep));
        Vector w = z.head(keep);
        for (int l = 0; l < keep; ++l) w[l] += noise * standard_normal(rng);
        f.sets.emplace_back(q, w);
        f.truth.push_back(inverse(t));
    }
    return f;
}

std::vector<Mask> full_masks(const std::vector<MarkedPointSet>& sets) {
    std::vector<Mask> out;
    for (const auto& s : sets) out.push_back(full_mask(s.size()));
    return out;
}

}  // namespace

TEST_CASE("criterion counts unordered pairs of identical fields", "[gpa]") {
    Rng rng = make_rng(71);
    const Points p = testing::separated_points(6, 2, 1.0, 0.2, rng);
    const MarkedPointSet s(p, testing::normal_vector(6, rng));
    const std::vector<MarkedPointSet> sets(5, s);
    const std::vector<RigidTransform> id(5, RigidTransform::identity(2));
    REQUIRE(multi_carbo(sets, id, full_masks(sets), CovarianceModel::gaussian(0.8)) == Approx(10.0));
}

TEST_CASE("leave-one-out similarities sum to a multiple of the criterion", "[gpa]") {
    const Family f = family(5, 7, 3, 72, 0.3);
    Rng rng = make_rng(73);
    std::vector<RigidTransform> ts;
    std::vector<Mask> masks;
    for (const auto& s : f.sets) {
        ts.push_back(testing::random_transform(3, 0.5, rng));
        masks.push_back(testing::random_mask(s.size(), rng));
    }
    const auto model = CovarianceModel::matern(1.5, 1.0);
    const double c = multi_carbo(f.sets, ts, masks, model);
    double sum = 0.0;
    for (std::size_t i = 0; i < f.sets.size(); ++i) sum += leave_one_out_similarity(i, f.sets, ts, masks, model);
    REQUIRE(sum == Approx(2.0 * c / 4.0).epsilon(1e-10));
}

TEST_CASE("criterion agrees with pairwise Carbo similarities", "[gpa]") {
    const Family f = family(3, 6, 2, 74, 0.5);
    const auto model = CovarianceModel::gaussian(1.0);
    const auto masks = full_masks(f.sets);
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j) {
            const auto a = build_field(f.sets[i], masks[i], model).transformed(f.truth[i]);
            const auto b = build_field(f.sets[j], masks[j], model);
            want += partial_carbo(a, b, f.truth[j]).similarity;
        }
    REQUIRE(multi_carbo(f.sets, f.truth, masks, model) == Approx(want).epsilon(1e-10));
}

TEST_CASE("mean field averages the member predictions", "[gpa]") {
    const Family f = family(4, 6, 3, 75, 0.2);
    const auto model = CovarianceModel::matern(2.5, 1.2);
    const auto masks = full_masks(f.sets);
    const MeanField mf = group_mean_field(f.sets, f.truth, masks, model, {0, 2, 3});
    REQUIRE(mf.point_count() == 6 + 5 + 5);
    Rng rng = make_rng(76);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector x = testing::normal_vector(3, rng);
        double want = 0.0;
        for (std::size_t i : {0u, 2u, 3u})
            want += build_field(f.sets[i], masks[i], model).normalized().transformed(f.truth[i]).predict(x);
        REQUIRE(mf.evaluate(x) == Approx(want / 3.0).margin(1e-12));
    }
    const MeanField loo = leave_one_out_mean_field(1, f.sets, f.truth, masks, model);
    REQUIRE(loo.components.size() == 3);
    REQUIRE_THROWS_AS(group_mean_field(f.sets, f.truth, masks, model, {}), DomainError);
    REQUIRE_THROWS_AS(group_mean_field(f.sets, f.truth, masks, model, {9}), DomainError);
}

TEST_CASE("smallest set is the reference", "[gpa]") {
    const Family f = family(4, 6, 2, 77);
    REQUIRE(smallest_set(f.sets) == 1);
}

TEST_CASE("GPA input validation", "[gpa]") {
    const Family f = family(3, 5, 2, 78);
    GpaSettings g;
    REQUIRE_THROWS_AS(run_field_gpa({f.sets[0]}, CovarianceModel::gaussian(1.0), g, 1), DomainError);
    g.max_passes = 0;
    REQUIRE_THROWS_AS(run_field_gpa(f.sets, CovarianceModel::gaussian(1.0), g, 1), ConfigError);
    g.max_passes = 3;
    g.step1_charge_sets = {f.sets[0]};
    REQUIRE_THROWS_AS(run_field_gpa(f.sets, CovarianceModel::gaussian(1.0), g, 1), DomainError);
    REQUIRE_THROWS_AS(multi_carbo(f.sets, {RigidTransform::identity(2)}, full_masks(f.sets),
                                  CovarianceModel::gaussian(1.0)),
                      DomainError);
}

TEST_CASE("GPA on a planar family reaches the true superposition", "[gpa]") {
    const Family f = family(4, 8, 2, 79);
    const auto model = CovarianceModel::matern(0.5, 0.8);
    GpaSettings g;
    g.pairwise.n_iterations = 3000;
    g.pairwise.escape_period = 0;
    g.pairwise.zeta = 50.0;
    g.pairwise_init.angle_half_width = 0.2;
    g.pairwise_init.shift_half_width = 0.2;
    g.pass.n_iterations = 300;
    g.pass.escape_period = 0;
    g.pass.alpha = 600.0;
    g.pass.beta = 1e-4;
    g.pass.zeta = 50.0;
    g.pass.proposal_sd_rotation = 0.01;
    g.pass.proposal_sd_translation = 0.01;
    g.max_passes = 20;
    const GpaResult r = run_field_gpa(f.sets, model, g, 11);
    REQUIRE(r.reference == 1);
    REQUIRE(r.pass_values.size() >= 2);
    for (std::size_t i = 1; i < r.pass_values.size(); ++i) REQUIRE(r.pass_values[i] >= r.pass_values[i - 1] - 1e-12);
    REQUIRE(r.state.multi_carbo == Approx(*std::max_element(r.pass_values.begin(), r.pass_values.end())));
    // the superposition is recovered up to a common motion of the whole group
    const RigidTransform to_ref = inverse(f.truth[1]);
    const RigidTransform undo = inverse(r.state.transforms[1]);
    for (std::size_t i = 0; i < f.sets.size(); ++i) {
        const Points want = apply_transform(compose(to_ref, f.truth[i]), f.sets[i].coords);
        const Points got = apply_transform(compose(undo, r.state.transforms[i]), f.sets[i].coords);
        INFO("set " << i << " mask " << mask_count(r.state.masks[i]) << " C " << r.state.multi_carbo);
        REQUIRE(rmsd(got, want) < 0.15);
    }
    REQUIRE(r.state.multi_carbo > 0.9 * 6.0);
    // deterministic under the same seed
    const GpaResult again = run_field_gpa(f.sets, model, g, 11);
    REQUIRE(again.pass_values == r.pass_values);
}
