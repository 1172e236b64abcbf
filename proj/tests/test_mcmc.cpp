#include "catch_amalgamated.hpp"

#include <cmath>
#include <numbers>

#include "test_support.hpp"

using namespace fieldalign;
using Catch::Approx;

namespace {

/// B is A moved by `t` (so the inverse of t aligns B onto A).
PairProblem moved_copy(const RigidTransform& t, int k, int m, std::uint64_t seed, MarkedPointSet* a_out = nullptr) {
    Rng rng = make_rng(seed);
    const Points p = testing::separated_points(k, m, 1.0, 0.15, rng);
    const Vector z = testing::normal_vector(k, rng);
    const MarkedPointSet a(p, z);
    const MarkedPointSet b(apply_transform(t, p), z);
    if (a_out) *a_out = a;
    return PairProblem::single(a, b, CovarianceModel::matern(0.5, 0.5));
}

Hyperparameters quiet(long n) {
    Hyperparameters h;
    h.n_iterations = n;
    h.escape_period = 0;
    return h;
}

}  // namespace

TEST_CASE("likelihood kinds", "[mcmc]") {
    REQUIRE(log_likelihood(0.5, 2.0, LikelihoodKind::Exponential) == Approx(std::log(2.0) - 1.0));
    REQUIRE(log_likelihood(0.5, 2.0, LikelihoodKind::HalfNormal) == Approx(0.5 * std::log(2.0) - 0.5));
    REQUIRE(log_likelihood(kInf, 2.0, LikelihoodKind::Exponential) == -kInf);
    REQUIRE_THROWS_AS(log_likelihood(0.5, 0.0, LikelihoodKind::Exponential), DomainError);
    REQUIRE_THROWS_AS(log_likelihood(-0.1, 1.0, LikelihoodKind::Exponential), DomainError);
}

TEST_CASE("log helpers", "[mcmc]") {
    REQUIRE(log_power(0.0, 0.0) == 0.0);
    REQUIRE(log_power(0.0, 2.0) == -kInf);
    REQUIRE(log_power(3.0, 2.0) == Approx(std::log(9.0)));
    REQUIRE(log_add_exp(std::log(2.0), std::log(3.0)) == Approx(std::log(5.0)));
    REQUIRE(log_add_exp(-kInf, 1.5) == 1.5);
    REQUIRE(log_add_exp(1000.0, 1000.0) == Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("mask prior values", "[mcmc]") {
    Points a(3, 2), b(2, 2);
    a << 0, 0, 1, 0, 5, 5;
    b << 0, 0, 0.5, 0;
    const Mask ma{1, 0, 1}, mb{1, 1};
    // zeta_i = 1: log(zeta^S + 1)
    REQUIRE(mask_log_prior(ma, mb, a, b, 2.0, 1.0, 2.0) == Approx(std::log(std::pow(2.0, 4) + 1.0)));
    // one disagreeing neighbor pair in A (0,1), none in B
    REQUIRE(mask_log_prior(ma, mb, a, b, 2.0, 3.0, 2.0) == Approx(std::log(16.0 + 3.0)));
    REQUIRE(mask_log_prior(ma, mb, a, b, 0.0, 3.0, 2.0) == Approx(std::log(3.0)));
    REQUIRE_THROWS_AS(mask_log_prior(ma, mb, a, b, -1.0, 1.0, 2.0), DomainError);
    REQUIRE_THROWS_AS(mask_log_prior(Mask{1, 1}, mb, a, b, 2.0, 1.0, 2.0), DomainError);
    const auto pairs = neighbor_pairs(a, 2.0);
    REQUIRE(pairs.size() == 1);
    REQUIRE(mask_disagreements(ma, pairs) == 1);
}

TEST_CASE("tau draws follow the conjugate Gamma law", "[mcmc]") {
    Rng rng = make_rng(51);
    const int n = 40000;
    auto mean_of = [&](auto draw) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += draw();
        return s / n;
    };
    REQUIRE(mean_of([&] { return gibbs_update_tau(0.02, 31.0, 0.04, rng); }) == Approx(32.0 / 0.06).epsilon(0.02));
    REQUIRE(mean_of([&] { return gibbs_update_tau(0.0, 200.0, 0.05, rng); }) == Approx(201.0 / 0.05).epsilon(0.02));
    REQUIRE(mean_of([&] { return gibbs_update_tau(0.3, 5.0, 1.0, rng, 1.0, LikelihoodKind::HalfNormal); }) ==
            Approx(5.5 / 1.09).epsilon(0.02));
    // tempered: shape (alpha - 1 + 1)/T + 1, rate (D + beta)/T
    REQUIRE(mean_of([&] { return gibbs_update_tau(0.5, 4.0, 0.5, rng, 1.0, LikelihoodKind::Exponential, 2.0); }) ==
            Approx(3.0 / 0.5).epsilon(0.02));
    REQUIRE(gibbs_update_tau(kInf, 3.0, 1.0, rng, 7.5) == 7.5);
    REQUIRE_THROWS_AS(gibbs_update_tau(0.1, 0.0, 1.0, rng), DomainError);
}

TEST_CASE("Metropolis acceptance rule", "[mcmc]") {
    Rng rng = make_rng(52);
    REQUIRE(metropolis_accept(0.0, 1.0, 1.0, rng));
    REQUIRE_FALSE(metropolis_accept(0.0, -kInf, 1.0, rng));
    REQUIRE(metropolis_accept(-kInf, -5.0, 1.0, rng));
    REQUIRE_FALSE(metropolis_accept(0.0, std::nan(""), 1.0, rng));
    int accepted = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) accepted += metropolis_accept(0.0, -1.0, 2.0, rng) ? 1 : 0;
    REQUIRE(static_cast<double>(accepted) / n == Approx(std::exp(-0.5)).epsilon(0.02));
    REQUIRE(annealed_target(-4.0, 2.0) == -2.0);
    REQUIRE_THROWS_AS(annealed_target(1.0, 0.0), DomainError);
}

TEST_CASE("schedules", "[mcmc]") {
    const RangeSchedule r{true, 0.6, 0.2, 1000};
    REQUIRE(r.at(0) == Approx(0.6));
    REQUIRE(r.at(500) == Approx(0.4));
    REQUIRE(r.at(1000) == 0.2);
    REQUIRE(r.at(5000) == 0.2);
    WeightSchedule w;
    w.enabled = true;
    w.initial_phase = 1500;
    REQUIRE(w.at(0) == 1.0);
    REQUIRE(w.at(750) == Approx(0.5));
    REQUIRE(w.at(1500) == 0.0);
    w.enabled = false;
    REQUIRE(w.at(10) == 0.5);
    const AnnealingSchedule a{true, 8.0, 1.0, 100};
    REQUIRE(a.at(0) == Approx(8.0));
    REQUIRE(a.at(100) == 1.0);
    REQUIRE(a.at(50) == Approx(std::sqrt(8.0)));
    REQUIRE(AnnealingSchedule{}.at(3) == 1.0);
}

TEST_CASE("hyperparameter defaults and validation", "[mcmc]") {
    Hyperparameters h;
    REQUIRE(h.alpha == 31.0);
    REQUIRE(h.beta == 0.04);
    REQUIRE(h.proposal_sd_rotation == Approx(3.25 * std::numbers::pi / 180.0));
    REQUIRE(h.effective_burn_in() == 2000);
    REQUIRE_NOTHROW(h.validate());
    h.range_schedule = {true, 2.0, 1.0, 3000};
    REQUIRE(h.map_start() == 3000);
    h.burn_in = 20000;
    REQUIRE_THROWS_AS(h.validate(), ConfigError);
    h = Hyperparameters{};
    h.beta = 0.0;
    REQUIRE_THROWS_AS(h.validate(), ConfigError);
    h = Hyperparameters{};
    h.mask_flips = 0;
    REQUIRE_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("pair problem validation", "[mcmc]") {
    MarkedPointSet a(Points::Zero(1, 2), Vector::Ones(1));
    MarkedPointSet b(Points::Zero(1, 3), Vector::Ones(1));
    REQUIRE_THROWS_AS(PairProblem::single(a, b, CovarianceModel::gaussian(1.0)), DomainError);
    PairProblem p = PairProblem::single(a, a, CovarianceModel::gaussian(1.0));
    p.clamped_b = {3};
    REQUIRE_THROWS_AS(p.validate(), DomainError);
    p.clamped_b.clear();
    p.fixed_coefficients_a = {Vector::Ones(2)};
    REQUIRE_THROWS_AS(p.validate(), DomainError);
}

TEST_CASE("sampler state at the generating pose", "[mcmc]") {
    RigidTransform t = RigidTransform::identity(3);
    t.euler << 0.4, 0.3, -0.2;
    t.translation << 0.5, 0.1, 0.0;
    const PairProblem p = moved_copy(t, 10, 3, 53);
    PairwiseSampler s(p, quiet(100), 1);
    s.reset(inverse(t), full_mask(10), full_mask(10), 10.0);
    REQUIRE(s.state().dissimilarity < 1e-10);
    REQUIRE(s.state().similarity == Approx(1.0));
    s.reset(RigidTransform::identity(3), full_mask(10), full_mask(10), 10.0);
    REQUIRE(s.state().dissimilarity > 0.1);
    // evaluate does not disturb the chain
    const double d = s.state().dissimilarity;
    const ChainState e = s.evaluate(inverse(t), full_mask(10), full_mask(10), 10.0);
    REQUIRE(e.dissimilarity < 1e-10);
    REQUIRE(s.state().dissimilarity == d);
    REQUIRE_THROWS_AS(s.reset(t, Mask(10, 0), full_mask(10), 1.0), EmptyFieldError);
}

TEST_CASE("cached scores match recomputation after moves", "[mcmc]") {
    RigidTransform t = RigidTransform::identity(2);
    t.euler << 0.3;
    const PairProblem p = moved_copy(t, 8, 2, 54);
    Hyperparameters h = quiet(100);
    h.proposal_sd_rotation = 0.3;
    h.proposal_sd_translation = 0.2;
    PairwiseSampler s(p, h, 2);
    InitSpec init;
    init.angle_half_width = 1.0;
    init.shift_half_width = 0.5;
    s.apply_schedules(1);
    s.initialize(init, true);
    for (int it = 0; it < 200; ++it) {
        s.mh_step_rigid(RigidBlock::Rotation, false);
        s.mh_step_rigid(RigidBlock::Translation, false);
        s.gibbs_tau();
        s.mh_step_mask(MaskSide::A);
        s.mh_step_mask(MaskSide::B);
        const auto& st = s.state();
        REQUIRE(mask_count(st.mask_a) > 0);
        REQUIRE(mask_count(st.mask_b) > 0);
        const ChainState fresh = s.evaluate(st.transform, st.mask_a, st.mask_b, st.tau);
        REQUIRE(fresh.dissimilarity == Approx(st.dissimilarity).epsilon(1e-9).margin(1e-12));
        REQUIRE(fresh.log_posterior == Approx(st.log_posterior).epsilon(1e-9));
    }
}

TEST_CASE("clamped mask entries never flip", "[mcmc]") {
    const PairProblem base = moved_copy(RigidTransform::identity(2), 6, 2, 55);
    PairProblem p = base;
    p.clamped_a = {0, 2};
    p.clamped_b = {1};
    PairwiseSampler s(p, quiet(100), 3);
    s.apply_schedules(1);
    s.initialize(InitSpec{}, true);
    for (int it = 0; it < 500; ++it) {
        s.mh_step_mask(MaskSide::A);
        s.mh_step_mask(MaskSide::B);
        REQUIRE(s.state().mask_a[0] == 1);
        REQUIRE(s.state().mask_a[2] == 1);
        REQUIRE(s.state().mask_b[1] == 1);
    }
}

TEST_CASE("pairwise alignment recovers a planar rigid motion", "[mcmc]") {
    RigidTransform t = RigidTransform::identity(2);
    t.euler << 0.25;
    t.translation << 0.1, -0.05;
    MarkedPointSet a;
    const PairProblem p = moved_copy(t, 12, 2, 56, &a);
    Hyperparameters h = quiet(3000);
    h.alpha = 200.0;
    h.beta = 0.05;
    h.zeta = 50.0;
    h.proposal_sd_rotation = 1.0 * std::numbers::pi / 180.0;
    h.proposal_sd_translation = 0.01;
    InitSpec init;
    init.angle_half_width = 0.4;
    init.shift_half_width = 0.1;
    init.first_transform = RigidTransform::identity(2);
    const AlignmentResult r = run_pairwise_alignment(p, h, init, 7);
    REQUIRE(r.plug_in_distance < 0.02);
    const Points back = apply_transform(r.map_state.transform, p.coords_b);
    REQUIRE(rmsd(back, a.coords) < 0.05);
    REQUIRE(rmsd(apply_transform(r.mean_transform, p.coords_b), a.coords) < 0.05);
    REQUIRE(r.trace.size() == 3000 / 20);
    REQUIRE(r.trace.back().iteration == 3000);
    REQUIRE(r.acceptance.rotation > 0.0);
    REQUIRE(r.inclusion_a.size() == 12);
    REQUIRE_FALSE(r.failed);
}

TEST_CASE("same seed gives identical chains", "[mcmc]") {
    const PairProblem p = moved_copy(RigidTransform::identity(3), 8, 3, 57);
    InitSpec init;
    init.kind = InitKind::UniformRotation;
    const auto r1 = run_pairwise_alignment(p, quiet(400), init, 99);
    const auto r2 = run_pairwise_alignment(p, quiet(400), init, 99);
    const auto r3 = run_pairwise_alignment(p, quiet(400), init, 100);
    REQUIRE(r1.trace.size() == r2.trace.size());
    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        REQUIRE(r1.trace[i].log_posterior == r2.trace[i].log_posterior);
        REQUIRE(r1.trace[i].euler == r2.trace[i].euler);
    }
    REQUIRE(r1.trace.back().log_posterior != r3.trace.back().log_posterior);
}

TEST_CASE("restarts are bounded and failure is reported", "[mcmc]") {
    const PairProblem p = moved_copy(RigidTransform::identity(2), 6, 2, 58);
    Hyperparameters h = quiet(60);
    h.restart_check_iter = 30;
    h.restart_threshold = -1.0;
    h.max_restarts = 3;
    const auto r = run_pairwise_alignment(p, h, InitSpec{}, 5);
    REQUIRE(r.n_restarts == 3);
    REQUIRE(r.failed);
    h.restart_threshold = kInf;
    const auto ok = run_pairwise_alignment(p, h, InitSpec{}, 5);
    REQUIRE(ok.n_restarts == 0);
    REQUIRE_FALSE(ok.failed);
}

TEST_CASE("frozen reference coefficients reproduce the kriged field", "[mcmc]") {
    RigidTransform t = RigidTransform::identity(2);
    t.euler << -0.2;
    MarkedPointSet a;
    const PairProblem p = moved_copy(t, 7, 2, 59, &a);
    const auto fa = build_field(a, full_mask(7), p.channels[0].model);
    PairProblem frozen = p;
    frozen.fixed_coefficients_a = {fa.weights()};
    PairwiseSampler s1(p, quiet(10), 1), s2(frozen, quiet(10), 1);
    const Mask mb{1, 1, 0, 1, 1, 0, 1};
    s1.reset(inverse(t), full_mask(7), mb, 5.0);
    s2.reset(inverse(t), Mask{}, mb, 5.0);
    REQUIRE(s2.state().dissimilarity == Approx(s1.state().dissimilarity).epsilon(1e-10));
    REQUIRE(mask_count(s2.state().mask_a) == 7);
}

TEST_CASE("two channel scores follow the weight schedule", "[mcmc]") {
    Rng rng = make_rng(60);
    const Points pts = testing::separated_points(6, 3, 1.5, 0.3, rng);
    const MarkedPointSet q(pts, testing::normal_vector(6, rng)), s(pts, testing::normal_vector(6, rng));
    const MarkedPointSet q2(pts, testing::normal_vector(6, rng));
    const auto p = PairProblem::two_channel(q, q2, CovarianceModel::gaussian(2.0), s, s, CovarianceModel::gaussian(1.0));
    Hyperparameters h = quiet(100);
    h.weight_schedule.enabled = true;
    h.weight_schedule.initial_phase = 10;
    PairwiseSampler smp(p, h, 4);
    smp.apply_schedules(1);
    smp.reset(RigidTransform::identity(3), full_mask(6), full_mask(6), 1.0);
    const auto& cs = smp.state().channel_scores;
    REQUIRE(smp.weight_q() == Approx(0.9));
    REQUIRE(smp.state().dissimilarity ==
            Approx(0.9 * cs[0].dissimilarity + 0.1 * cs[1].dissimilarity).epsilon(1e-12));
    smp.apply_schedules(10);
    REQUIRE(smp.weight_q() == 0.0);
    REQUIRE(smp.state().dissimilarity == Approx(0.0).margin(1e-12));
}
