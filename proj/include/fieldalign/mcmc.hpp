#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fieldalign/covariance.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/kriging.hpp"
#include "fieldalign/random.hpp"
#include "fieldalign/similarity.hpp"

namespace fieldalign {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class LikelihoodKind { Exponential, HalfNormal };

/// Log likelihood of a dissimilarity under precision tau (up to a constant).
///
/// Exponential: log tau - tau D.  HalfNormal: 0.5 log tau - tau D^2.
inline double log_likelihood(double dissimilarity, double tau, LikelihoodKind kind) {
    if (!(tau > 0.0)) throw DomainError("precision must be positive");
    if (!(dissimilarity >= 0.0)) throw DomainError("dissimilarity must be nonnegative");
    if (std::isinf(dissimilarity)) return -kInf;
    if (kind == LikelihoodKind::Exponential) return std::log(tau) - tau * dissimilarity;
    return 0.5 * std::log(tau) - tau * dissimilarity * dissimilarity;
}

/// log(a^p) with the 0^0 = 1 convention.
inline double log_power(double base, double exponent) {
    if (exponent == 0.0) return 0.0;
    if (base == 0.0) return -kInf;
    return exponent * std::log(base);
}

inline double log_add_exp(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Unordered pairs (i, j), i < j, closer than delta.
using NeighborPairs = std::vector<std::pair<Eigen::Index, Eigen::Index>>;

inline NeighborPairs neighbor_pairs(const Points& coords, double delta) {
    NeighborPairs out;
    const double d2 = delta * delta;
    for (Eigen::Index i = 0; i < coords.rows(); ++i)
        for (Eigen::Index j = i + 1; j < coords.rows(); ++j)
            if ((coords.row(i) - coords.row(j)).squaredNorm() < d2) out.emplace_back(i, j);
    return out;
}

inline long mask_disagreements(const Mask& m, const NeighborPairs& pairs) {
    long e = 0;
    for (const auto& [i, j] : pairs)
        e += m[static_cast<std::size_t>(i)] != m[static_cast<std::size_t>(j)] ? 1 : 0;
    return e;
}

/// log[ zeta^(sum masks) + zeta_i^(neighbor disagreements) ] with precomputed neighbor graphs.
inline double mask_log_prior(const Mask& mask_a, const Mask& mask_b, const NeighborPairs& pairs_a,
                             const NeighborPairs& pairs_b, double zeta, double zeta_i) {
    if (!(zeta >= 0.0) || !(zeta_i >= 0.0)) throw DomainError("mask prior parameters must be nonnegative");
    const double s = static_cast<double>(mask_count(mask_a) + mask_count(mask_b));
    double e = 0.0;
    if (zeta_i != 1.0)
        e = static_cast<double>(mask_disagreements(mask_a, pairs_a) + mask_disagreements(mask_b, pairs_b));
    return log_add_exp(log_power(zeta, s), log_power(zeta_i, e));
}

/// Mask prior with neighbors defined by |x_i - x_j| < delta within each set.
inline double mask_log_prior(const Mask& mask_a, const Mask& mask_b, const Points& coords_a, const Points& coords_b,
                             double zeta, double zeta_i, double neighbor_delta) {
    if (static_cast<Eigen::Index>(mask_a.size()) != coords_a.rows() ||
        static_cast<Eigen::Index>(mask_b.size()) != coords_b.rows())
        throw DomainError("mask length differs from point count");
    const NeighborPairs none;
    if (zeta_i == 1.0) return mask_log_prior(mask_a, mask_b, none, none, zeta, zeta_i);
    return mask_log_prior(mask_a, mask_b, neighbor_pairs(coords_a, neighbor_delta),
                          neighbor_pairs(coords_b, neighbor_delta), zeta, zeta_i);
}

/// Tempered target log pi / T.
inline double annealed_target(double log_posterior, double temperature) {
    if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
    return log_posterior / temperature;
}

/// Metropolis acceptance for a symmetric proposal.
inline bool metropolis_accept(double current_log_target, double proposed_log_target, double temperature, Rng& rng) {
    if (std::isnan(proposed_log_target) || proposed_log_target == -kInf) return false;
    if (current_log_target == -kInf) return true;
    const double delta = (proposed_log_target - current_log_target) / temperature;
    if (delta >= 0.0) return true;
    return std::log(uniform(rng, 0.0, 1.0)) < delta;
}

/// Draw of tau from its full conditional Gamma(alpha + 1, D + beta) (Exponential
/// likelihood), tempered by 1/T. Infinite D keeps the current value.
inline double gibbs_update_tau(double dissimilarity, double alpha, double beta, Rng& rng, double current_tau = 1.0,
                               LikelihoodKind kind = LikelihoodKind::Exponential, double temperature = 1.0) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("Gamma prior parameters must be positive");
    if (std::isinf(dissimilarity) || std::isnan(dissimilarity)) return current_tau;
    const double power = kind == LikelihoodKind::Exponential ? 1.0 : 0.5;
    const double stat = kind == LikelihoodKind::Exponential ? dissimilarity : dissimilarity * dissimilarity;
    const double shape = (alpha - 1.0 + power) / temperature + 1.0;
    const double rate = (stat + beta) / temperature;
    std::gamma_distribution<double> g(shape, 1.0 / rate);
    double t = g(rng);
    if (!(t > 0.0)) t = std::numeric_limits<double>::min();
    return t;
}

/// Linear interpolation from `start` at iteration 0 to `end` at `length`, constant after.
struct RangeSchedule {
    bool enabled = false;
    double start = 1.0;
    double end = 1.0;
    long length = 0;

    double at(long iteration) const {
        if (!enabled || length <= 0 || iteration >= length) return end;
        const double f = static_cast<double>(iteration) / static_cast<double>(length);
        return start + (end - start) * f;
    }
};

/// Channel weight w_q = (N_I - i) / N_I during the first N_I iterations, 0 after.
struct WeightSchedule {
    bool enabled = false;
    long initial_phase = 1500;
    double fixed_weight_q = 0.5;  // used when disabled

    double at(long iteration) const {
        if (!enabled) return fixed_weight_q;
        if (iteration >= initial_phase) return 0.0;
        return static_cast<double>(initial_phase - iteration) / static_cast<double>(initial_phase);
    }
};

/// Geometric cooling from start to end temperature over `length` iterations.
struct AnnealingSchedule {
    bool enabled = false;
    double start_temperature = 1.0;
    double end_temperature = 1.0;
    long length = 0;

    double at(long iteration) const {
        if (!enabled) return 1.0;
        if (length <= 0 || iteration >= length) return end_temperature;
        const double f = static_cast<double>(iteration) / static_cast<double>(length);
        return start_temperature * std::pow(end_temperature / start_temperature, f);
    }
};

struct Hyperparameters {
    double alpha = 31.0;
    double beta = 0.04;
    double zeta = 3.0;
    double zeta_i = 1.0;
    double neighbor_delta = 2.0;
    double proposal_sd_rotation = 3.25 * std::numbers::pi / 180.0;
    double proposal_sd_translation = 0.25;
    long escape_period = 125;
    double escape_scale = 10.0;
    double restart_threshold = kInf;
    long restart_check_iter = 0;  // 0 disables restarts
    int max_restarts = 0;
    long n_iterations = 10000;
    long burn_in = -1;  // negative: 20% of n_iterations
    long thin = 20;
    LikelihoodKind likelihood_kind = LikelihoodKind::Exponential;
    RangeSchedule range_schedule;
    WeightSchedule weight_schedule;
    AnnealingSchedule annealing_schedule;
    double jitter = 0.0;
    bool update_mask_a = true;
    bool update_mask_b = true;
    int mask_flips = 1;  // single-flip proposals per mask block

    long effective_burn_in() const { return burn_in < 0 ? n_iterations / 5 : burn_in; }

    /// First iteration whose state may become the MAP: after burn-in and
    /// after every schedule has settled, so compared posteriors share one model.
    long map_start() const {
        long s = effective_burn_in();
        if (range_schedule.enabled) s = std::max(s, range_schedule.length);
        if (weight_schedule.enabled) s = std::max(s, weight_schedule.initial_phase);
        if (annealing_schedule.enabled) s = std::max(s, annealing_schedule.length);
        if (restart_check_iter > 0) s = std::max(s, restart_check_iter);
        return std::min(s, n_iterations - 1);
    }

    void validate() const {
        if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("alpha and beta must be positive");
        if (!(zeta >= 0.0) || !(zeta_i >= 0.0)) throw ConfigError("zeta and zeta_i must be nonnegative");
        if (!(proposal_sd_rotation >= 0.0) || !(proposal_sd_translation >= 0.0))
            throw ConfigError("proposal standard deviations must be nonnegative");
        if (n_iterations < 1) throw ConfigError("n_iterations must be positive");
        if (effective_burn_in() >= n_iterations) throw ConfigError("burn_in must be smaller than n_iterations");
        if (thin < 1) throw ConfigError("thin must be positive");
        if (mask_flips < 1) throw ConfigError("mask_flips must be positive");
        if (max_restarts < 0) throw ConfigError("max_restarts must be nonnegative");
        if (!(escape_scale > 0.0)) throw ConfigError("escape_scale must be positive");
        if (annealing_schedule.enabled &&
            (!(annealing_schedule.start_temperature > 0.0) || !(annealing_schedule.end_temperature > 0.0)))
            throw ConfigError("temperatures must be positive");
        if (range_schedule.enabled && (!(range_schedule.start > 0.0) || !(range_schedule.end > 0.0)))
            throw ConfigError("scheduled ranges must be positive");
        if (weight_schedule.enabled && weight_schedule.initial_phase < 1)
            throw ConfigError("weight schedule phase must be positive");
        if (!(weight_schedule.fixed_weight_q >= 0.0 && weight_schedule.fixed_weight_q <= 1.0))
            throw ConfigError("channel weight must lie in [0, 1]");
    }
};

/// One mark channel: marks for both sets and the kernel that krigs them.
struct Channel {
    Vector marks_a;
    Vector marks_b;
    CovarianceModel model;
};

/// Everything a pairwise chain needs about the two sets. B is the movable set.
/// With two channels, channel 0 is electrostatic (weight w_q) and channel 1 steric.
struct PairProblem {
    Points coords_a;
    Points coords_b;
    std::vector<Channel> channels;
    /// When non-empty, A is a frozen field with these coefficients per channel
    /// (no kriging, no mask moves on A).
    std::vector<Vector> fixed_coefficients_a;
    std::vector<Eigen::Index> clamped_a;  // mask entries held at 1
    std::vector<Eigen::Index> clamped_b;

    static PairProblem single(const MarkedPointSet& a, const MarkedPointSet& b, const CovarianceModel& model) {
        a.validate();
        b.validate();
        if (a.dim() != b.dim()) throw DomainError("point sets have different dimensions");
        return {a.coords, b.coords, {{a.marks, b.marks, model}}, {}, {}, {}};
    }

    static PairProblem two_channel(const MarkedPointSet& a_q, const MarkedPointSet& b_q, const CovarianceModel& model_q,
                                   const MarkedPointSet& a_s, const MarkedPointSet& b_s,
                                   const CovarianceModel& model_s) {
        PairProblem p = single(a_q, b_q, model_q);
        p.channels.push_back({a_s.marks, b_s.marks, model_s});
        return p;
    }

    int dim() const { return static_cast<int>(coords_b.cols()); }
    bool frozen_a() const { return !fixed_coefficients_a.empty(); }

    void validate() const {
        if (channels.empty() || channels.size() > 2) throw ConfigError("one or two mark channels are required");
        if (coords_a.rows() < 1 || coords_b.rows() < 1) throw DomainError("both point sets must be nonempty");
        if (coords_a.cols() != coords_b.cols()) throw DomainError("point sets have different dimensions");
        if (coords_b.cols() != 2 && coords_b.cols() != 3) throw DomainError("dimension must be 2 or 3");
        for (const auto& c : channels) {
            c.model.validate();
            if (!frozen_a() && c.marks_a.size() != coords_a.rows()) throw DomainError("channel marks for A mismatch");
            if (c.marks_b.size() != coords_b.rows()) throw DomainError("channel marks for B mismatch");
        }
        if (frozen_a()) {
            if (fixed_coefficients_a.size() != channels.size())
                throw ConfigError("frozen reference needs coefficients for every channel");
            for (const auto& w : fixed_coefficients_a)
                if (w.size() != coords_a.rows()) throw DomainError("frozen coefficients mismatch");
        }
        for (auto i : clamped_a)
            if (i < 0 || i >= coords_a.rows()) throw DomainError("clamped index out of range");
        for (auto i : clamped_b)
            if (i < 0 || i >= coords_b.rows()) throw DomainError("clamped index out of range");
    }
};

enum class InitKind { UniformBox, UniformRotation, Fixed };

/// Starting-point distribution of a chain. Restarts redraw from the same law.
struct InitSpec {
    InitKind kind = InitKind::UniformBox;
    double angle_half_width = 0.0;  // radians, UniformBox
    double shift_half_width = 0.0;  // UniformBox and UniformRotation
    RigidTransform fixed;           // Fixed
    /// Transform for the very first attempt only (e.g. the data's own relative position).
    std::optional<RigidTransform> first_transform;
    /// Starting masks; Bernoulli(0.5) draws when absent.
    std::optional<Mask> mask_a;
    std::optional<Mask> mask_b;
};

struct ChainState {
    RigidTransform transform;
    Mask mask_a;
    Mask mask_b;
    double tau = 1.0;
    std::vector<CarboScore> channel_scores;
    double dissimilarity = kInf;  // channel-weighted
    double similarity = -1.0;     // image of dissimilarity under the inverse Carbo map
    double log_posterior = -kInf;
    long iteration = 0;
};

struct TraceRow {
    long iteration = 0;
    Vector euler;
    Vector translation;
    double tau = 0.0;
    double similarity = 0.0;
    double dissimilarity = 0.0;
    long unmasked_a = 0;
    long unmasked_b = 0;
    double log_posterior = 0.0;
};

struct AcceptanceRates {
    double rotation = 0.0;
    double translation = 0.0;
    double mask_a = 0.0;
    double mask_b = 0.0;
};

struct AlignmentResult {
    ChainState map_state;
    ChainState final_state;
    double plug_in_distance = kInf;
    /// Dissimilarity at the posterior-mean transform and majority masks.
    double mean_plug_in_distance = kInf;
    RigidTransform mean_transform;
    Mask mean_mask_a;
    Mask mean_mask_b;
    std::vector<double> inclusion_a;
    std::vector<double> inclusion_b;
    std::vector<TraceRow> trace;
    AcceptanceRates acceptance;
    int n_restarts = 0;
    bool failed = false;
    std::vector<CovarianceModel> final_models;
    double final_weight_q = 1.0;
};

enum class RigidBlock { Rotation, Translation };
enum class MaskSide { A, B };

/// Metropolis-within-Gibbs sampler for one pairwise alignment.
///
/// Per channel it caches the full Gram matrices of both sets, the normalized
/// kriging weights of the current masks (zero at masked points) and the cross
/// kernel between A and the moved B, so mask moves cost one sub-Gram
/// factorization and rigid moves one cross-kernel evaluation.
class PairwiseSampler {
public:
    PairwiseSampler(PairProblem problem, Hyperparameters hyper, std::uint64_t seed)
        : problem_(std::move(problem)), hyper_(std::move(hyper)), rng_(make_rng(seed)) {
        problem_.validate();
        hyper_.validate();
        const NeighborPairs none;
        if (hyper_.zeta_i != 1.0) {
            if (!problem_.frozen_a()) pairs_a_ = neighbor_pairs(problem_.coords_a, hyper_.neighbor_delta);
            pairs_b_ = neighbor_pairs(problem_.coords_b, hyper_.neighbor_delta);
        }
        clamped_a_ = Mask(static_cast<std::size_t>(problem_.coords_a.rows()), 0);
        clamped_b_ = Mask(static_cast<std::size_t>(problem_.coords_b.rows()), 0);
        for (auto i : problem_.clamped_a) clamped_a_[static_cast<std::size_t>(i)] = 1;
        for (auto i : problem_.clamped_b) clamped_b_[static_cast<std::size_t>(i)] = 1;
        caches_.resize(problem_.channels.size());
        for (std::size_t c = 0; c < caches_.size(); ++c) caches_[c].model = problem_.channels[c].model;
    }

    const PairProblem& problem() const { return problem_; }
    const Hyperparameters& hyper() const { return hyper_; }
    const ChainState& state() const { return state_; }
    Rng& rng() { return rng_; }
    double temperature() const { return temperature_; }
    double weight_q() const { return weight_q_; }
    const std::vector<CovarianceModel> models() const {
        std::vector<CovarianceModel> m;
        for (const auto& c : caches_) m.push_back(c.model);
        return m;
    }

    /// Sets the chain state, recomputing every cached quantity. tau is kept.
    void reset(const RigidTransform& t, const Mask& mask_a, const Mask& mask_b, double tau) {
        check_transform_shape(t);
        if (t.dim() != problem_.dim()) throw DomainError("transform dimension mismatch");
        state_.transform = t;
        state_.mask_a = problem_.frozen_a() ? full_mask(problem_.coords_a.rows()) : mask_a;
        state_.mask_b = mask_b;
        state_.tau = tau;
        if (mask_count(state_.mask_a) == 0 || mask_count(state_.mask_b) == 0)
            throw EmptyFieldError("chain state with an empty mask");
        rotation_ = t.rotation();
        initialized_ = true;
        for (std::size_t c = 0; c < caches_.size(); ++c) rebuild_channel(c);
        refresh_score();
    }

    /// Applies the schedules for `iteration` (1-based).
    void apply_schedules(long iteration) {
        temperature_ = hyper_.annealing_schedule.at(iteration);
        bool changed = false;
        if (hyper_.range_schedule.enabled) {
            const double rho = hyper_.range_schedule.at(iteration);
            for (std::size_t c = 0; c < caches_.size(); ++c)
                if (caches_[c].model.rho != rho) {
                    caches_[c].model = caches_[c].model.with_range(rho);
                    if (initialized_) rebuild_channel(c);
                    changed = true;
                }
        }
        if (caches_.size() == 2) {
            const double w = hyper_.weight_schedule.at(iteration);
            if (w != weight_q_) {
                weight_q_ = w;
                changed = true;
            }
        }
        if (changed && initialized_) refresh_score();
    }

    /// Dissimilarity, channel scores and log posterior for an arbitrary
    /// parameter setting, computed from scratch with the current models.
    ChainState evaluate(const RigidTransform& t, const Mask& mask_a, const Mask& mask_b, double tau) const {
        PairwiseSampler copy = *this;
        copy.reset(t, mask_a, mask_b, tau);
        return copy.state_;
    }

    /// Gaussian random-walk Metropolis step on all rotation angles or all
    /// translation entries. `escape` multiplies the proposal sd by escape_scale.
    bool mh_step_rigid(RigidBlock block, bool escape) {
        const double sd = (block == RigidBlock::Rotation ? hyper_.proposal_sd_rotation
                                                          : hyper_.proposal_sd_translation) *
                          (escape ? hyper_.escape_scale : 1.0);
        if (sd == 0.0) return false;
        RigidTransform proposal = state_.transform;
        if (block == RigidBlock::Rotation) {
            for (Eigen::Index i = 0; i < proposal.euler.size(); ++i)
                proposal.euler[i] = wrap_angle(proposal.euler[i] + sd * standard_normal(rng_));
        } else {
            for (Eigen::Index i = 0; i < proposal.translation.size(); ++i)
                proposal.translation[i] += sd * standard_normal(rng_);
        }
        return propose_transform(proposal);
    }

    /// Proposes an explicit transform; accepted by the Metropolis rule.
    bool propose_transform(const RigidTransform& proposal) {
        const Matrix rot = proposal.rotation();
        const Points moved = apply_rotation(rot, proposal.translation, problem_.coords_b);
        std::vector<Matrix> cross(caches_.size());
        std::vector<CarboScore> scores(caches_.size());
        for (std::size_t c = 0; c < caches_.size(); ++c) {
            if (!channel_active(c)) continue;
            cross[c] = cross_kernel(Kernel(caches_[c].model), problem_.coords_a, moved);
            scores[c] = score_of(cross[c], caches_[c].w_a, caches_[c].w_b);
        }
        const double d = combine(scores);
        const double lp = log_posterior(d, state_.tau, state_.mask_a, state_.mask_b, proposal.euler);
        if (!metropolis_accept(state_.log_posterior, lp, temperature_, rng_)) return false;
        state_.transform = proposal;
        rotation_ = rot;
        moved_b_ = moved;
        for (std::size_t c = 0; c < caches_.size(); ++c) {
            if (channel_active(c)) {
                caches_[c].cross = std::move(cross[c]);
                caches_[c].cross_stale = false;
                state_.channel_scores[c] = scores[c];
            } else {
                caches_[c].cross_stale = true;
            }
        }
        set_dissimilarity(d, lp);
        return true;
    }

    /// Gibbs draw of the precision.
    void gibbs_tau() {
        state_.tau = gibbs_update_tau(state_.dissimilarity, hyper_.alpha, hyper_.beta, rng_, state_.tau,
                                      hyper_.likelihood_kind, temperature_);
        state_.log_posterior =
            log_posterior(state_.dissimilarity, state_.tau, state_.mask_a, state_.mask_b, state_.transform.euler);
    }

    /// Single-entry flip proposal on one mask. Flips of clamped entries and
    /// flips that would empty the mask are rejected.
    bool mh_step_mask(MaskSide side) {
        Mask& current = side == MaskSide::A ? state_.mask_a : state_.mask_b;
        const Mask& clamped = side == MaskSide::A ? clamped_a_ : clamped_b_;
        if (current.empty()) return false;
        std::uniform_int_distribution<std::size_t> pick(0, current.size() - 1);
        const std::size_t idx = pick(rng_);
        if (clamped[idx]) return false;
        Mask proposal = current;
        proposal[idx] = proposal[idx] ? 0 : 1;
        if (mask_count(proposal) == 0) return false;

        std::vector<Vector> weights(caches_.size());
        std::vector<double> norms(caches_.size());
        std::vector<CarboScore> scores(caches_.size());
        for (std::size_t c = 0; c < caches_.size(); ++c) {
            if (!channel_active(c)) continue;
            ensure_cross(c);
            const auto& ch = caches_[c];
            const auto& marks = side == MaskSide::A ? problem_.channels[c].marks_a : problem_.channels[c].marks_b;
            const auto& gram = side == MaskSide::A ? ch.gram_a : ch.gram_b;
            const auto& coords = side == MaskSide::A ? problem_.coords_a : problem_.coords_b;
            std::tie(weights[c], norms[c]) = normalized_weights(gram, coords, marks, proposal);
            scores[c] = side == MaskSide::A ? score_of(ch.cross, weights[c], ch.w_b)
                                            : score_of(ch.cross, ch.w_a, weights[c]);
        }
        const double d = combine(scores);
        const Mask& ma = side == MaskSide::A ? proposal : state_.mask_a;
        const Mask& mb = side == MaskSide::B ? proposal : state_.mask_b;
        const double lp = log_posterior(d, state_.tau, ma, mb, state_.transform.euler);
        if (!metropolis_accept(state_.log_posterior, lp, temperature_, rng_)) return false;
        current = std::move(proposal);
        for (std::size_t c = 0; c < caches_.size(); ++c) {
            if (channel_active(c)) {
                (side == MaskSide::A ? caches_[c].w_a : caches_[c].w_b) = std::move(weights[c]);
                (side == MaskSide::A ? caches_[c].norm_a : caches_[c].norm_b) = norms[c];
                state_.channel_scores[c] = scores[c];
            } else {
                caches_[c].weights_stale = true;
            }
        }
        set_dissimilarity(d, lp);
        return true;
    }

    /// Log posterior (untempered) for the given quantities.
    double log_posterior(double dissimilarity, double tau, const Mask& mask_a, const Mask& mask_b,
                         const Vector& euler) const {
        if (std::isinf(dissimilarity) || std::isnan(dissimilarity)) return -kInf;
        const double prior_tau = (hyper_.alpha - 1.0) * std::log(tau) - hyper_.beta * tau;
        const Mask none;
        const double prior_mask =
            problem_.frozen_a()
                ? mask_log_prior(none, mask_b, pairs_a_, pairs_b_, hyper_.zeta, hyper_.zeta_i)
                : mask_log_prior(mask_a, mask_b, pairs_a_, pairs_b_, hyper_.zeta, hyper_.zeta_i);
        return prior_tau + log_likelihood(dissimilarity, tau, hyper_.likelihood_kind) + prior_mask +
               euler_prior_log_density(euler, EulerDomain::Extended);
    }

    /// Fresh chain start drawn from the init law.
    void initialize(const InitSpec& init, bool first_attempt) {
        const int m = problem_.dim();
        RigidTransform t = RigidTransform::identity(m);
        if (first_attempt && init.first_transform) {
            t = *init.first_transform;
        } else if (init.kind == InitKind::Fixed) {
            t = init.fixed;
        } else if (init.kind == InitKind::UniformBox) {
            for (Eigen::Index i = 0; i < t.euler.size(); ++i)
                t.euler[i] = wrap_angle(uniform(rng_, -init.angle_half_width, init.angle_half_width));
            for (Eigen::Index i = 0; i < m; ++i)
                t.translation[i] = uniform(rng_, -init.shift_half_width, init.shift_half_width);
        } else {
            t.euler = euler_from_rotation(random_rotation(m, rng_));
            for (Eigen::Index i = 0; i < m; ++i)
                t.translation[i] = init.shift_half_width > 0 ? uniform(rng_, -init.shift_half_width, init.shift_half_width)
                                                             : 0.0;
        }
        Mask ma = init.mask_a && first_attempt ? *init.mask_a : bernoulli_mask(problem_.coords_a.rows(), clamped_a_);
        Mask mb = init.mask_b && first_attempt ? *init.mask_b : bernoulli_mask(problem_.coords_b.rows(), clamped_b_);
        if (init.kind == InitKind::Fixed) {
            if (init.mask_a) ma = *init.mask_a;
            if (init.mask_b) mb = *init.mask_b;
        }
        reset(t, ma, mb, 1.0);
        state_.tau = gibbs_update_tau(state_.dissimilarity, hyper_.alpha, hyper_.beta, rng_, hyper_.alpha / hyper_.beta,
                                      hyper_.likelihood_kind, temperature_);
        state_.log_posterior =
            log_posterior(state_.dissimilarity, state_.tau, state_.mask_a, state_.mask_b, state_.transform.euler);
    }

private:
    struct ChannelCache {
        CovarianceModel model;
        Matrix gram_a;
        Matrix gram_b;
        Vector w_a;  // normalized, full length, zero at masked points
        Vector w_b;
        double norm_a = 0.0;
        double norm_b = 0.0;
        Matrix cross;  // sigma(|x_i^A - Phi(x_j^B)|)
        bool cross_stale = true;
        bool weights_stale = true;
    };

    bool channel_active(std::size_t c) const {
        if (caches_.size() == 1) return true;
        return c == 0 ? weight_q_ > 0.0 : weight_q_ < 1.0;
    }

    static Mask bernoulli_mask_impl(Eigen::Index k, const Mask& clamped, Rng& rng) {
        std::bernoulli_distribution coin(0.5);
        Mask m(static_cast<std::size_t>(k));
        do {
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = clamped[i] || coin(rng) ? 1 : 0;
        } while (mask_count(m) == 0);
        return m;
    }

    Mask bernoulli_mask(Eigen::Index k, const Mask& clamped) { return bernoulli_mask_impl(k, clamped, rng_); }

    /// Normalized kriging weights (full length) and RKHS norm of the masked field.
    std::pair<Vector, double> normalized_weights(const Matrix& gram, const Points& coords, const Vector& marks,
                                                 const Mask& mask) const {
        const auto idx = mask_indices(mask);
        const auto n = static_cast<Eigen::Index>(idx.size());
        Matrix sub(n, n);
        Vector z(n);
        Points sub_coords(n, coords.cols());
        for (Eigen::Index r = 0; r < n; ++r) {
            z[r] = marks[idx[static_cast<std::size_t>(r)]];
            sub_coords.row(r) = coords.row(idx[static_cast<std::size_t>(r)]);
            for (Eigen::Index s = 0; s < n; ++s)
                sub(r, s) = gram(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(s)]);
        }
        if (hyper_.jitter > 0.0) sub.diagonal().array() += hyper_.jitter;
        const GramFactor f = factor_gram(sub, sub_coords, hyper_.jitter);
        const Vector w = f.llt.solve(z);
        const double norm = std::sqrt(std::max(0.0, w.dot(z)));
        Vector full = Vector::Zero(coords.rows());
        if (norm > 0.0)
            for (Eigen::Index r = 0; r < n; ++r) full[idx[static_cast<std::size_t>(r)]] = w[r] / norm;
        return {full, norm};
    }

    /// Weights are already normalized, so the inner product is the similarity.
    static CarboScore score_of(const Matrix& cross, const Vector& wa, const Vector& wb) {
        return CarboScore::from_inner(wa.dot(cross * wb), 1.0, 1.0);
    }

    double combine(const std::vector<CarboScore>& scores) const {
        if (scores.size() == 1) return scores[0].dissimilarity;
        if (weight_q_ >= 1.0) return scores[0].dissimilarity;
        if (weight_q_ <= 0.0) return scores[1].dissimilarity;
        return combined_carbo(scores[0], scores[1], weight_q_);
    }

    void ensure_cross(std::size_t c) {
        auto& ch = caches_[c];
        if (ch.weights_stale) {
            rebuild_weights(c);
        }
        if (ch.cross_stale) {
            ch.cross = cross_kernel(Kernel(ch.model), problem_.coords_a, moved_b_);
            ch.cross_stale = false;
        }
    }

    void rebuild_weights(std::size_t c) {
        auto& ch = caches_[c];
        const auto& channel = problem_.channels[c];
        if (problem_.frozen_a()) {
            const Vector& coef = problem_.fixed_coefficients_a[c];
            const double n2 = coef.dot(ch.gram_a * coef);
            if (!(n2 > 0.0)) throw DomainError("frozen reference field has zero norm");
            ch.norm_a = std::sqrt(n2);
            ch.w_a = coef / ch.norm_a;
        } else {
            std::tie(ch.w_a, ch.norm_a) = normalized_weights(ch.gram_a, problem_.coords_a, channel.marks_a, state_.mask_a);
        }
        std::tie(ch.w_b, ch.norm_b) = normalized_weights(ch.gram_b, problem_.coords_b, channel.marks_b, state_.mask_b);
        if (!(ch.norm_a > 0.0) || !(ch.norm_b > 0.0))
            throw DomainError("masked field has zero RKHS norm (all selected marks are zero)");
        ch.weights_stale = false;
    }

    void rebuild_channel(std::size_t c) {
        auto& ch = caches_[c];
        ch.gram_a = gram_matrix(ch.model, problem_.coords_a);
        ch.gram_b = gram_matrix(ch.model, problem_.coords_b);
        moved_b_ = apply_rotation(rotation_, state_.transform.translation, problem_.coords_b);
        ch.weights_stale = true;
        ch.cross_stale = true;
        rebuild_weights(c);
        ensure_cross(c);
    }

    void refresh_score() {
        state_.channel_scores.assign(caches_.size(), CarboScore{});
        for (std::size_t c = 0; c < caches_.size(); ++c) {
            if (!channel_active(c)) continue;
            ensure_cross(c);
            state_.channel_scores[c] = score_of(caches_[c].cross, caches_[c].w_a, caches_[c].w_b);
        }
        const double d = combine(state_.channel_scores);
        set_dissimilarity(d, log_posterior(d, state_.tau, state_.mask_a, state_.mask_b, state_.transform.euler));
    }

    void set_dissimilarity(double d, double lp) {
        state_.dissimilarity = d;
        state_.similarity = carbo_similarity_from_dissimilarity(d);
        state_.log_posterior = lp;
    }

    PairProblem problem_;
    Hyperparameters hyper_;
    Rng rng_;
    NeighborPairs pairs_a_;
    NeighborPairs pairs_b_;
    Mask clamped_a_;
    Mask clamped_b_;
    std::vector<ChannelCache> caches_;
    ChainState state_;
    Matrix rotation_;
    Points moved_b_;
    double temperature_ = 1.0;
    double weight_q_ = 1.0;
    bool initialized_ = false;
};

namespace detail {

/// Projects a matrix onto the nearest rotation (polar decomposition).
inline Matrix nearest_rotation(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix d = Matrix::Identity(m.rows(), m.cols());
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(m.rows() - 1, m.cols() - 1) = -1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace detail

/// Full pairwise alignment: sweeps of [rotation, translation, tau, mask A,
/// mask B] with schedules, escape moves, restarts and MAP tracking.
inline AlignmentResult run_pairwise_alignment(const PairProblem& problem, const Hyperparameters& hyper,
                                              const InitSpec& init, std::uint64_t seed) {
    PairwiseSampler sampler(problem, hyper, seed);
    const auto& h = sampler.hyper();
    const long map_start = h.map_start();
    AlignmentResult result;

    int restarts = 0;
    bool attempt_done = false;
    while (!attempt_done) {
        sampler.apply_schedules(1);
        sampler.initialize(init, restarts == 0);
        result.trace.clear();
        long accepted[4] = {0, 0, 0, 0};
        long proposed[4] = {0, 0, 0, 0};
        const auto ka = static_cast<std::size_t>(problem.coords_a.rows());
        const auto kb = static_cast<std::size_t>(problem.coords_b.rows());
        std::vector<double> incl_a(ka, 0.0), incl_b(kb, 0.0);
        Matrix rot_sum = Matrix::Zero(problem.dim(), problem.dim());
        Vector shift_sum = Vector::Zero(problem.dim());
        long n_post = 0;
        bool have_map = false;
        bool restart = false;

        for (long it = 1; it <= h.n_iterations; ++it) {
            sampler.apply_schedules(it);
            const bool escape = h.escape_period > 0 && it % h.escape_period == 0;
            if (h.proposal_sd_rotation > 0.0) {
                ++proposed[0];
                accepted[0] += sampler.mh_step_rigid(RigidBlock::Rotation, escape) ? 1 : 0;
            }
            if (h.proposal_sd_translation > 0.0) {
                ++proposed[1];
                accepted[1] += sampler.mh_step_rigid(RigidBlock::Translation, escape) ? 1 : 0;
            }
            sampler.gibbs_tau();
            for (int f = 0; f < h.mask_flips; ++f) {
                if (h.update_mask_a && !problem.frozen_a()) {
                    ++proposed[2];
                    accepted[2] += sampler.mh_step_mask(MaskSide::A) ? 1 : 0;
                }
                if (h.update_mask_b) {
                    ++proposed[3];
                    accepted[3] += sampler.mh_step_mask(MaskSide::B) ? 1 : 0;
                }
            }

            ChainState s = sampler.state();
            s.iteration = it;
            if (it % h.thin == 0)
                result.trace.push_back({it, s.transform.euler, s.transform.translation, s.tau, s.similarity,
                                        s.dissimilarity, mask_count(s.mask_a), mask_count(s.mask_b),
                                        s.log_posterior});

            if (h.restart_check_iter > 0 && it == h.restart_check_iter && s.dissimilarity > h.restart_threshold) {
                if (restarts < h.max_restarts) {
                    ++restarts;
                    restart = true;
                    break;
                }
                result.failed = true;
            }

            if (it > map_start) {
                ++n_post;
                for (std::size_t i = 0; i < ka; ++i) incl_a[i] += s.mask_a[i];
                for (std::size_t i = 0; i < kb; ++i) incl_b[i] += s.mask_b[i];
                rot_sum += s.transform.rotation();
                shift_sum += s.transform.translation;
                if (!have_map || s.log_posterior > result.map_state.log_posterior) {
                    result.map_state = s;
                    have_map = true;
                }
            }
            if (it == h.n_iterations) result.final_state = s;
        }
        if (restart) continue;
        attempt_done = true;

        result.acceptance.rotation = proposed[0] ? static_cast<double>(accepted[0]) / proposed[0] : 0.0;
        result.acceptance.translation = proposed[1] ? static_cast<double>(accepted[1]) / proposed[1] : 0.0;
        result.acceptance.mask_a = proposed[2] ? static_cast<double>(accepted[2]) / proposed[2] : 0.0;
        result.acceptance.mask_b = proposed[3] ? static_cast<double>(accepted[3]) / proposed[3] : 0.0;

        if (!have_map) {
            result.map_state = sampler.state();
            result.map_state.iteration = h.n_iterations;
            n_post = 0;
        }
        result.plug_in_distance = result.map_state.dissimilarity;

        result.inclusion_a.assign(ka, 0.0);
        result.inclusion_b.assign(kb, 0.0);
        if (n_post > 0) {
            for (std::size_t i = 0; i < ka; ++i) result.inclusion_a[i] = incl_a[i] / static_cast<double>(n_post);
            for (std::size_t i = 0; i < kb; ++i) result.inclusion_b[i] = incl_b[i] / static_cast<double>(n_post);
            const Matrix mean_rot = detail::nearest_rotation(rot_sum / static_cast<double>(n_post));
            result.mean_transform = RigidTransform::from_matrix(mean_rot, shift_sum / static_cast<double>(n_post));
        } else {
            for (std::size_t i = 0; i < ka; ++i) result.inclusion_a[i] = result.map_state.mask_a[i];
            for (std::size_t i = 0; i < kb; ++i) result.inclusion_b[i] = result.map_state.mask_b[i];
            result.mean_transform = result.map_state.transform;
        }
        auto majority = [](const std::vector<double>& p) {
            Mask m(p.size(), 0);
            for (std::size_t i = 0; i < p.size(); ++i) m[i] = p[i] >= 0.5 ? 1 : 0;
            if (mask_count(m) == 0) m[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())] = 1;
            return m;
        };
        result.mean_mask_a = problem.frozen_a() ? full_mask(problem.coords_a.rows()) : majority(result.inclusion_a);
        result.mean_mask_b = majority(result.inclusion_b);
        result.mean_plug_in_distance =
            sampler.evaluate(result.mean_transform, result.mean_mask_a, result.mean_mask_b, result.map_state.tau)
                .dissimilarity;
        result.n_restarts = restarts;
        result.final_models = sampler.models();
        result.final_weight_q = sampler.weight_q();
    }
    return result;
}

/// Re-evaluates the channel-weighted dissimilarity for fixed parameters using
/// the models and channel weight a finished run ended with.
inline double evaluate_dissimilarity(const PairProblem& problem, const Hyperparameters& hyper,
                                     const AlignmentResult& result, const RigidTransform& t, const Mask& mask_a,
                                     const Mask& mask_b) {
    PairProblem p = problem;
    for (std::size_t c = 0; c < p.channels.size(); ++c) p.channels[c].model = result.final_models[c];
    Hyperparameters h = hyper;
    h.range_schedule.enabled = false;
    h.weight_schedule.enabled = false;
    h.weight_schedule.fixed_weight_q = result.final_weight_q;
    h.annealing_schedule.enabled = false;
    PairwiseSampler s(p, h, 0);
    s.apply_schedules(1);
    s.reset(t, mask_a, mask_b, 1.0);
    return s.state().dissimilarity;
}

}  // namespace fieldalign
