#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fieldalign/covariance.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/kriging.hpp"
#include "fieldalign/mcmc.hpp"
#include "fieldalign/parallel.hpp"
#include "fieldalign/random.hpp"

namespace fieldalign {

/// One RKHS-normalized member field placed by its transform.
struct FieldComponent {
    Points coords;   // transformed unmasked source points
    Vector weights;  // w / N
};

/// scale * sum over components of sum_l w_l sigma(|x_l - x|).
struct MeanField {
    std::vector<FieldComponent> components;
    double scale = 1.0;
    CovarianceModel model;

    double evaluate(const Vector& x) const {
        const Kernel k(model);
        double s = 0.0;
        for (const auto& c : components)
            for (Eigen::Index l = 0; l < c.coords.rows(); ++l)
                s += c.weights[l] * k.from_squared((c.coords.row(l) - x.transpose()).squaredNorm());
        return scale * s;
    }

    double predict(const Vector& x) const { return evaluate(x); }

    Eigen::Index point_count() const {
        Eigen::Index n = 0;
        for (const auto& c : components) n += c.coords.rows();
        return n;
    }

    /// All component points stacked, for use as a frozen reference set.
    Points stacked_coords() const {
        const int m = components.empty() ? 0 : static_cast<int>(components.front().coords.cols());
        Points out(point_count(), m);
        Eigen::Index r = 0;
        for (const auto& c : components) {
            out.middleRows(r, c.coords.rows()) = c.coords;
            r += c.coords.rows();
        }
        return out;
    }

    /// Stacked coefficients with the scale folded in.
    Vector stacked_coefficients() const {
        Vector out(point_count());
        Eigen::Index r = 0;
        for (const auto& c : components) {
            out.segment(r, c.weights.size()) = scale * c.weights;
            r += c.weights.size();
        }
        return out;
    }
};

inline FieldComponent normalized_component(const MarkedPointSet& set, const RigidTransform& t, const Mask& mask,
                                           const CovarianceModel& model) {
    const PredictedField f = build_field(set, mask, model).normalized().transformed(t);
    return {f.source_coords(), f.weights()};
}

inline double component_inner(const FieldComponent& a, const FieldComponent& b, const Kernel& k) {
    return a.weights.dot(cross_kernel(k, a.coords, b.coords) * b.weights);
}

namespace detail {

inline void check_gpa_inputs(const std::vector<MarkedPointSet>& sets, const std::vector<RigidTransform>& transforms,
                             const std::vector<Mask>& masks) {
    if (sets.size() < 2) throw DomainError("multiple alignment needs at least two sets");
    if (transforms.size() != sets.size() || masks.size() != sets.size())
        throw DomainError("one transform and one mask per set are required");
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (static_cast<Eigen::Index>(masks[i].size()) != sets[i].size())
            throw DomainError("mask length differs from point count");
        if (mask_count(masks[i]) == 0) throw EmptyFieldError("every point of a set is masked out");
    }
}

inline std::vector<FieldComponent> components(const std::vector<MarkedPointSet>& sets,
                                              const std::vector<RigidTransform>& transforms,
                                              const std::vector<Mask>& masks, const CovarianceModel& model) {
    std::vector<FieldComponent> out;
    out.reserve(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i)
        out.push_back(normalized_component(sets[i], transforms[i], masks[i], model));
    return out;
}

}  // namespace detail

/// Sum over unordered pairs of normalized-field inner products.
inline double multi_carbo(const std::vector<MarkedPointSet>& sets, const std::vector<RigidTransform>& transforms,
                          const std::vector<Mask>& masks, const CovarianceModel& model) {
    detail::check_gpa_inputs(sets, transforms, masks);
    const auto comp = detail::components(sets, transforms, masks, model);
    const Kernel k(model);
    double c = 0.0;
    for (std::size_t i = 0; i < comp.size(); ++i)
        for (std::size_t j = i + 1; j < comp.size(); ++j) c += component_inner(comp[i], comp[j], k);
    return c;
}

/// Mean of normalized member fields over `group_indices` at fixed transforms.
inline MeanField group_mean_field(const std::vector<MarkedPointSet>& sets,
                                  const std::vector<RigidTransform>& transforms, const std::vector<Mask>& masks,
                                  const CovarianceModel& model, const std::vector<std::size_t>& group_indices) {
    if (group_indices.empty()) throw DomainError("mean field of an empty group");
    MeanField mf;
    mf.model = model;
    mf.scale = 1.0 / static_cast<double>(group_indices.size());
    for (auto i : group_indices) {
        if (i >= sets.size() || i >= transforms.size() || i >= masks.size())
            throw DomainError("group index out of range");
        mf.components.push_back(normalized_component(sets[i], transforms[i], masks[i], model));
    }
    return mf;
}

/// Normalized mean field of every set except `omit`.
inline MeanField leave_one_out_mean_field(std::size_t omit, const std::vector<MarkedPointSet>& sets,
                                          const std::vector<RigidTransform>& transforms,
                                          const std::vector<Mask>& masks, const CovarianceModel& model) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < sets.size(); ++j)
        if (j != omit) idx.push_back(j);
    return group_mean_field(sets, transforms, masks, model, idx);
}

/// Inner product of the i-th normalized field with the mean of the others.
inline double leave_one_out_similarity(std::size_t i, const std::vector<MarkedPointSet>& sets,
                                       const std::vector<RigidTransform>& transforms,
                                       const std::vector<Mask>& masks, const CovarianceModel& model) {
    detail::check_gpa_inputs(sets, transforms, masks);
    if (i >= sets.size()) throw DomainError("set index out of range");
    const auto comp = detail::components(sets, transforms, masks, model);
    const Kernel k(model);
    double s = 0.0;
    for (std::size_t j = 0; j < comp.size(); ++j)
        if (j != i) s += component_inner(comp[i], comp[j], k);
    return s / static_cast<double>(comp.size() - 1);
}

struct GpaState {
    std::vector<RigidTransform> transforms;
    std::vector<Mask> masks;
    double multi_carbo = 0.0;
    int iteration = 0;
};

struct GpaSettings {
    /// Step 1 pairwise chains onto the reference.
    Hyperparameters pairwise;
    InitSpec pairwise_init;
    /// Optional charge-channel sets; when given, step 1 scores both channels.
    std::vector<MarkedPointSet> step1_charge_sets;
    CovarianceModel step1_charge_model;
    /// Leave-one-out chains onto the frozen mean field.
    Hyperparameters pass;
    double tol = 1e-4;
    int max_passes = 50;
    unsigned workers = 1;
};

struct GpaResult {
    GpaState state;                  // best state seen
    std::size_t reference = 0;
    std::vector<double> pass_values; // C after step 1, then after each pass
    std::vector<AlignmentResult> step1;
    std::vector<std::vector<AlignmentResult>> pass_results;
    bool converged = false;
};

/// Smallest set by point count, ties to the lowest index.
inline std::size_t smallest_set(const std::vector<MarkedPointSet>& sets) {
    std::size_t r = 0;
    for (std::size_t i = 1; i < sets.size(); ++i)
        if (sets[i].size() < sets[r].size()) r = i;
    return r;
}

/// Stochastic field GPA: pairwise superposition onto the smallest set, then
/// passes of leave-one-out chains onto frozen normalized mean fields. A pass
/// move for set i is kept only if it does not lower its leave-one-out
/// similarity, so the recorded criterion never decreases.
inline GpaResult run_field_gpa(const std::vector<MarkedPointSet>& sets, const CovarianceModel& model,
                               const GpaSettings& settings, std::uint64_t seed) {
    if (sets.size() < 2) throw DomainError("multiple alignment needs at least two sets");
    for (const auto& s : sets) s.validate();
    for (const auto& s : sets)
        if (s.dim() != sets.front().dim()) throw DomainError("sets have different dimensions");
    if (settings.max_passes < 1) throw ConfigError("max_passes must be positive");
    settings.pairwise.validate();
    settings.pass.validate();
    if (!settings.step1_charge_sets.empty() && settings.step1_charge_sets.size() != sets.size())
        throw DomainError("one charge set per steric set is required");

    const std::size_t n = sets.size();
    const int m = sets.front().dim();
    GpaResult out;
    out.reference = smallest_set(sets);
    const std::size_t ref = out.reference;

    out.step1.resize(n);
    parallel_for(n, settings.workers, [&](std::size_t j) {
        if (j == ref) return;
        const PairProblem p =
            settings.step1_charge_sets.empty()
                ? PairProblem::single(sets[ref], sets[j], model)
                : PairProblem::two_channel(settings.step1_charge_sets[ref], settings.step1_charge_sets[j],
                                           settings.step1_charge_model, sets[ref], sets[j], model);
        out.step1[j] = run_pairwise_alignment(p, settings.pairwise, settings.pairwise_init, derive_seed(seed, j));
    });

    GpaState st;
    st.transforms.assign(n, RigidTransform::identity(m));
    st.masks.resize(n);
    std::vector<double> ref_votes(static_cast<std::size_t>(sets[ref].size()), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (j == ref) continue;
        st.transforms[j] = out.step1[j].map_state.transform;
        st.masks[j] = out.step1[j].map_state.mask_b;
        for (std::size_t l = 0; l < ref_votes.size(); ++l) ref_votes[l] += out.step1[j].map_state.mask_a[l];
    }
    st.masks[ref] = Mask(ref_votes.size(), 0);
    for (std::size_t l = 0; l < ref_votes.size(); ++l)
        st.masks[ref][l] = 2.0 * ref_votes[l] >= static_cast<double>(n - 1) ? 1 : 0;
    if (mask_count(st.masks[ref]) == 0) st.masks[ref] = full_mask(sets[ref].size());
    st.multi_carbo = multi_carbo(sets, st.transforms, st.masks, model);
    out.pass_values.push_back(st.multi_carbo);
    out.state = st;

    double current = st.multi_carbo;
    int pass = 0;
    do {
        ++pass;
        std::vector<AlignmentResult> results(n);
        for (std::size_t i = 0; i < n; ++i) {
            const MeanField mf = leave_one_out_mean_field(i, sets, st.transforms, st.masks, model);
            PairProblem p;
            p.coords_a = mf.stacked_coords();
            p.coords_b = sets[i].coords;
            p.channels.push_back({Vector(), sets[i].marks, model});
            p.fixed_coefficients_a.push_back(mf.stacked_coefficients());
            InitSpec init;
            init.kind = InitKind::Fixed;
            init.fixed = st.transforms[i];
            init.mask_b = st.masks[i];
            results[i] = run_pairwise_alignment(p, settings.pass, init,
                                                derive_seed(seed, 1000003ull * static_cast<std::uint64_t>(pass) + i));
            const double before = leave_one_out_similarity(i, sets, st.transforms, st.masks, model);
            auto trial_t = st.transforms;
            auto trial_m = st.masks;
            trial_t[i] = results[i].map_state.transform;
            trial_m[i] = results[i].map_state.mask_b;
            const double after = leave_one_out_similarity(i, sets, trial_t, trial_m, model);
            if (after >= before) {
                st.transforms = std::move(trial_t);
                st.masks = std::move(trial_m);
            }
        }
        st.multi_carbo = multi_carbo(sets, st.transforms, st.masks, model);
        st.iteration = pass;
        out.pass_values.push_back(st.multi_carbo);
        out.pass_results.push_back(std::move(results));
        if (st.multi_carbo >= out.state.multi_carbo) out.state = st;
        const double d = std::abs(st.multi_carbo - current);
        current = st.multi_carbo;
        if (d <= settings.tol) {
            out.converged = true;
            break;
        }
    } while (pass < settings.max_passes);
    return out;
}

}  // namespace fieldalign
