#pragma once

#include <cmath>
#include <limits>

#include "fieldalign/covariance.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/kriging.hpp"

namespace fieldalign {

/// Carbo dissimilarity (1 - C) / (1 + C); +infinity at C = -1.
inline double carbo_dissimilarity(double similarity) {
    if (similarity <= -1.0) return std::numeric_limits<double>::infinity();
    return (1.0 - similarity) / (1.0 + similarity);
}

/// Inverse map of carbo_dissimilarity.
inline double carbo_similarity_from_dissimilarity(double d) {
    if (std::isinf(d)) return -1.0;
    return (1.0 - d) / (1.0 + d);
}

struct CarboScore {
    double similarity = 0.0;
    double dissimilarity = 0.0;
    double inner = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;

    static CarboScore from_inner(double inner, double norm_a, double norm_b) {
        CarboScore s;
        s.inner = inner;
        s.norm_a = norm_a;
        s.norm_b = norm_b;
        // Cauchy-Schwarz holds exactly; clamping only removes rounding excess.
        s.similarity = std::max(-1.0, std::min(1.0, inner / (norm_a * norm_b)));
        s.dissimilarity = carbo_dissimilarity(s.similarity);
        return s;
    }
};

/// RKHS inner product <Z_a, Z_b o Phi^{-1}>: sum_ij w_i^a w_j^b sigma(|x_i^a - Phi(x_j^b)|).
inline double rkhs_inner(const PredictedField& a, const PredictedField& b, const RigidTransform& transform_b) {
    if (!(a.model() == b.model())) throw ConfigError("fields use different kernel models");
    if (a.active_count() == 0 || b.active_count() == 0) throw EmptyFieldError("inner product of an empty field");
    const Points moved = apply_transform(transform_b, b.source_coords());
    const Kernel k(a.model());
    const Points& xa = a.source_coords();
    const Vector& wa = a.weights();
    const Vector& wb = b.weights();
    double s = 0.0;
    for (Eigen::Index j = 0; j < moved.rows(); ++j) {
        double col = 0.0;
        for (Eigen::Index i = 0; i < xa.rows(); ++i)
            col += wa[i] * k.from_squared((xa.row(i) - moved.row(j)).squaredNorm());
        s += wb[j] * col;
    }
    return s;
}

/// Partial Kernel Carbo score of two masked fields with B moved by transform_b.
inline CarboScore partial_carbo(const PredictedField& a, const PredictedField& b, const RigidTransform& transform_b) {
    const double inner = rkhs_inner(a, b, transform_b);
    if (!(a.norm() > 0.0) || !(b.norm() > 0.0)) throw DomainError("Carbo score of a zero field");
    return CarboScore::from_inner(inner, a.norm(), b.norm());
}

/// Weighted mean of the electrostatic and steric dissimilarities.
inline double combined_carbo(const CarboScore& score_q, const CarboScore& score_s, double weight_q) {
    if (!(weight_q >= 0.0 && weight_q <= 1.0)) throw DomainError("channel weight must lie in [0, 1]");
    if (weight_q == 1.0) return score_q.dissimilarity;
    if (weight_q == 0.0) return score_s.dissimilarity;
    return weight_q * score_q.dissimilarity + (1.0 - weight_q) * score_s.dissimilarity;
}

}  // namespace fieldalign
