#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <vector>

#include "fieldalign/covariance.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"

namespace fieldalign {

/// Binary inclusion vector, one entry per point.
using Mask = std::vector<unsigned char>;

inline Mask full_mask(Eigen::Index k) { return Mask(static_cast<std::size_t>(k), 1); }

inline Eigen::Index mask_count(const Mask& m) {
    Eigen::Index n = 0;
    for (auto v : m) n += v ? 1 : 0;
    return n;
}

inline std::vector<Eigen::Index> mask_indices(const Mask& m) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) idx.push_back(static_cast<Eigen::Index>(i));
    return idx;
}

/// Solves gram * w = marks through a Cholesky factorization.
inline Vector kriging_weights(const Vector& marks, const Matrix& gram) {
    if (gram.rows() != gram.cols() || gram.rows() != marks.size())
        throw DomainError("Gram matrix and mark vector sizes differ");
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success)
        throw SingularityError("Gram matrix is not positive definite", 0, 0);
    return llt.solve(marks);
}

/// Simple-kriging predictor Z(x) = sum_i w_i sigma(|x_i - x|) over the
/// unmasked points. Immutable once built.
class PredictedField {
public:
    PredictedField() = default;

    /// Kriges marks of the unmasked points. `mean` is subtracted before
    /// kriging and added back by predict(); it defaults to zero.
    static PredictedField build(const Points& coords, const Vector& marks, const Mask& mask,
                                const CovarianceModel& model, double jitter = 0.0, double mean = 0.0) {
        if (coords.rows() != marks.size() || static_cast<Eigen::Index>(mask.size()) != coords.rows())
            throw DomainError("coordinates, marks and mask sizes differ");
        const auto idx = mask_indices(mask);
        if (idx.empty()) throw EmptyFieldError("every point of the field is masked out");
        PredictedField f;
        f.model_ = model;
        f.mask_ = mask;
        f.mean_ = mean;
        f.coords_.resize(static_cast<Eigen::Index>(idx.size()), coords.cols());
        Vector z(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            f.coords_.row(static_cast<Eigen::Index>(r)) = coords.row(idx[r]);
            z[static_cast<Eigen::Index>(r)] = marks[idx[r]] - mean;
        }
        auto factor = std::make_shared<GramFactor>(factor_gram(model, f.coords_, jitter));
        f.weights_ = factor->llt.solve(z);
        // w' Sigma w = w' z for the exact solve.
        f.norm_ = std::sqrt(std::max(0.0, f.weights_.dot(z)));
        f.factor_ = std::move(factor);
        return f;
    }

    /// Field with prescribed coefficients on the given points (no kriging).
    static PredictedField from_coefficients(const Points& coords, const Vector& weights,
                                            const CovarianceModel& model) {
        if (coords.rows() != weights.size()) throw DomainError("coefficient count differs from points");
        if (coords.rows() == 0) throw EmptyFieldError("field without points");
        PredictedField f;
        f.model_ = model;
        f.mask_ = full_mask(coords.rows());
        f.coords_ = coords;
        f.weights_ = weights;
        const Matrix g = gram_matrix(model, coords);
        f.norm_ = std::sqrt(std::max(0.0, weights.dot(g * weights)));
        return f;
    }

    const Points& source_coords() const { return coords_; }
    const Vector& weights() const { return weights_; }
    const Mask& mask() const { return mask_; }
    const CovarianceModel& model() const { return model_; }
    double norm() const { return norm_; }
    double mean() const { return mean_; }
    Eigen::Index active_count() const { return coords_.rows(); }
    int dim() const { return static_cast<int>(coords_.cols()); }

    /// Cholesky factor of the unmasked Gram; null for coefficient fields.
    const GramFactor* factor() const { return factor_.get(); }

    /// Copy of this field with weights divided by the RKHS norm.
    PredictedField normalized() const {
        if (!(norm_ > 0.0)) throw DomainError("cannot normalize a zero field");
        PredictedField f = *this;
        f.weights_ /= norm_;
        f.norm_ = 1.0;
        f.mean_ = 0.0;
        return f;
    }

    /// Same coefficients, source points moved by a rigid transform.
    PredictedField transformed(const RigidTransform& t) const {
        PredictedField f = *this;
        f.coords_ = apply_transform(t, coords_);
        return f;
    }

    double predict(const Vector& x) const {
        if (coords_.rows() == 0) return mean_;
        if (x.size() != coords_.cols()) throw DomainError("prediction point has wrong dimension");
        const Kernel k(model_);
        double s = 0.0;
        for (Eigen::Index i = 0; i < coords_.rows(); ++i)
            s += weights_[i] * k.from_squared((coords_.row(i) - x.transpose()).squaredNorm());
        return s + mean_;
    }

private:
    Points coords_;
    Vector weights_;
    Mask mask_;
    CovarianceModel model_;
    double norm_ = 0.0;
    double mean_ = 0.0;
    std::shared_ptr<const GramFactor> factor_;
};

inline PredictedField build_field(const MarkedPointSet& points, const Mask& mask, const CovarianceModel& model) {
    points.validate();
    return PredictedField::build(points.coords, points.marks, mask, model);
}

inline double predict_field(const PredictedField& field, const Vector& x) { return field.predict(x); }

}  // namespace fieldalign
