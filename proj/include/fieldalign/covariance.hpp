#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"

namespace fieldalign {

enum class KernelKind { Matern, Gaussian };

/// Modified Bessel function of the second kind K_nu(x), x > 0.
///
/// Half-integer orders use the terminating closed form
/// K_{n+1/2}(x) = sqrt(pi / 2x) e^{-x} sum_k (n+k)! / (k! (n-k)! (2x)^k).
inline double modified_bessel_k(double nu, double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("modified_bessel_k needs x > 0");
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw DomainError("modified_bessel_k needs nu >= 0");
    const double twice = 2.0 * nu;
    const double n_half = std::round(twice);
    if (std::abs(twice - n_half) < 1e-12 && static_cast<long>(n_half) % 2 == 1) {
        const int n = static_cast<int>((n_half - 1.0) / 2.0);
        double term = 1.0, sum = 1.0;
        for (int k = 1; k <= n; ++k) {
            // ratio of consecutive terms: (n+k)(n-k+1) / (k * 2x)
            term *= static_cast<double>((n + k) * (n - k + 1)) / (static_cast<double>(k) * 2.0 * x);
            sum += term;
        }
        return std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) * sum;
    }
    return std::cyl_bessel_k(nu, x);
}

/// Isotropic correlation function with sigma(0) = 1.
///
/// Matern: sigma(d) = (u^nu K_nu(u)) / (2^{nu-1} Gamma(nu)), u = 2 sqrt(nu) d / rho.
/// Gaussian: sigma(d) = exp(-d^2 / rho^2), the nu -> infinity limit.
struct CovarianceModel {
    KernelKind kind = KernelKind::Gaussian;
    double nu = 0.5;
    double rho = 1.0;

    static CovarianceModel matern(double nu, double rho) {
        CovarianceModel m{KernelKind::Matern, nu, rho};
        m.validate();
        return m;
    }
    static CovarianceModel gaussian(double rho) {
        CovarianceModel m{KernelKind::Gaussian, 0.0, rho};
        m.validate();
        return m;
    }

    void validate() const {
        if (!(rho > 0.0) || !std::isfinite(rho)) throw DomainError("kernel range rho must be positive");
        if (kind == KernelKind::Matern && (!(nu > 0.0) || !std::isfinite(nu)))
            throw DomainError("Matern smoothness nu must be positive");
    }

    CovarianceModel with_range(double r) const {
        CovarianceModel m = *this;
        m.rho = r;
        m.validate();
        return m;
    }

    std::string describe() const {
        if (kind == KernelKind::Gaussian) return "gaussian(rho=" + std::to_string(rho) + ")";
        return "matern(nu=" + std::to_string(nu) + ",rho=" + std::to_string(rho) + ")";
    }

    friend bool operator==(const CovarianceModel& a, const CovarianceModel& b) {
        if (a.kind != b.kind || a.rho != b.rho) return false;
        return a.kind == KernelKind::Gaussian || a.nu == b.nu;
    }
};

/// Kernel evaluator with the per-model constants hoisted out of the hot loop.
class Kernel {
public:
    explicit Kernel(const CovarianceModel& model) : model_(model) {
        model_.validate();
        if (model_.kind == KernelKind::Gaussian) {
            mode_ = Mode::Gaussian;
            inv_rho2_ = 1.0 / (model_.rho * model_.rho);
            return;
        }
        scale_ = 2.0 * std::sqrt(model_.nu) / model_.rho;
        const double twice = 2.0 * model_.nu;
        const double rounded = std::round(twice);
        if (std::abs(twice - rounded) < 1e-12 && static_cast<long>(rounded) % 2 == 1 && rounded <= 11) {
            mode_ = Mode::HalfInteger;
            // sigma(u) = e^{-u} sum_j c_j u^j, coefficients from the closed-form K_{n+1/2}.
            half_n_ = static_cast<int>((rounded - 1.0) / 2.0);
            const double nu = model_.nu;
            const double pre = std::sqrt(std::numbers::pi / 2.0) / (std::pow(2.0, nu - 1.0) * std::tgamma(nu));
            // u^nu * sqrt(pi/(2u)) * (2u)^{-k} = sqrt(pi/2) 2^{-k} u^{n-k}
            for (int k = 0; k <= half_n_; ++k) {
                double comb = 1.0;  // (n+k)! / (k! (n-k)!)
                for (int t = 1; t <= half_n_ + k; ++t) comb *= t;
                for (int t = 1; t <= k; ++t) comb /= t;
                for (int t = 1; t <= half_n_ - k; ++t) comb /= t;
                poly_[half_n_ - k] = pre * comb * std::pow(2.0, -k);
            }
        } else {
            mode_ = Mode::General;
            log_norm_ = -((model_.nu - 1.0) * std::log(2.0) + std::lgamma(model_.nu));
        }
    }

    const CovarianceModel& model() const { return model_; }

    /// sigma at squared distance d2.
    double from_squared(double d2) const {
        if (mode_ == Mode::Gaussian) return std::exp(-d2 * inv_rho2_);
        if (d2 <= 0.0) return 1.0;
        return from_scaled(scale_ * std::sqrt(d2));
    }

    double operator()(double distance) const {
        if (!(distance >= 0.0)) throw DomainError("kernel distance must be nonnegative");
        if (mode_ == Mode::Gaussian) return std::exp(-distance * distance * inv_rho2_);
        if (distance == 0.0) return 1.0;
        return from_scaled(scale_ * distance);
    }

private:
    enum class Mode { Gaussian, HalfInteger, General };

    double from_scaled(double u) const {
        if (mode_ == Mode::HalfInteger) {
            double p = poly_[half_n_];
            for (int j = half_n_ - 1; j >= 0; --j) p = p * u + poly_[j];
            return std::min(1.0, std::exp(-u) * p);
        }
        if (u > 700.0) return 0.0;
        const double v = std::exp(log_norm_ + model_.nu * std::log(u)) * std::cyl_bessel_k(model_.nu, u);
        return std::isfinite(v) ? std::min(1.0, v) : 1.0;
    }

    CovarianceModel model_;
    Mode mode_ = Mode::Gaussian;
    double inv_rho2_ = 0.0;
    double scale_ = 0.0;
    double log_norm_ = 0.0;
    int half_n_ = 0;
    std::array<double, 8> poly_{};
};

inline double kernel_value(const CovarianceModel& model, double distance) {
    if (!(distance >= 0.0) || !std::isfinite(distance))
        throw DomainError("kernel distance must be finite and nonnegative");
    return Kernel(model)(distance);
}

/// Sigma_ij = sigma(|x_i - x_j|) + jitter [i == j].
inline Matrix gram_matrix(const CovarianceModel& model, const Points& coords, double jitter = 0.0) {
    if (!(jitter >= 0.0)) throw DomainError("jitter must be nonnegative");
    const Kernel k(model);
    const Eigen::Index n = coords.rows();
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        g(i, i) = 1.0 + jitter;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = k.from_squared((coords.row(i) - coords.row(j)).squaredNorm());
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

/// Cross kernel block K_ij = sigma(|a_i - b_j|).
inline Matrix cross_kernel(const Kernel& k, const Points& a, const Points& b) {
    Matrix out(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out(i, j) = k.from_squared((a.row(i) - b.row(j)).squaredNorm());
    return out;
}

/// Diagonal jitter levels tried, in order, after a failed factorization.
inline constexpr std::array<double, 3> kJitterLadder{1e-12, 1e-10, 1e-8};

enum class JitterPolicy { Escalate, Strict };

/// Cholesky factor of a Gram matrix plus the jitter that made it succeed.
struct GramFactor {
    Eigen::LLT<Matrix> llt;
    double jitter = 0.0;
};

namespace detail {

inline std::pair<Eigen::Index, Eigen::Index> closest_pair(const Points& coords) {
    std::pair<Eigen::Index, Eigen::Index> best{0, std::min<Eigen::Index>(1, coords.rows() - 1)};
    double d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < coords.rows(); ++i)
        for (Eigen::Index j = i + 1; j < coords.rows(); ++j) {
            const double v = (coords.row(i) - coords.row(j)).squaredNorm();
            if (v < d) {
                d = v;
                best = {i, j};
            }
        }
    return best;
}

}  // namespace detail

/// Factorizes a Gram matrix, escalating the diagonal jitter through
/// kJitterLadder on failure unless the policy is Strict.
inline GramFactor factor_gram(const Matrix& gram, const Points& coords, double jitter = 0.0,
                              JitterPolicy policy = JitterPolicy::Escalate) {
    GramFactor f;
    f.llt.compute(gram);
    f.jitter = jitter;
    if (f.llt.info() == Eigen::Success) return f;
    if (policy == JitterPolicy::Escalate) {
        for (double extra : kJitterLadder) {
            if (extra <= jitter) continue;
            Matrix g = gram;
            g.diagonal().array() += extra - jitter;
            f.llt.compute(g);
            if (f.llt.info() == Eigen::Success) {
                f.jitter = extra;
                return f;
            }
        }
    }
    const auto [i, j] = detail::closest_pair(coords);
    throw SingularityError("Gram matrix is not positive definite (closest points " + std::to_string(i) +
                               " and " + std::to_string(j) + ")",
                           i, j);
}

inline GramFactor factor_gram(const CovarianceModel& model, const Points& coords, double jitter = 0.0,
                              JitterPolicy policy = JitterPolicy::Escalate) {
    return factor_gram(gram_matrix(model, coords, jitter), coords, jitter, policy);
}

struct SemivariogramBin {
    double lag = 0.0;          // mean pair distance in the bin
    double semivariance = 0.0; // 0.5 * mean squared mark difference
    std::size_t count = 0;
};

/// Classical (Matheron) semivariogram pooled over all within-set pairs.
/// Empty bins are omitted.
inline std::vector<SemivariogramBin> empirical_semivariogram(const std::vector<MarkedPointSet>& sets,
                                                             double bin_width) {
    if (!(bin_width > 0.0)) throw DomainError("bin width must be positive");
    bool any = false;
    struct Acc {
        double dist = 0.0, sq = 0.0;
        std::size_t n = 0;
    };
    std::map<long, Acc> bins;
    for (const auto& s : sets) {
        if (s.size() >= 2) any = true;
        for (Eigen::Index i = 0; i < s.size(); ++i)
            for (Eigen::Index j = i + 1; j < s.size(); ++j) {
                const double d = (s.coords.row(i) - s.coords.row(j)).norm();
                const double dz = s.marks[i] - s.marks[j];
                auto& a = bins[static_cast<long>(std::floor(d / bin_width))];
                a.dist += d;
                a.sq += dz * dz;
                ++a.n;
            }
    }
    if (!any) throw DomainError("semivariogram needs a set with at least two points");
    std::vector<SemivariogramBin> out;
    for (const auto& [idx, a] : bins)
        out.push_back({a.dist / static_cast<double>(a.n), 0.5 * a.sq / static_cast<double>(a.n), a.n});
    return out;
}

}  // namespace fieldalign
