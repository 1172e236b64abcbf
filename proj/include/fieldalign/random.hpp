#pragma once

#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace fieldalign {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream) pairs, e.g. one per replication.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5eedu};
    return Rng(seq);
}

/// Child seed derived from a master seed and an index.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    Rng r = make_rng(master, index + 0x9e3779b97f4a7c15ull);
    return r();
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Haar-distributed rotation in dimension 2 or 3.
inline Eigen::MatrixXd random_rotation(int dim, Rng& rng) {
    if (dim == 2) {
        const double t = uniform(rng, -std::numbers::pi, std::numbers::pi);
        Eigen::MatrixXd r(2, 2);
        r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
        return r;
    }
    Eigen::Vector4d q;
    for (int i = 0; i < 4; ++i) q[i] = standard_normal(rng);
    q.normalize();
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    return quat.toRotationMatrix();
}

}  // namespace fieldalign
