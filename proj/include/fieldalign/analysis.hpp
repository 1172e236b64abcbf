#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/parallel.hpp"

namespace fieldalign {

/// Geometric mean of the two directed distances.
inline double symmetrize_distances(double forward, double backward) {
    if (!(forward >= 0.0) || !(backward >= 0.0)) throw DomainError("distances must be nonnegative");
    if (forward == backward) return forward;
    return std::sqrt(forward * backward);
}

enum class DistanceKind { Mean, MAP };

struct DistanceMatrix {
    std::vector<std::string> ids;
    Matrix values;
    DistanceKind kind = DistanceKind::MAP;

    Eigen::Index size() const { return values.rows(); }

    void validate() const {
        if (values.rows() != values.cols()) throw DomainError("distance matrix must be square");
        if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != values.rows())
            throw DomainError("identifier count differs from matrix size");
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
            if (values(i, i) != 0.0) throw DomainError("distance matrix diagonal must be zero");
            for (Eigen::Index j = 0; j < i; ++j) {
                if (!(values(i, j) >= 0.0)) throw DomainError("distances must be nonnegative");
                if (values(i, j) != values(j, i)) throw DomainError("distance matrix must be symmetric");
            }
        }
    }

    /// Symmetric matrix from directed distances d(i -> j) by geometric means.
    static DistanceMatrix from_directed(const Matrix& directed, std::vector<std::string> ids, DistanceKind kind) {
        if (directed.rows() != directed.cols()) throw DomainError("directed distances must be square");
        DistanceMatrix d{std::move(ids), Matrix::Zero(directed.rows(), directed.cols()), kind};
        for (Eigen::Index i = 0; i < directed.rows(); ++i)
            for (Eigen::Index j = 0; j < i; ++j)
                d.values(i, j) = d.values(j, i) = symmetrize_distances(directed(i, j), directed(j, i));
        return d;
    }

    std::string label(Eigen::Index i) const {
        return ids.empty() ? std::to_string(i) : ids[static_cast<std::size_t>(i)];
    }

    /// Header row of identifiers, then one row per set: id followed by distances.
    void write(std::ostream& os) const {
        os << "id";
        for (Eigen::Index j = 0; j < size(); ++j) os << ',' << label(j);
        os << '\n' << std::setprecision(17);
        for (Eigen::Index i = 0; i < size(); ++i) {
            os << label(i);
            for (Eigen::Index j = 0; j < size(); ++j) os << ',' << values(i, j);
            os << '\n';
        }
    }

    static DistanceMatrix read(std::istream& is, DistanceKind kind = DistanceKind::MAP) {
        auto split = [](const std::string& line) {
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            return cells;
        };
        std::string line;
        if (!std::getline(is, line)) throw ParseError("empty distance matrix", 1);
        auto header = split(line);
        if (header.size() < 2) throw ParseError("distance header needs at least one identifier", 1);
        DistanceMatrix d;
        d.kind = kind;
        d.ids.assign(header.begin() + 1, header.end());
        const auto n = static_cast<Eigen::Index>(d.ids.size());
        d.values = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const long lineno = static_cast<long>(i) + 2;
            if (!std::getline(is, line)) throw ParseError("distance matrix has too few rows", lineno);
            auto cells = split(line);
            if (static_cast<Eigen::Index>(cells.size()) != n + 1)
                throw ParseError("distance row has the wrong number of fields", lineno);
            for (Eigen::Index j = 0; j < n; ++j) {
                try {
                    std::size_t used = 0;
                    d.values(i, j) = std::stod(cells[static_cast<std::size_t>(j) + 1], &used);
                } catch (const std::exception&) {
                    throw ParseError("non-numeric distance", lineno);
                }
            }
        }
        d.validate();
        return d;
    }
};

/// Agglomerative clustering result. Leaves are 0..n-1; the cluster created by
/// merge k has id n + k.
struct Dendrogram {
    struct Merge {
        std::size_t left = 0;
        std::size_t right = 0;
        double height = 0.0;
        std::size_t size = 0;
    };
    std::vector<Merge> merges;
    std::vector<std::string> labels;

    std::size_t leaf_count() const { return labels.size(); }

    std::string newick() const {
        const std::size_t n = leaf_count();
        std::vector<std::string> text(n + merges.size());
        std::vector<double> height(n + merges.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) text[i] = labels[i];
        std::ostringstream num;
        num << std::setprecision(10);
        for (std::size_t k = 0; k < merges.size(); ++k) {
            const auto& m = merges[k];
            auto branch = [&](std::size_t c) {
                std::ostringstream s;
                s << std::setprecision(10) << text[c] << ':' << (m.height - height[c]);
                return s.str();
            };
            text[n + k] = "(" + branch(m.left) + "," + branch(m.right) + ")";
            height[n + k] = m.height;
        }
        return (merges.empty() ? text[0] : text.back()) + ";";
    }

    /// Merge table as comma-separated rows.
    void write_table(std::ostream& os) const {
        os << "step,left,right,height,size\n" << std::setprecision(17);
        for (std::size_t k = 0; k < merges.size(); ++k)
            os << k << ',' << merges[k].left << ',' << merges[k].right << ',' << merges[k].height << ','
               << merges[k].size << '\n';
    }
};

enum class WardVariant { D2, D };

/// Ward's minimum-variance clustering by the Lance-Williams recurrence.
///
/// D2 (default) applies the recurrence to squared dissimilarities and reports
/// their square roots as heights; D applies it to the dissimilarities as given.
inline Dendrogram ward_cluster(const DistanceMatrix& distances, WardVariant variant = WardVariant::D2) {
    distances.validate();
    const auto n = static_cast<std::size_t>(distances.size());
    if (n < 2) throw DomainError("clustering needs at least two items");
    Dendrogram out;
    for (std::size_t i = 0; i < n; ++i) out.labels.push_back(distances.label(static_cast<Eigen::Index>(i)));

    Matrix d = distances.values;
    if (variant == WardVariant::D2) d = d.array().square();
    std::vector<std::size_t> id(n), size(n, 1);
    std::vector<bool> active(n, true);
    for (std::size_t i = 0; i < n; ++i) id[i] = i;

    for (std::size_t step = 0; step + 1 < n; ++step) {
        std::size_t bi = 0, bj = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                const auto v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (v < best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        const double ni = static_cast<double>(size[bi]), nj = static_cast<double>(size[bj]);
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const double nk = static_cast<double>(size[k]);
            const auto K = static_cast<Eigen::Index>(k), I = static_cast<Eigen::Index>(bi),
                       J = static_cast<Eigen::Index>(bj);
            const double v = ((ni + nk) * d(I, K) + (nj + nk) * d(J, K) - nk * d(I, J)) / (ni + nj + nk);
            d(I, K) = d(K, I) = v;
        }
        const double h = variant == WardVariant::D2 ? std::sqrt(std::max(0.0, best)) : best;
        const std::size_t a = std::min(id[bi], id[bj]), b = std::max(id[bi], id[bj]);
        out.merges.push_back({a, b, h, size[bi] + size[bj]});
        size[bi] += size[bj];
        id[bi] = n + step;
        active[bj] = false;
    }
    return out;
}

/// Regular grid in 2 or 3 dimensions; node (i, j, l) sits at origin + spacing * (i, j, l).
struct GridSpec {
    Vector origin;
    double spacing = 0.5;
    std::vector<std::size_t> counts;

    int dim() const { return static_cast<int>(counts.size()); }

    std::size_t node_count() const {
        std::size_t n = 1;
        for (auto c : counts) n *= c;
        return n;
    }

    /// Axis indices of a flat node index (x fastest).
    std::vector<std::size_t> unflatten(std::size_t flat) const {
        std::vector<std::size_t> idx(counts.size());
        for (std::size_t a = 0; a < counts.size(); ++a) {
            idx[a] = flat % counts[a];
            flat /= counts[a];
        }
        return idx;
    }

    std::size_t flatten(const std::vector<std::size_t>& idx) const {
        std::size_t flat = 0;
        for (std::size_t a = counts.size(); a-- > 0;) flat = flat * counts[a] + idx[a];
        return flat;
    }

    Vector node(std::size_t flat) const {
        const auto idx = unflatten(flat);
        Vector x(static_cast<Eigen::Index>(counts.size()));
        for (std::size_t a = 0; a < counts.size(); ++a)
            x[static_cast<Eigen::Index>(a)] = origin[static_cast<Eigen::Index>(a)] + spacing * static_cast<double>(idx[a]);
        return x;
    }

    void validate() const {
        if (counts.size() != 2 && counts.size() != 3) throw DomainError("grid must be 2- or 3-dimensional");
        if (origin.size() != static_cast<Eigen::Index>(counts.size())) throw DomainError("grid origin dimension");
        if (!(spacing > 0.0)) throw DomainError("grid spacing must be positive");
        for (auto c : counts)
            if (c == 0) throw DomainError("grid axis without nodes");
    }

    /// Bounding box of the points padded on every side.
    static GridSpec bounding(const Points& pts, double spacing, double padding) {
        if (pts.rows() == 0) throw DomainError("bounding grid of no points");
        GridSpec g;
        g.spacing = spacing;
        const Vector lo = pts.colwise().minCoeff().transpose().array() - padding;
        const Vector hi = pts.colwise().maxCoeff().transpose().array() + padding;
        g.origin = lo;
        for (Eigen::Index a = 0; a < pts.cols(); ++a)
            g.counts.push_back(static_cast<std::size_t>(std::floor((hi[a] - lo[a]) / spacing + 1e-9)) + 1);
        g.validate();
        return g;
    }
};

struct TFieldGrid {
    GridSpec grid;
    std::vector<double> values;  // one per node, x fastest
    double offset = 0.001;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

/// Two-sample t statistics from member evaluations: rows are members, columns nodes.
inline std::vector<double> t_statistics(const Matrix& eval_a, const Matrix& eval_b, double offset) {
    const auto na = static_cast<double>(eval_a.rows()), nb = static_cast<double>(eval_b.rows());
    if (eval_a.rows() < 2 || eval_b.rows() < 2) throw DomainError("each group needs at least two members");
    if (eval_a.cols() != eval_b.cols()) throw DomainError("groups evaluated on different node sets");
    if (!(offset >= 0.0)) throw DomainError("variance offset must be nonnegative");
    const double root = std::sqrt(1.0 / na + 1.0 / nb);
    std::vector<double> t(static_cast<std::size_t>(eval_a.cols()));
    for (Eigen::Index c = 0; c < eval_a.cols(); ++c) {
        const double ma = eval_a.col(c).mean(), mb = eval_b.col(c).mean();
        const double ssa = (eval_a.col(c).array() - ma).square().sum();
        const double ssb = (eval_b.col(c).array() - mb).square().sum();
        const double pooled = (ssa + ssb) / (na + nb - 2.0) + offset;
        t[static_cast<std::size_t>(c)] = pooled > 0.0 ? (ma - mb) / (std::sqrt(pooled) * root) : 0.0;
    }
    return t;
}

/// Evaluates every member field (anything with predict(Vector)) at every node.
template <class Field>
Matrix evaluate_on_grid(const std::vector<Field>& fields, const GridSpec& grid, unsigned workers = 1) {
    grid.validate();
    const std::size_t nodes = grid.node_count();
    Matrix out(static_cast<Eigen::Index>(fields.size()), static_cast<Eigen::Index>(nodes));
    const std::size_t chunk = 4096;
    parallel_for((nodes + chunk - 1) / chunk, workers, [&](std::size_t b) {
        for (std::size_t k = b * chunk; k < std::min(nodes, (b + 1) * chunk); ++k) {
            const Vector x = grid.node(k);
            for (std::size_t f = 0; f < fields.size(); ++f)
                out(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) = fields[f].predict(x);
        }
    });
    return out;
}

/// Pointwise two-sample t-field with pooled variance plus offset d.
template <class Field>
TFieldGrid t_field(const std::vector<Field>& group_a, const std::vector<Field>& group_b, const GridSpec& grid,
                   double offset = 0.001, unsigned workers = 1) {
    if (group_a.size() < 2 || group_b.size() < 2) throw DomainError("each group needs at least two members");
    TFieldGrid out;
    out.grid = grid;
    out.offset = offset;
    out.n_a = group_a.size();
    out.n_b = group_b.size();
    out.values = t_statistics(evaluate_on_grid(group_a, grid, workers), evaluate_on_grid(group_b, grid, workers),
                              offset);
    return out;
}

struct Region {
    int sign = 1;
    std::size_t count = 0;
    std::vector<std::size_t> lower;  // bounding box in node indices
    std::vector<std::size_t> upper;
    double peak = 0.0;  // largest |t|
};

/// Face-adjacent components of same-sign nodes with |t| > threshold, largest first.
inline std::vector<Region> threshold_regions(const TFieldGrid& tf, double threshold) {
    if (!(threshold > 0.0)) throw DomainError("threshold must be positive");
    const auto& g = tf.grid;
    g.validate();
    if (tf.values.size() != g.node_count()) throw DomainError("t-field size differs from grid");
    const std::size_t n = g.node_count();
    auto sign_of = [&](std::size_t k) {
        const double v = tf.values[k];
        return v > threshold ? 1 : (v < -threshold ? -1 : 0);
    };
    std::vector<char> seen(n, 0);
    std::vector<Region> regions;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
        const int sg = sign_of(s);
        if (sg == 0 || seen[s]) continue;
        Region r;
        r.sign = sg;
        r.lower = g.unflatten(s);
        r.upper = r.lower;
        seen[s] = 1;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t k = stack.back();
            stack.pop_back();
            ++r.count;
            r.peak = std::max(r.peak, std::abs(tf.values[k]));
            auto idx = g.unflatten(k);
            for (std::size_t a = 0; a < idx.size(); ++a) {
                r.lower[a] = std::min(r.lower[a], idx[a]);
                r.upper[a] = std::max(r.upper[a], idx[a]);
            }
            for (std::size_t a = 0; a < idx.size(); ++a) {
                for (int step : {-1, 1}) {
                    if (step < 0 && idx[a] == 0) continue;
                    if (step > 0 && idx[a] + 1 >= g.counts[a]) continue;
                    auto nb = idx;
                    nb[a] = step < 0 ? idx[a] - 1 : idx[a] + 1;
                    const std::size_t f = g.flatten(nb);
                    if (!seen[f] && sign_of(f) == sg) {
                        seen[f] = 1;
                        stack.push_back(f);
                    }
                }
            }
        }
        regions.push_back(std::move(r));
    }
    std::stable_sort(regions.begin(), regions.end(),
                     [](const Region& a, const Region& b) { return a.count > b.count; });
    return regions;
}

/// Grid metadata header lines followed by one value per line (x fastest).
inline void write_tfield(std::ostream& os, const TFieldGrid& tf) {
    os << std::setprecision(17);
    os << "# dim " << tf.grid.dim() << '\n' << "# origin";
    for (Eigen::Index a = 0; a < tf.grid.origin.size(); ++a) os << ' ' << tf.grid.origin[a];
    os << '\n' << "# spacing " << tf.grid.spacing << '\n' << "# counts";
    for (auto c : tf.grid.counts) os << ' ' << c;
    os << '\n' << "# offset " << tf.offset << '\n' << "# groups " << tf.n_a << ' ' << tf.n_b << '\n';
    for (double v : tf.values) os << v << '\n';
}

}  // namespace fieldalign
