#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fieldalign/covariance.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/kriging.hpp"
#include "fieldalign/mcmc.hpp"
#include "fieldalign/parallel.hpp"
#include "fieldalign/random.hpp"

namespace fieldalign {

/// Zero-mean Gaussian random field draw z = L eps with L L' = Sigma.
inline Vector sample_grf(const CovarianceModel& model, const Points& coords, Rng& rng) {
    if (coords.rows() < 1) throw DomainError("field sample needs at least one point");
    const GramFactor f = factor_gram(model, coords);
    Vector eps(coords.rows());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = standard_normal(rng);
    return f.llt.matrixL() * eps;
}

/// 25-atom steroid-like block (three fused six-rings, one five-ring, eight
/// substituents), centered, in Angstrom. Stands in for a reference molecule.
inline Points synthetic_steroid_block() {
    static const double xyz[25][3] = {
        {-1.983, -0.514, 0.125}, {-3.317, 0.256, -0.375}, {-4.651, -0.514, 0.125}, {-4.651, -2.054, -0.375},
        {-3.317, -2.824, 0.125}, {-1.983, -2.054, -0.375}, {0.684, -0.514, 0.125},  {-0.650, 0.256, -0.375},
        {-0.650, -2.824, 0.125}, {0.684, -2.054, -0.375},  {2.018, 1.796, 0.125},   {0.684, 2.566, -0.375},
        {-0.650, 1.796, 0.125},  {2.018, 0.256, -0.375},   {3.482, -0.219, 0.125},  {4.387, 1.026, -0.375},
        {3.482, 2.272, 0.125},   {-4.651, -2.054, 1.165},  {-0.650, -2.824, 1.665}, {-6.081, -0.514, 0.225},
        {5.817, 1.226, -0.475},  {4.887, 2.326, 0.025},    {6.087, 3.026, -0.275},  {0.684, 4.066, -0.075},
        {-5.450, 0.750, -0.300}};
    Points p(25, 3);
    for (int i = 0; i < 25; ++i)
        for (int a = 0; a < 3; ++a) p(i, a) = xyz[i][a];
    return p;
}

struct Sim2DConfig {
    int grid_side = 31;
    CovarianceModel gen_model = CovarianceModel::matern(1.0, 0.2);
    int k_true = 80;
    int k_cont = 4;
    int kappa = 1;
    double contamination_bound = 7.0;
    double noise_sd = std::sqrt(0.02);
    /// Mean number of true points per set whose mask entry is clamped to 1.
    double mean_clamped = 0.0;

    void validate() const {
        if (grid_side < 2) throw ConfigError("grid_side must be at least 2");
        if (k_true < 1 || k_cont < 0) throw ConfigError("point counts must be positive");
        if (k_true + k_cont > grid_side * grid_side) throw ConfigError("more points than grid nodes");
        if (kappa < 0) throw ConfigError("kappa must be nonnegative");
        if (!(contamination_bound >= 0.0) || !(noise_sd >= 0.0)) throw ConfigError("noise settings must be nonnegative");
        if (!(mean_clamped >= 0.0) || mean_clamped > k_true) throw ConfigError("mean_clamped out of range");
        gen_model.validate();
    }
};

/// Nodes of the regular grid on the unit square, x fastest.
inline Points unit_square_grid(int side) {
    Points g(side * side, 2);
    for (int j = 0; j < side; ++j)
        for (int i = 0; i < side; ++i) {
            g(j * side + i, 0) = static_cast<double>(i) / (side - 1);
            g(j * side + i, 1) = static_cast<double>(j) / (side - 1);
        }
    return g;
}

struct SimPair {
    MarkedPointSet a;
    MarkedPointSet b;
    Mask true_mask_a;
    Mask true_mask_b;
    /// Position of B relative to A in which the pair was generated.
    Points truth_b;
    /// Rows of B scored by RMSD.
    Eigen::Index scored_rows = 0;
    std::vector<Eigen::Index> clamped_a;
    std::vector<Eigen::Index> clamped_b;
};

namespace detail {

inline std::vector<int> sample_without_replacement(std::vector<int> pool, int k, Rng& rng) {
    if (static_cast<int>(pool.size()) < k) throw DomainError("not enough candidates to sample from");
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

inline std::vector<Eigen::Index> clamp_subset(int k_true, double mean, Rng& rng) {
    std::vector<Eigen::Index> out;
    if (mean <= 0.0) return out;
    std::binomial_distribution<int> count(k_true, mean / k_true);
    std::vector<int> idx(static_cast<std::size_t>(k_true));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i : sample_without_replacement(idx, count(rng), rng)) out.push_back(i);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// One 2D pair from a field realization on the grid. True points come first,
/// contamination last; A's true points are drawn from the kappa-boxes around
/// B's true points (clipped at the grid edge).
inline SimPair generate_pair_2d(const Sim2DConfig& cfg, const Vector& grid_field, Rng& rng) {
    cfg.validate();
    const int side = cfg.grid_side;
    const int nodes = side * side;
    if (grid_field.size() != nodes) throw DomainError("field realization does not match the grid");
    const Points grid = unit_square_grid(side);
    std::normal_distribution<double> noise(0.0, cfg.noise_sd);
    std::uniform_real_distribution<double> cont(-cfg.contamination_bound, cfg.contamination_bound);

    std::vector<int> all(static_cast<std::size_t>(nodes));
    std::iota(all.begin(), all.end(), 0);

    auto build = [&](const std::vector<int>& true_nodes) {
        std::set<int> used(true_nodes.begin(), true_nodes.end());
        std::vector<int> free;
        for (int v : all)
            if (!used.count(v)) free.push_back(v);
        const auto cont_nodes = detail::sample_without_replacement(free, cfg.k_cont, rng);
        const int k = cfg.k_true + cfg.k_cont;
        Points c(k, 2);
        Vector z(k);
        for (int i = 0; i < cfg.k_true; ++i) {
            c.row(i) = grid.row(true_nodes[static_cast<std::size_t>(i)]);
            z[i] = grid_field[true_nodes[static_cast<std::size_t>(i)]] + noise(rng);
        }
        for (int i = 0; i < cfg.k_cont; ++i) {
            c.row(cfg.k_true + i) = grid.row(cont_nodes[static_cast<std::size_t>(i)]);
            z[cfg.k_true + i] = cont(rng);
        }
        return MarkedPointSet(c, z);
    };

    const auto b_true = detail::sample_without_replacement(all, cfg.k_true, rng);
    std::set<int> box;
    for (int v : b_true) {
        const int x = v % side, y = v / side;
        for (int dy = -cfg.kappa; dy <= cfg.kappa; ++dy)
            for (int dx = -cfg.kappa; dx <= cfg.kappa; ++dx) {
                const int xx = x + dx, yy = y + dy;
                if (xx >= 0 && xx < side && yy >= 0 && yy < side) box.insert(yy * side + xx);
            }
    }
    if (static_cast<int>(box.size()) < cfg.k_true) throw DomainError("neighborhood union smaller than k_true");
    const auto a_true = detail::sample_without_replacement(std::vector<int>(box.begin(), box.end()), cfg.k_true, rng);

    SimPair p;
    p.b = build(b_true);
    p.a = build(a_true);
    const auto k = static_cast<std::size_t>(cfg.k_true + cfg.k_cont);
    p.true_mask_a = Mask(k, 0);
    p.true_mask_b = Mask(k, 0);
    for (int i = 0; i < cfg.k_true; ++i) p.true_mask_a[static_cast<std::size_t>(i)] = p.true_mask_b[static_cast<std::size_t>(i)] = 1;
    p.truth_b = p.b.coords;
    p.scored_rows = p.b.size();
    p.clamped_a = detail::clamp_subset(cfg.k_true, cfg.mean_clamped, rng);
    p.clamped_b = detail::clamp_subset(cfg.k_true, cfg.mean_clamped, rng);
    return p;
}

inline SimPair generate_pair_2d(const Sim2DConfig& cfg, Rng& rng) {
    const Vector field = sample_grf(cfg.gen_model, unit_square_grid(cfg.grid_side), rng);
    return generate_pair_2d(cfg, field, rng);
}

struct Sim3DConfig {
    int n_points = 25;
    int n_contaminated = 5;
    int scored_points = 20;
    double perturbation_sd = 0.01;
    double contamination_sd = 3.0;
    CovarianceModel gen_model = CovarianceModel::matern(0.5, 5.0);

    void validate() const {
        if (n_points < 1 || n_contaminated < 0 || n_contaminated > n_points) throw ConfigError("bad 3D point counts");
        if (scored_points < 1 || scored_points > n_points) throw ConfigError("bad scored point count");
        if (!(perturbation_sd >= 0.0) || !(contamination_sd >= 0.0)) throw ConfigError("sd must be nonnegative");
        gen_model.validate();
    }
};

/// 3D pair: B is a perturbed copy of the reference block, one field draw at
/// the union of both point sets, the trailing points of each set
/// contaminated, both sets centered and independently Haar-rotated.
/// truth_b holds B in A's frame at the generating relative position.
inline SimPair generate_pair_3d(const Sim3DConfig& cfg, const Points& reference, Rng& rng) {
    cfg.validate();
    if (reference.cols() != 3) throw DomainError("reference molecule must be three-dimensional");
    if (reference.rows() < cfg.n_points) throw DomainError("reference molecule has too few atoms");
    const int k = cfg.n_points;
    Points a0 = reference.topRows(k);
    Points b0 = a0;
    std::normal_distribution<double> pert(0.0, cfg.perturbation_sd);
    for (Eigen::Index i = 0; i < b0.size(); ++i) b0.data()[i] += pert(rng);

    Points both(2 * k, 3);
    both << a0, b0;
    const Vector z = sample_grf(cfg.gen_model, both, rng);
    Vector za = z.head(k), zb = z.tail(k);

    std::normal_distribution<double> big(0.0, cfg.contamination_sd);
    for (int i = k - cfg.n_contaminated; i < k; ++i) {
        for (int a = 0; a < 3; ++a) a0(i, a) += big(rng);
        za[i] += big(rng);
    }
    for (int i = k - cfg.n_contaminated; i < k; ++i) {
        for (int a = 0; a < 3; ++a) b0(i, a) += big(rng);
        zb[i] += big(rng);
    }
    const Eigen::RowVectorXd ca = a0.colwise().mean(), cb = b0.colwise().mean();
    const Matrix qa = random_rotation(3, rng), qb = random_rotation(3, rng);

    SimPair p;
    p.a = MarkedPointSet((a0.rowwise() - ca) * qa.transpose(), za);
    p.b = MarkedPointSet((b0.rowwise() - cb) * qb.transpose(), zb);
    p.truth_b = (b0.rowwise() - ca) * qa.transpose();
    p.scored_rows = cfg.scored_points;
    p.true_mask_a = Mask(static_cast<std::size_t>(k), 1);
    p.true_mask_b = Mask(static_cast<std::size_t>(k), 1);
    for (int i = k - cfg.n_contaminated; i < k; ++i)
        p.true_mask_a[static_cast<std::size_t>(i)] = p.true_mask_b[static_cast<std::size_t>(i)] = 0;
    return p;
}

/// RMSD between B's scored rows moved by t and their generating position.
inline double pair_rmsd(const SimPair& p, const RigidTransform& t) {
    const Points moved = apply_transform(t, p.b.coords);
    return rmsd(moved.topRows(p.scored_rows), p.truth_b.topRows(p.scored_rows));
}

/// Hyperparameters of the 2D protocol.
inline Hyperparameters sim2d_hyperparameters(double zeta = 50.0) {
    Hyperparameters h;
    h.alpha = 200.0;
    h.beta = 0.05;
    h.zeta = zeta;
    h.zeta_i = 1.0;
    h.proposal_sd_rotation = 0.75 * std::numbers::pi / 180.0;
    h.proposal_sd_translation = 0.01;
    h.escape_period = 125;
    h.escape_scale = 10.0;
    h.restart_threshold = 0.3;
    h.restart_check_iter = 7500;
    h.max_restarts = 10;
    h.n_iterations = 50000;
    h.range_schedule = {true, 0.6, 0.2, 1000};
    return h;
}

/// Hyperparameters of the 3D protocol.
inline Hyperparameters sim3d_hyperparameters(double beta = 0.04, double zeta = 70.0) {
    Hyperparameters h;
    h.alpha = 31.0;
    h.beta = beta;
    h.zeta = zeta;
    h.zeta_i = 1.0;
    h.proposal_sd_rotation = 3.25 * std::numbers::pi / 180.0;
    h.proposal_sd_translation = 0.25;
    h.escape_period = 125;
    h.escape_scale = 10.0;
    h.restart_threshold = 0.1;
    h.restart_check_iter = 1000;
    h.max_restarts = 30;
    h.n_iterations = 2000;
    h.range_schedule = {true, 20.0, 5.0, 500};
    return h;
}

inline InitSpec sim2d_init(int setting) {
    InitSpec init;
    init.kind = InitKind::UniformBox;
    const double deg = setting == 2 ? 60.0 : 20.0;
    init.angle_half_width = deg * std::numbers::pi / 180.0;
    init.shift_half_width = setting == 2 ? 0.3 : 0.1;
    return init;
}

/// First attempt from the generated relative position, restarts from a Haar rotation.
inline InitSpec sim3d_init() {
    InitSpec init;
    init.kind = InitKind::UniformRotation;
    init.shift_half_width = 0.0;
    init.first_transform = RigidTransform::identity(3);
    return init;
}

enum class Scenario { Setting1, Setting2, ThreeD };

/// One cell of a study run list.
struct StudyRun {
    int field = 0;  // field realization (2D) or replicate (3D)
    int k_true = 0;
    int k_cont = 0;
    int kappa = 0;
    double zeta = 0.0;
    double beta = 0.0;
    int replicate = 0;
};

struct StudyOutcome {
    StudyRun run;
    double rmsd = 0.0;
    bool success = false;
    int restarts = 0;
    bool failed = false;
    long unmasked_a = 0;  // final state
    long unmasked_b = 0;
    double map_distance = 0.0;
    double final_distance = 0.0;
};

struct StudySettings {
    Scenario scenario = Scenario::Setting1;
    std::vector<StudyRun> runs;
    /// Overrides applied to the protocol hyperparameters (zeta/beta come from the run).
    long n_iterations = 0;  // 0 keeps the protocol value
    double success_rmsd = 0.1;
    double mean_clamped = 0.0;
    Points reference;  // 3D only; synthetic block when empty
    unsigned workers = 1;
};

/// The 108-run design of one 2D setting: 3 fields x 12 pairs x 3 zetas.
/// `stratified` keeps one zeta per pair (36 runs, each zeta equally often).
inline std::vector<StudyRun> table1_design(int n_fields = 3, bool stratified = false,
                                           std::vector<double> zetas = {10.0, 50.0, 90.0}) {
    std::vector<StudyRun> runs;
    int pair = 0;
    for (int f = 0; f < n_fields; ++f)
        for (int kt : {40, 80})
            for (double frac : {0.05, 0.10, 0.15})
                for (int kappa : {1, 4}) {
                    const int kc = static_cast<int>(std::lround(frac * kt));
                    for (std::size_t z = 0; z < zetas.size(); ++z) {
                        if (stratified && static_cast<int>(z) != pair % static_cast<int>(zetas.size())) continue;
                        runs.push_back({f, kt, kc, kappa, zetas[z], 0.0, 0});
                    }
                    ++pair;
                }
    return runs;
}

/// Replications of a single 2D cell, each on its own field realization.
inline std::vector<StudyRun> cell_design(int k_true, int k_cont, int kappa, double zeta, int replications) {
    std::vector<StudyRun> runs;
    for (int r = 0; r < replications; ++r) runs.push_back({r, k_true, k_cont, kappa, zeta, 0.0, r});
    return runs;
}

/// (beta, zeta) grid with `replications` Monte Carlo runs per cell.
inline std::vector<StudyRun> table2_design(const std::vector<double>& betas, const std::vector<double>& zetas,
                                           int replications) {
    std::vector<StudyRun> runs;
    for (double b : betas)
        for (double z : zetas)
            for (int r = 0; r < replications; ++r) runs.push_back({r, 25, 5, 0, z, b, r});
    return runs;
}

/// Runs every chain of a study. Data and chain seeds are derived from the
/// master seed: 2D pairs depend on (field, k_true, k_cont, kappa) so runs that
/// differ only in zeta share their data.
inline std::vector<StudyOutcome> run_success_study(const StudySettings& s, std::uint64_t seed) {
    if (s.runs.empty()) throw ConfigError("study has no runs");
    std::vector<StudyOutcome> out(s.runs.size());
    const Points reference = s.reference.rows() > 0 ? s.reference : synthetic_steroid_block();
    parallel_for(s.runs.size(), s.workers, [&](std::size_t i) {
        const StudyRun& run = s.runs[i];
        StudyOutcome o;
        o.run = run;
        SimPair pair;
        Hyperparameters h;
        InitSpec init;
        PairProblem problem;
        if (s.scenario == Scenario::ThreeD) {
            Rng data = make_rng(derive_seed(seed, 7), static_cast<std::uint64_t>(run.replicate));
            pair = generate_pair_3d(Sim3DConfig{}, reference, data);
            h = sim3d_hyperparameters(run.beta, run.zeta);
            init = sim3d_init();
            problem = PairProblem::single(pair.a, pair.b, CovarianceModel::matern(0.5, 5.0));
        } else {
            Sim2DConfig cfg;
            cfg.k_true = run.k_true;
            cfg.k_cont = run.k_cont;
            cfg.kappa = run.kappa;
            cfg.mean_clamped = s.mean_clamped;
            Rng field_rng = make_rng(derive_seed(seed, 11), static_cast<std::uint64_t>(run.field));
            const Vector field = sample_grf(cfg.gen_model, unit_square_grid(cfg.grid_side), field_rng);
            const std::uint64_t key = static_cast<std::uint64_t>(run.field) * 1000003ull +
                                      static_cast<std::uint64_t>(run.k_true) * 1009ull +
                                      static_cast<std::uint64_t>(run.k_cont) * 31ull +
                                      static_cast<std::uint64_t>(run.kappa);
            Rng data = make_rng(derive_seed(seed, 13), key);
            pair = generate_pair_2d(cfg, field, data);
            h = sim2d_hyperparameters(run.zeta);
            init = sim2d_init(s.scenario == Scenario::Setting2 ? 2 : 1);
            problem = PairProblem::single(pair.a, pair.b, CovarianceModel::matern(0.5, 0.2));
            problem.clamped_a = pair.clamped_a;
            problem.clamped_b = pair.clamped_b;
        }
        if (s.n_iterations > 0) {
            h.n_iterations = s.n_iterations;
            if (h.restart_check_iter >= h.n_iterations) h.restart_check_iter = 0;
        }
        const AlignmentResult r = run_pairwise_alignment(problem, h, init, derive_seed(seed, 1000 + i));
        o.rmsd = pair_rmsd(pair, r.map_state.transform);
        o.success = o.rmsd <= s.success_rmsd;
        o.restarts = r.n_restarts;
        o.failed = r.failed;
        o.unmasked_a = static_cast<long>(mask_count(r.final_state.mask_a));
        o.unmasked_b = static_cast<long>(mask_count(r.final_state.mask_b));
        o.map_distance = r.plug_in_distance;
        o.final_distance = r.final_state.dissimilarity;
        out[i] = o;
    });
    return out;
}

/// Success percentage over the outcomes accepted by `keep`; -1 when none are.
template <class Pred>
double success_percent(const std::vector<StudyOutcome>& rows, Pred keep) {
    int n = 0, ok = 0;
    for (const auto& r : rows)
        if (keep(r.run)) {
            ++n;
            ok += r.success ? 1 : 0;
        }
    return n == 0 ? -1.0 : 100.0 * ok / n;
}

/// Table 1 layout: All, zeta = 10/50/90, (80, 4), (40, 6), kappa = 1, kappa = 4.
inline void write_table1(std::ostream& os, const std::string& label, const std::vector<StudyOutcome>& rows) {
    auto cell = [&](auto pred) {
        const double v = success_percent(rows, pred);
        return v < 0 ? std::string("NA") : std::to_string(static_cast<int>(std::lround(v)));
    };
    os << "setting,all,zeta10,zeta50,zeta90,ktrue80_kcont4,ktrue40_kcont6,kappa1,kappa4\n";
    os << label << ',' << cell([](const StudyRun&) { return true; }) << ','
       << cell([](const StudyRun& r) { return r.zeta == 10.0; }) << ','
       << cell([](const StudyRun& r) { return r.zeta == 50.0; }) << ','
       << cell([](const StudyRun& r) { return r.zeta == 90.0; }) << ','
       << cell([](const StudyRun& r) { return r.k_true == 80 && r.k_cont == 4; }) << ','
       << cell([](const StudyRun& r) { return r.k_true == 40 && r.k_cont == 6; }) << ','
       << cell([](const StudyRun& r) { return r.kappa == 1; }) << ','
       << cell([](const StudyRun& r) { return r.kappa == 4; }) << '\n';
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
    if (v.empty()) return {};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

struct Table2Row {
    double beta = 0.0;
    double zeta = 0.0;
    MeanSd unmasked_a, unmasked_b, rmsd, starts, carbo;
    int failures = 0;
    int runs = 0;
};

inline std::vector<Table2Row> summarize_table2(const std::vector<StudyOutcome>& rows) {
    std::vector<Table2Row> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const Table2Row& t) { return t.beta == r.run.beta && t.zeta == r.run.zeta; });
        if (it == out.end()) {
            out.push_back({});
            it = out.end() - 1;
            it->beta = r.run.beta;
            it->zeta = r.run.zeta;
        }
    }
    for (auto& t : out) {
        std::vector<double> a, b, rm, st, cb;
        for (const auto& r : rows) {
            if (r.run.beta != t.beta || r.run.zeta != t.zeta) continue;
            ++t.runs;
            t.failures += r.failed ? 1 : 0;
            a.push_back(static_cast<double>(r.unmasked_a));
            b.push_back(static_cast<double>(r.unmasked_b));
            rm.push_back(r.rmsd);
            st.push_back(r.restarts);
            cb.push_back(r.final_distance);
        }
        t.unmasked_a = mean_sd(a);
        t.unmasked_b = mean_sd(b);
        t.rmsd = mean_sd(rm);
        t.starts = mean_sd(st);
        t.carbo = mean_sd(cb);
    }
    return out;
}

inline void write_table2(std::ostream& os, const std::vector<Table2Row>& rows) {
    os << "beta,zeta,unmasked_a_mean,unmasked_a_sd,unmasked_b_mean,unmasked_b_sd,rmsd_mean,rmsd_sd,"
          "starts_mean,starts_sd,carbo_mean,carbo_sd,failures,runs\n";
    os.precision(6);
    for (const auto& t : rows)
        os << t.beta << ',' << t.zeta << ',' << t.unmasked_a.mean << ',' << t.unmasked_a.sd << ','
           << t.unmasked_b.mean << ',' << t.unmasked_b.sd << ',' << t.rmsd.mean << ',' << t.rmsd.sd << ','
           << t.starts.mean << ',' << t.starts.sd << ',' << t.carbo.mean << ',' << t.carbo.sd << ',' << t.failures
           << ',' << t.runs << '\n';
}

/// Per-run rows of a study.
inline void write_study_runs(std::ostream& os, const std::vector<StudyOutcome>& rows) {
    os << "field,k_true,k_cont,kappa,zeta,beta,replicate,rmsd,success,restarts,failed,unmasked_a,unmasked_b,"
          "map_distance,final_distance\n";
    os.precision(17);
    for (const auto& r : rows)
        os << r.run.field << ',' << r.run.k_true << ',' << r.run.k_cont << ',' << r.run.kappa << ',' << r.run.zeta
           << ',' << r.run.beta << ',' << r.run.replicate << ',' << r.rmsd << ',' << (r.success ? 1 : 0) << ','
           << r.restarts << ',' << (r.failed ? 1 : 0) << ',' << r.unmasked_a << ',' << r.unmasked_b << ','
           << r.map_distance << ',' << r.final_distance << '\n';
}

}  // namespace fieldalign
