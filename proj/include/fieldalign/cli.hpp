#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fieldalign/analysis.hpp"
#include "fieldalign/covariance.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/gpa.hpp"
#include "fieldalign/io.hpp"
#include "fieldalign/kriging.hpp"
#include "fieldalign/mcmc.hpp"
#include "fieldalign/parallel.hpp"
#include "fieldalign/random.hpp"
#include "fieldalign/simulation.hpp"

namespace fieldalign::cli {

namespace fs = std::filesystem;

enum ExitCode : int { Success = 0, AlignmentFailure = 1, ConfigFailure = 2, IoFailure = 3 };

struct Context {
    RunConfig config;  // effective configuration, seed included
    fs::path out_dir = ".";
    unsigned workers = 1;
    std::ostream* log = &std::cerr;

    std::uint64_t seed() const { return static_cast<std::uint64_t>(config.integer("seed")); }
};

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"align-pair", "align-all", "gpa", "cluster", "tfield", "simulate"};
    return names;
}

inline std::string default_profile(const std::string& command) {
    if (command == "gpa" || command == "tfield") return "steroid-gpa";
    if (command == "simulate") return "sim3d";
    return "steroid-pairwise";
}

inline const std::vector<std::string>& profile_names() {
    static const std::vector<std::string> names{"steroid-pairwise", "steroid-gpa", "sim2d-setting1",
                                                "sim2d-setting2", "sim3d"};
    return names;
}

/// Named bundles of defaults. A bare invocation with a profile runs the
/// published protocol.
inline RunConfig profile(const std::string& name) {
    RunConfig c;
    auto steroid = [&] {
        c.set("channel", "both");
        c.set("kernel_q", "gaussian");
        c.set("rho_q", "6.35");
        c.set("kernel_s", "gaussian");
        c.set("rho_s", detail::format_double(1.7 / std::sqrt(3.0)));
        c.set("alpha", "31");
        c.set("beta", "0.04");
        c.set("zeta", "3");
        c.set("zeta_i", "1");
        c.set("rotation_sd_deg", "3.25");
        c.set("translation_sd", "0.25");
        c.set("weight_phase", "1500");
        c.set("n_iterations", "10000");
        c.set("init_angle_deg", "90");
        c.set("init_shift", "5");
        c.set("principal_axes", "true");
        c.set("retries", "3");
    };
    if (name == "steroid-pairwise") {
        steroid();
    } else if (name == "steroid-gpa") {
        steroid();
        c.set("zeta", "2");
        c.set("gpa_alpha", "600");
        c.set("gpa_beta", "0.0001");
        c.set("gpa_rotation_sd_deg", "0.75");
        c.set("gpa_translation_sd", "0.03");
        c.set("gpa_n_iterations", "500");
        c.set("gpa_escape_period", "0");
        c.set("gpa_tol", "0.0001");
        c.set("gpa_max_passes", "50");
        c.set("grid_spacing", "0.5");
        c.set("grid_padding", "3");
        c.set("tfield_offset", "0.001");
        c.set("threshold", "8");
    } else if (name == "sim2d-setting1" || name == "sim2d-setting2") {
        c.set("scenario", name == "sim2d-setting1" ? "setting1" : "setting2");
        c.set("design", "table1");
        c.set("n_fields", "3");
        c.set("zetas", "10,50,90");
        c.set("success_rmsd", "0.1");
        c.set("mean_clamped", "0");
    } else if (name == "sim3d") {
        c.set("scenario", "3d");
        c.set("design", "table2");
        c.set("betas", "0.04");
        c.set("zetas", "10,50,70");
        c.set("replications", "20");
        c.set("success_rmsd", "0.1");
    } else {
        throw ConfigError("unknown profile '" + name + "'");
    }
    c.set("profile", name);
    return c;
}

inline std::set<std::string> allowed_keys(const std::string& command) {
    std::set<std::string> k{"profile", "seed"};
    const std::set<std::string> pairwise{"channel",        "kernel_q",   "nu_q",         "rho_q",
                                         "kernel_s",       "nu_s",       "rho_s",        "init_angle_deg",
                                         "init_shift",     "principal_axes", "retries"};
    const std::set<std::string> grid{"grid_spacing", "grid_padding", "tfield_offset", "threshold"};
    auto add = [&](const std::set<std::string>& s, const std::string& prefix = "") {
        for (const auto& x : s) k.insert(prefix + x);
    };
    if (command == "align-pair" || command == "align-all" || command == "gpa" || command == "tfield") {
        add(pairwise);
        add(hyperparameter_keys());
    }
    if (command == "align-pair") add({"molecule_a", "molecule_b"});
    if (command == "align-all" || command == "gpa" || command == "tfield") add({"molecules", "molecule_dir"});
    if (command == "gpa" || command == "tfield") {
        add(hyperparameter_keys(), "gpa_");
        add({"gpa_tol", "gpa_max_passes"});
        add(grid);
    }
    if (command == "tfield") add({"alignment", "group_a", "group_b"});
    if (command == "cluster") add({"distances", "ward_variant"});
    if (command == "simulate")
        add({"scenario", "design", "n_fields", "zetas", "betas", "replications", "k_true", "k_cont", "kappa",
             "zeta", "n_iterations", "success_rmsd", "mean_clamped"});
    return k;
}

/// Profile defaults, then the config file, then overrides, then the seed flag.
inline RunConfig effective_config(const std::string& command, const std::string& profile_flag,
                                  const RunConfig& file, const std::vector<std::string>& overrides,
                                  const std::optional<std::uint64_t>& seed_flag) {
    RunConfig over;
    for (const auto& s : overrides) over.set(s);
    std::string name = default_profile(command);
    if (file.has("profile")) name = file.str("profile");
    if (over.has("profile")) name = over.str("profile");
    if (!profile_flag.empty()) name = profile_flag;
    RunConfig c = profile(name);
    // keys outside this command's table are dropped from the profile only
    RunConfig trimmed;
    const auto allowed = allowed_keys(command);
    for (const auto& [key, value] : c.values())
        if (allowed.count(key)) trimmed.set(key, value);
    trimmed.merge(file);
    trimmed.merge(over);
    trimmed.set("profile", name);
    if (seed_flag) trimmed.set("seed", std::to_string(*seed_flag));
    if (!trimmed.has("seed")) trimmed.set("seed", "1");
    trimmed.require_known(allowed);
    return trimmed;
}

inline CovarianceModel kernel_from(const RunConfig& c, const std::string& suffix) {
    const std::string kind = c.str("kernel_" + suffix, "gaussian");
    CovarianceModel m;
    if (kind == "gaussian") m = CovarianceModel::gaussian(c.real("rho_" + suffix));
    else if (kind == "matern") m = CovarianceModel::matern(c.real("nu_" + suffix), c.real("rho_" + suffix));
    else throw ConfigError("kernel_" + suffix + " must be gaussian or matern");
    m.validate();
    return m;
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

inline std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    return os;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    auto os = open_out(path);
    os << j.dump(2) << '\n';
}

/// Every artifact directory carries the effective configuration.
inline nlohmann::json artifact_header(const std::string& command, const Context& ctx) {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = ctx.seed();
    j["config"] = ctx.config.to_json();
    auto os = open_out(ctx.out_dir / "effective_config.txt");
    ctx.config.write(os);
    return j;
}

inline std::vector<std::string> molecule_paths(const RunConfig& c) {
    std::vector<std::string> paths = c.list("molecules");
    if (c.has("molecule_dir")) {
        const fs::path dir = c.str("molecule_dir");
        if (!fs::is_directory(dir)) throw IoError("molecule_dir '" + dir.string() + "' is not a directory");
        std::vector<std::string> found;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) found.push_back(e.path().string());
        std::sort(found.begin(), found.end());
        paths.insert(paths.end(), found.begin(), found.end());
    }
    if (paths.size() < 2) throw ConfigError("at least two molecules are required (molecules or molecule_dir)");
    return paths;
}

inline std::vector<Molecule> load_molecules(const std::vector<std::string>& paths) {
    std::vector<Molecule> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(read_molecule(p));
    return out;
}

/// A molecule placed in the frame the sampler works in.
struct Framed {
    Molecule molecule;
    RigidTransform to_frame;  // original -> working coordinates
};

inline Framed frame_molecule(const Molecule& m, bool principal) {
    Framed f{m, RigidTransform::identity(3)};
    if (!principal) return f;
    const PrincipalFrame pf = principal_frame(m.coords());
    f.to_frame = RigidTransform::from_matrix(pf.rotation, -pf.rotation * pf.center);
    const Points c = apply_transform(f.to_frame, m.coords());
    f.molecule.charge.coords = c;
    f.molecule.steric.coords = c;
    return f;
}

inline nlohmann::json frame_json(const Framed& f) { return to_json(f.to_frame); }

struct PairSetup {
    PairProblem problem;
    Hyperparameters hyper;
    InitSpec init;
};

inline PairSetup pair_setup(const RunConfig& c, const Molecule& a, const Molecule& b) {
    PairSetup s;
    s.hyper = hyperparameters_from(c);
    const std::string channel = c.str("channel", "both");
    if (channel == "charge") {
        s.problem = PairProblem::single(a.charge, b.charge, kernel_from(c, "q"));
        s.hyper.weight_schedule.enabled = false;
    } else if (channel == "steric") {
        s.problem = PairProblem::single(a.steric, b.steric, kernel_from(c, "s"));
        s.hyper.weight_schedule.enabled = false;
    } else if (channel == "both") {
        s.problem = PairProblem::two_channel(a.charge, b.charge, kernel_from(c, "q"), a.steric, b.steric,
                                             kernel_from(c, "s"));
    } else {
        throw ConfigError("channel must be charge, steric or both");
    }
    s.init.kind = InitKind::UniformBox;
    s.init.angle_half_width = deg_to_rad(c.real("init_angle_deg", 90.0));
    s.init.shift_half_width = c.real("init_shift", 5.0);
    return s;
}

/// B's working-frame transform expressed between the original coordinates.
inline RigidTransform to_original(const RigidTransform& t, const Framed& a, const Framed& b) {
    return compose(inverse(a.to_frame), compose(t, b.to_frame));
}

inline void write_projection(const fs::path& path, int vertical_axis, const std::vector<std::string>& stages,
                             const std::vector<const Molecule*>& mols, const std::vector<Points>& coords) {
    auto os = open_out(path);
    os << "stage,molecule,atom,element,x," << (vertical_axis == 1 ? "y" : "z") << '\n';
    os << std::setprecision(17);
    for (std::size_t s = 0; s < stages.size(); ++s)
        for (Eigen::Index i = 0; i < coords[s].rows(); ++i) {
            const auto& labels = mols[s]->charge.labels;
            os << stages[s] << ',' << mols[s]->id << ',' << i << ','
               << (labels.empty() ? std::string("X") : labels[static_cast<std::size_t>(i)]) << ','
               << coords[s](i, 0) << ',' << coords[s](i, vertical_axis) << '\n';
        }
}

inline int cmd_align_pair(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const Molecule ma = read_molecule(c.str("molecule_a"));
    const Molecule mb = read_molecule(c.str("molecule_b"));
    const Framed a = frame_molecule(ma, c.flag("principal_axes", true));
    const Framed b = frame_molecule(mb, c.flag("principal_axes", true));
    const PairSetup s = pair_setup(c, a.molecule, b.molecule);
    ensure_dir(ctx.out_dir);
    nlohmann::json j = artifact_header("align-pair", ctx);

    const AlignmentResult r = run_pairwise_alignment(s.problem, s.hyper, s.init, ctx.seed());
    j["molecule_a"] = a.molecule.id;
    j["molecule_b"] = b.molecule.id;
    j["frame_a"] = frame_json(a);
    j["frame_b"] = frame_json(b);
    j["result"] = to_json(r);
    j["map_transform_original"] = to_json(to_original(r.map_state.transform, a, b));
    j["mean_transform_original"] = to_json(to_original(r.mean_transform, a, b));
    write_json(ctx.out_dir / "result.json", j);
    {
        auto os = open_out(ctx.out_dir / "trace.csv");
        write_trace(os, r.trace);
    }
    const Points b_after = apply_transform(to_original(r.map_state.transform, a, b), b.molecule.coords());
    const std::vector<std::string> stages{"A", "B_before", "B_after"};
    const std::vector<const Molecule*> mols{&ma, &mb, &mb};
    const std::vector<Points> coords{ma.coords(), mb.coords(), b_after};
    write_projection(ctx.out_dir / "projection_xy.csv", 1, stages, mols, coords);
    write_projection(ctx.out_dir / "projection_xz.csv", 2, stages, mols, coords);
    *ctx.log << "align-pair " << a.molecule.id << " <- " << b.molecule.id << ": D_MAP = " << r.plug_in_distance
             << ", D_mean = " << r.mean_plug_in_distance << (r.failed ? " (failed)" : "") << '\n';
    return r.failed ? AlignmentFailure : Success;
}

inline void write_dendrogram(const fs::path& dir, const std::string& stem, const Dendrogram& d) {
    {
        auto os = open_out(dir / (stem + ".nwk"));
        os << d.newick() << '\n';
    }
    auto os = open_out(dir / (stem + "_merges.csv"));
    d.write_table(os);
}

inline int cmd_align_all(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const auto paths = molecule_paths(c);
    const auto mols = load_molecules(paths);
    const bool principal = c.flag("principal_axes", true);
    std::vector<Framed> framed;
    for (const auto& m : mols) framed.push_back(frame_molecule(m, principal));
    const long retries = c.integer("retries", 3);
    if (retries < 0) throw ConfigError("retries must be nonnegative");
    const std::size_t n = mols.size();
    std::vector<std::string> ids;
    for (const auto& m : mols) ids.push_back(m.id);
    {
        std::set<std::string> unique(ids.begin(), ids.end());
        if (unique.size() != ids.size()) throw ConfigError("molecule ids must be unique");
    }
    hyperparameters_from(c).validate();
    ensure_dir(ctx.out_dir);
    nlohmann::json j = artifact_header("align-all", ctx);

    struct Entry {
        double d_map = 0.0, d_mean = 0.0;
        int attempts = 0, restarts = 0;
        bool failed = false;
    };
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            if (a != b) jobs.emplace_back(a, b);
    std::vector<Entry> entries(jobs.size());
    const std::uint64_t seed = ctx.seed();
    parallel_for(jobs.size(), ctx.workers, [&](std::size_t k) {
        const auto [a, b] = jobs[k];
        const PairSetup s = pair_setup(c, framed[a].molecule, framed[b].molecule);
        const std::uint64_t pair_seed = derive_seed(seed, a * n + b);
        Entry e;
        for (long attempt = 0; attempt <= retries; ++attempt) {
            const auto r = run_pairwise_alignment(s.problem, s.hyper, s.init,
                                                  attempt == 0 ? pair_seed
                                                               : derive_seed(pair_seed, static_cast<std::uint64_t>(attempt)));
            e.attempts = static_cast<int>(attempt) + 1;
            e.d_map = r.plug_in_distance;
            e.d_mean = r.mean_plug_in_distance;
            e.restarts += r.n_restarts;
            e.failed = r.failed;
            if (!r.failed) break;
        }
        entries[k] = e;
    });

    Matrix dmap = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Matrix dmean = dmap;
    nlohmann::json failures = nlohmann::json::array();
    {
        auto os = open_out(ctx.out_dir / "pairs.csv");
        os << "a,b,d_map,d_mean,attempts,restarts,failed\n" << std::setprecision(17);
        for (std::size_t k = 0; k < jobs.size(); ++k) {
            const auto [a, b] = jobs[k];
            const Entry& e = entries[k];
            dmap(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = e.d_map;
            dmean(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = e.d_mean;
            os << ids[a] << ',' << ids[b] << ',' << e.d_map << ',' << e.d_mean << ',' << e.attempts << ','
               << e.restarts << ',' << (e.failed ? 1 : 0) << '\n';
            if (e.failed) failures.push_back({{"a", ids[a]}, {"b", ids[b]}, {"attempts", e.attempts}});
        }
    }
    const DistanceMatrix sym_map = DistanceMatrix::from_directed(dmap, ids, DistanceKind::MAP);
    const DistanceMatrix sym_mean = DistanceMatrix::from_directed(dmean, ids, DistanceKind::Mean);
    {
        auto os = open_out(ctx.out_dir / "distances_map.csv");
        sym_map.write(os);
    }
    {
        auto os = open_out(ctx.out_dir / "distances_mean.csv");
        sym_mean.write(os);
    }
    write_dendrogram(ctx.out_dir, "dendrogram_map", ward_cluster(sym_map));
    write_dendrogram(ctx.out_dir, "dendrogram_mean", ward_cluster(sym_mean));
    j["molecules"] = ids;
    j["failures"] = failures;
    write_json(ctx.out_dir / "result.json", j);
    *ctx.log << "align-all: " << jobs.size() << " directed alignments, " << failures.size() << " failed\n";
    return failures.empty() ? Success : AlignmentFailure;
}

inline GpaSettings gpa_settings(const RunConfig& c, const CovarianceModel& charge_model,
                                const std::vector<Framed>& framed, unsigned workers) {
    GpaSettings g;
    g.pairwise = hyperparameters_from(c);
    g.pairwise_init.kind = InitKind::UniformBox;
    g.pairwise_init.angle_half_width = deg_to_rad(c.real("init_angle_deg", 90.0));
    g.pairwise_init.shift_half_width = c.real("init_shift", 5.0);
    g.pass = hyperparameters_from(c, "gpa_");
    g.pass.weight_schedule.enabled = false;
    g.pass.weight_schedule.fixed_weight_q = 1.0;
    g.tol = c.real("gpa_tol", 1e-4);
    g.max_passes = static_cast<int>(c.integer("gpa_max_passes", 50));
    g.workers = workers;
    const std::string channel = c.str("channel", "both");
    if (channel == "both") {
        for (const auto& f : framed) g.step1_charge_sets.push_back(f.molecule.charge);
        g.step1_charge_model = charge_model;
    } else if (channel != "steric") {
        throw ConfigError("gpa supports channel = steric or both");
    } else {
        g.pairwise.weight_schedule.enabled = false;
        g.pairwise.weight_schedule.fixed_weight_q = 1.0;
    }
    return g;
}

inline void write_aligned(const fs::path& path, const std::vector<Framed>& framed,
                          const std::vector<RigidTransform>& transforms, const std::vector<Mask>& masks) {
    auto os = open_out(path);
    os << "molecule,atom,element,x,y,z,unmasked\n" << std::setprecision(17);
    for (std::size_t i = 0; i < framed.size(); ++i) {
        const Molecule& m = framed[i].molecule;
        const Points p = apply_transform(transforms[i], m.coords());
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            os << m.id << ',' << r << ','
               << (m.charge.labels.empty() ? std::string("X") : m.charge.labels[static_cast<std::size_t>(r)])
               << ',' << p(r, 0) << ',' << p(r, 1) << ',' << p(r, 2) << ','
               << static_cast<int>(masks[i][static_cast<std::size_t>(r)]) << '\n';
    }
}

inline int cmd_gpa(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const auto mols = load_molecules(molecule_paths(c));
    const bool principal = c.flag("principal_axes", true);
    std::vector<Framed> framed;
    std::vector<MarkedPointSet> steric;
    for (const auto& m : mols) {
        framed.push_back(frame_molecule(m, principal));
        steric.push_back(framed.back().molecule.steric);
    }
    const CovarianceModel model_s = kernel_from(c, "s");
    const CovarianceModel model_q = c.str("channel", "both") == "both" ? kernel_from(c, "q") : model_s;
    const GpaSettings g = gpa_settings(c, model_q, framed, ctx.workers);
    ensure_dir(ctx.out_dir);
    nlohmann::json j = artifact_header("gpa", ctx);

    const GpaResult r = run_field_gpa(steric, model_s, g, ctx.seed());
    std::vector<RigidTransform> step1_t;
    std::vector<Mask> step1_m;
    for (std::size_t i = 0; i < mols.size(); ++i) {
        step1_t.push_back(i == r.reference ? RigidTransform::identity(3) : r.step1[i].map_state.transform);
        step1_m.push_back(i == r.reference ? full_mask(steric[i].size()) : r.step1[i].map_state.mask_b);
    }
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t i = 0; i < mols.size(); ++i)
        members.push_back({{"id", mols[i].id},
                           {"frame", frame_json(framed[i])},
                           {"transform", to_json(r.state.transforms[i])},
                           {"mask", to_json(r.state.masks[i])}});
    j["reference"] = mols[r.reference].id;
    j["members"] = members;
    j["pass_values"] = r.pass_values;
    j["multi_carbo"] = r.state.multi_carbo;
    j["best_pass"] = r.state.iteration;
    j["converged"] = r.converged;
    write_json(ctx.out_dir / "gpa.json", j);
    write_aligned(ctx.out_dir / "aligned_step1.csv", framed, step1_t, step1_m);
    write_aligned(ctx.out_dir / "aligned_final.csv", framed, r.state.transforms, r.state.masks);
    *ctx.log << "gpa: " << mols.size() << " sets, " << r.pass_values.size() - 1 << " passes, C = "
             << r.state.multi_carbo << (r.converged ? "" : " (not converged)") << '\n';
    return Success;
}

inline int cmd_cluster(const Context& ctx) {
    const RunConfig& c = ctx.config;
    const std::string path = c.str("distances");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open distance matrix '" + path + "'");
    DistanceMatrix dm;
    try {
        dm = DistanceMatrix::read(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.line());
    }
    const std::string v = c.str("ward_variant", "D2");
    WardVariant variant;
    if (v == "D2") variant = WardVariant::D2;
    else if (v == "D") variant = WardVariant::D;
    else throw ConfigError("ward_variant must be D2 or D");
    ensure_dir(ctx.out_dir);
    nlohmann::json j = artifact_header("cluster", ctx);
    const Dendrogram d = ward_cluster(dm, variant);
    write_dendrogram(ctx.out_dir, "dendrogram", d);
    j["newick"] = d.newick();
    write_json(ctx.out_dir / "result.json", j);
    *ctx.log << "cluster: " << d.leaf_count() << " leaves\n";
    return Success;
}

inline int cmd_tfield(const Context& ctx) {
    RunConfig c = ctx.config;
    const std::string apath = c.str("alignment");
    std::ifstream ain(apath);
    if (!ain) throw IoError("cannot open alignment '" + apath + "'");
    nlohmann::json aj;
    try {
        aj = nlohmann::json::parse(ain);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(apath + ": " + e.what());
    }
    if (!aj.contains("members")) throw IoError(apath + ": not a gpa artifact");
    RunConfig source = c;
    if (!c.has("molecules") && !c.has("molecule_dir") && aj.contains("config")) {
        const auto& cfg = aj["config"];
        for (const char* key : {"molecules", "molecule_dir"})
            if (cfg.contains(key)) source.set(key, cfg[key].get<std::string>());
    }
    const auto mols = load_molecules(molecule_paths(source));
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < mols.size(); ++i) index[mols[i].id] = i;

    const CovarianceModel model = kernel_from(c, "s");
    std::map<std::string, PredictedField> fields;
    Points all(0, 3);
    for (const auto& m : aj["members"]) {
        const std::string id = m.at("id").get<std::string>();
        auto it = index.find(id);
        if (it == index.end()) throw ConfigError("alignment member '" + id + "' has no molecule file");
        const RigidTransform placed = compose(transform_from_json(m.at("transform")),
                                              transform_from_json(m.at("frame")));
        const Mask mask = mask_from_json(m.at("mask"));
        const MarkedPointSet& set = mols[it->second].steric;
        fields.emplace(id, build_field(set, mask, model).normalized().transformed(placed));
        const Points p = apply_transform(placed, set.coords);
        Points grown(all.rows() + p.rows(), 3);
        grown << all, p;
        all = grown;
    }
    auto group = [&](const std::string& key) {
        std::vector<PredictedField> g;
        for (const auto& id : c.list(key)) {
            auto it = fields.find(id);
            if (it == fields.end()) throw ConfigError(key + " names unknown molecule '" + id + "'");
            g.push_back(it->second);
        }
        return g;
    };
    const auto ga = group("group_a");
    const auto gb = group("group_b");
    const GridSpec grid = GridSpec::bounding(all, c.real("grid_spacing", 0.5), c.real("grid_padding", 3.0));
    ensure_dir(ctx.out_dir);
    nlohmann::json j = artifact_header("tfield", ctx);
    const TFieldGrid tf = t_field(ga, gb, grid, c.real("tfield_offset", 0.001), ctx.workers);
    {
        auto os = open_out(ctx.out_dir / "tfield.txt");
        write_tfield(os, tf);
    }
    const auto regions = threshold_regions(tf, c.real("threshold", 8.0));
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : regions)
        rj.push_back({{"sign", r.sign},
                      {"nodes", r.count},
                      {"lower", r.lower},
                      {"upper", r.upper},
                      {"peak", r.peak}});
    j["regions"] = rj;
    j["nodes"] = grid.node_count();
    write_json(ctx.out_dir / "result.json", j);
    *ctx.log << "tfield: " << grid.node_count() << " nodes, " << regions.size() << " regions\n";
    return Success;
}

inline int cmd_simulate(const Context& ctx) {
    const RunConfig& c = ctx.config;
    StudySettings s;
    const std::string scenario = c.str("scenario");
    if (scenario == "setting1") s.scenario = Scenario::Setting1;
    else if (scenario == "setting2") s.scenario = Scenario::Setting2;
    else if (scenario == "3d") s.scenario = Scenario::ThreeD;
    else throw ConfigError("scenario must be setting1, setting2 or 3d");
    const std::string design = c.str("design");
    auto zetas = c.reals("zetas");
    if (design == "table1" || design == "table1-stratified") {
        if (s.scenario == Scenario::ThreeD) throw ConfigError("table1 designs are two-dimensional");
        if (zetas.empty()) zetas = {10.0, 50.0, 90.0};
        s.runs = table1_design(static_cast<int>(c.integer("n_fields", 3)), design == "table1-stratified", zetas);
    } else if (design == "cell") {
        if (s.scenario == Scenario::ThreeD) throw ConfigError("cell design is two-dimensional");
        s.runs = cell_design(static_cast<int>(c.integer("k_true")), static_cast<int>(c.integer("k_cont")),
                             static_cast<int>(c.integer("kappa")), c.real("zeta"),
                             static_cast<int>(c.integer("replications")));
    } else if (design == "table2") {
        if (s.scenario != Scenario::ThreeD) throw ConfigError("table2 design is three-dimensional");
        auto betas = c.reals("betas");
        if (betas.empty()) betas = {0.04};
        if (zetas.empty()) zetas = {10.0, 50.0, 70.0};
        s.runs = table2_design(betas, zetas, static_cast<int>(c.integer("replications", 20)));
    } else {
        throw ConfigError("design must be table1, table1-stratified, cell or table2");
    }
    s.n_iterations = c.integer("n_iterations", 0);
    s.success_rmsd = c.real("success_rmsd", 0.1);
    s.mean_clamped = c.real("mean_clamped", 0.0);
    s.workers = ctx.workers;
    ensure_dir(ctx.out_dir);
    nlohmann::json j = artifact_header("simulate", ctx);
    const auto rows = run_success_study(s, ctx.seed());
    {
        auto os = open_out(ctx.out_dir / "runs.csv");
        write_study_runs(os, rows);
    }
    if (s.scenario == Scenario::ThreeD) {
        auto os = open_out(ctx.out_dir / "table2.csv");
        write_table2(os, summarize_table2(rows));
    } else {
        auto os = open_out(ctx.out_dir / "table1.csv");
        write_table1(os, scenario, rows);
    }
    j["runs"] = rows.size();
    j["success_percent"] = success_percent(rows, [](const StudyRun&) { return true; });
    write_json(ctx.out_dir / "result.json", j);
    *ctx.log << "simulate: " << rows.size() << " runs, success " << j["success_percent"].get<double>() << "%\n";
    return Success;
}

inline int dispatch(const std::string& command, const Context& ctx) {
    if (command == "align-pair") return cmd_align_pair(ctx);
    if (command == "align-all") return cmd_align_all(ctx);
    if (command == "gpa") return cmd_gpa(ctx);
    if (command == "cluster") return cmd_cluster(ctx);
    if (command == "tfield") return cmd_tfield(ctx);
    if (command == "simulate") return cmd_simulate(ctx);
    throw ConfigError("unknown command '" + command + "'");
}

/// Runs a command and maps library errors onto exit codes.
inline int run(const std::string& command, const Context& ctx, std::ostream& err = std::cerr) {
    try {
        return dispatch(command, ctx);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return ConfigFailure;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return IoFailure;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return IoFailure;
    } catch (const fs::filesystem_error& e) {
        err << "io error: " << e.what() << '\n';
        return IoFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return AlignmentFailure;
    }
}

}  // namespace fieldalign::cli
