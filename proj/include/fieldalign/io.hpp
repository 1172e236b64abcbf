#pragma once

#include <Eigen/Dense>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fieldalign/analysis.hpp"
#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/mcmc.hpp"

namespace fieldalign {

/// Atoms of one molecule: coordinates shared by the charge and steric channels.
struct Molecule {
    std::string id;
    MarkedPointSet charge;
    MarkedPointSet steric;

    const Points& coords() const { return charge.coords; }
    Eigen::Index size() const { return charge.size(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads "element x y z charge radius" records; '#' starts a comment.
inline Molecule parse_molecule(std::istream& is, const std::string& id = "") {
    std::vector<std::string> labels;
    std::vector<std::array<double, 5>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::vector<std::string> f;
        for (std::string tok; ss >> tok;) f.push_back(tok);
        if (f.empty()) continue;
        if (f.size() != 6)
            throw ParseError("line " + std::to_string(lineno) + ": expected 6 fields, found " + std::to_string(f.size()),
                             lineno);
        std::array<double, 5> v{};
        for (int k = 0; k < 5; ++k)
            if (!detail::parse_double(f[static_cast<std::size_t>(k) + 1], v[static_cast<std::size_t>(k)]))
                throw ParseError("line " + std::to_string(lineno) + ": field " + std::to_string(k + 2) +
                                     " is not a finite number: '" + f[static_cast<std::size_t>(k) + 1] + "'",
                                 lineno);
        labels.push_back(f[0]);
        rows.push_back(v);
    }
    if (rows.empty()) throw ParseError("molecule file contains no atoms", lineno);
    const auto k = static_cast<Eigen::Index>(rows.size());
    Points c(k, 3);
    Vector q(k), r(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& v = rows[static_cast<std::size_t>(i)];
        c.row(i) << v[0], v[1], v[2];
        q[i] = v[3];
        r[i] = v[4];
    }
    return {id, MarkedPointSet(c, q, labels), MarkedPointSet(c, r, labels)};
}

inline Molecule read_molecule(const std::string& path, std::string id = "") {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open molecule file '" + path + "'");
    if (id.empty()) {
        id = path;
        if (const auto s = id.find_last_of('/'); s != std::string::npos) id = id.substr(s + 1);
        if (const auto d = id.find_last_of('.'); d != std::string::npos && d > 0) id = id.substr(0, d);
    }
    try {
        return parse_molecule(in, id);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.line());
    }
}

/// Shortest round-trip text for every value.
inline void write_molecule(std::ostream& os, const Molecule& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const std::string label =
            m.charge.labels.empty() ? std::string("X") : m.charge.labels[static_cast<std::size_t>(i)];
        os << label;
        for (int a = 0; a < 3; ++a) os << ' ' << detail::format_double(m.coords()(i, a));
        os << ' ' << detail::format_double(m.charge.marks[i]) << ' ' << detail::format_double(m.steric.marks[i])
           << '\n';
    }
}

/// Flat key = value settings. Values stay text until read through a typed getter.
class RunConfig {
public:
    RunConfig() = default;
    explicit RunConfig(std::map<std::string, std::string> values) : values_(std::move(values)) {}

    /// Parses "key = value" lines; blank lines and '#' comments are skipped.
    static RunConfig parse(std::istream& is) {
        RunConfig c;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = detail::trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            c.values_[key] = detail::trim(line.substr(eq + 1));
        }
        return c;
    }

    /// Reads a key = value file, or the "config" object of a JSON artifact.
    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(path + ": " + e.what());
            }
            if (!j.contains("config") || !j["config"].is_object())
                throw ConfigError(path + ": JSON artifact has no config object");
            RunConfig c;
            for (auto it = j["config"].begin(); it != j["config"].end(); ++it) {
                if (!it.value().is_string()) throw ConfigError(path + ": config values must be strings");
                c.values_[it.key()] = it.value().get<std::string>();
            }
            return c;
        }
        std::istringstream is(text);
        return parse(is);
    }

    /// Applies "key=value".
    void set(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
        values_[detail::trim(assignment.substr(0, eq))] = detail::trim(assignment.substr(eq + 1));
    }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    void merge(const RunConfig& other) {
        for (const auto& [k, v] : other.values_) values_[k] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required setting '" + key + "'");
        return it->second;
    }
    std::string str(const std::string& key, const std::string& fallback) const {
        return has(key) ? str(key) : fallback;
    }

    double real(const std::string& key) const {
        double v = 0.0;
        const std::string s = str(key);
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (!detail::parse_double(s, v)) throw ConfigError("setting '" + key + "' is not a number: " + s);
        return v;
    }
    double real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

    long integer(const std::string& key) const {
        const std::string s = str(key);
        long v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError("setting '" + key + "' is not an integer: " + s);
        return v;
    }
    long integer(const std::string& key, long fallback) const { return has(key) ? integer(key) : fallback; }

    bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string s = str(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw ConfigError("setting '" + key + "' is not a boolean: " + s);
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        if (!has(key)) return out;
        std::stringstream ss(str(key));
        for (std::string item; std::getline(ss, item, ',');)
            if (auto t = detail::trim(item); !t.empty()) out.push_back(t);
        return out;
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& s : list(key)) {
            double v = 0.0;
            if (!detail::parse_double(s, v)) throw ConfigError("setting '" + key + "' has a non-number: " + s);
            out.push_back(v);
        }
        return out;
    }

    /// Throws on any key outside `allowed`.
    void require_known(const std::set<std::string>& allowed) const {
        for (const auto& [k, v] : values_)
            if (!allowed.count(k)) throw ConfigError("unknown setting '" + k + "'");
    }

    void write(std::ostream& os) const {
        for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : values_) j[k] = v;
        return j;
    }

private:
    std::map<std::string, std::string> values_;
};

/// Keys that map onto Hyperparameters.
inline const std::set<std::string>& hyperparameter_keys() {
    static const std::set<std::string> keys{
        "alpha",          "beta",           "zeta",          "zeta_i",          "neighbor_delta",
        "rotation_sd_deg", "translation_sd", "escape_period", "escape_scale",    "restart_threshold",
        "restart_check_iter", "max_restarts", "n_iterations", "burn_in",         "thin",
        "likelihood",     "range_start",    "range_end",     "range_length",    "weight_phase",
        "weight_q",       "anneal_start",   "anneal_end",    "anneal_length",   "mask_flips"};
    return keys;
}

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Hyperparameters from settings with an optional key prefix (e.g. "gpa_").
inline Hyperparameters hyperparameters_from(const RunConfig& c, const std::string& prefix = "") {
    auto k = [&](const char* name) { return prefix + name; };
    Hyperparameters h;
    h.alpha = c.real(k("alpha"), h.alpha);
    h.beta = c.real(k("beta"), h.beta);
    h.zeta = c.real(k("zeta"), h.zeta);
    h.zeta_i = c.real(k("zeta_i"), h.zeta_i);
    h.neighbor_delta = c.real(k("neighbor_delta"), h.neighbor_delta);
    h.proposal_sd_rotation = deg_to_rad(c.real(k("rotation_sd_deg"), rad_to_deg(h.proposal_sd_rotation)));
    h.proposal_sd_translation = c.real(k("translation_sd"), h.proposal_sd_translation);
    h.escape_period = c.integer(k("escape_period"), h.escape_period);
    h.escape_scale = c.real(k("escape_scale"), h.escape_scale);
    h.restart_threshold = c.real(k("restart_threshold"), h.restart_threshold);
    h.restart_check_iter = c.integer(k("restart_check_iter"), h.restart_check_iter);
    h.max_restarts = static_cast<int>(c.integer(k("max_restarts"), h.max_restarts));
    h.n_iterations = c.integer(k("n_iterations"), h.n_iterations);
    h.burn_in = c.integer(k("burn_in"), h.burn_in);
    h.thin = c.integer(k("thin"), h.thin);
    h.mask_flips = static_cast<int>(c.integer(k("mask_flips"), h.mask_flips));
    const std::string lk = c.str(k("likelihood"), "exponential");
    if (lk == "exponential") h.likelihood_kind = LikelihoodKind::Exponential;
    else if (lk == "halfnormal") h.likelihood_kind = LikelihoodKind::HalfNormal;
    else throw ConfigError("likelihood must be exponential or halfnormal");
    const long rl = c.integer(k("range_length"), 0);
    if (rl > 0) h.range_schedule = {true, c.real(k("range_start")), c.real(k("range_end")), rl};
    const long wp = c.integer(k("weight_phase"), 0);
    h.weight_schedule.enabled = wp > 0;
    h.weight_schedule.initial_phase = wp > 0 ? wp : h.weight_schedule.initial_phase;
    h.weight_schedule.fixed_weight_q = c.real(k("weight_q"), h.weight_schedule.fixed_weight_q);
    const long al = c.integer(k("anneal_length"), 0);
    if (al > 0) h.annealing_schedule = {true, c.real(k("anneal_start")), c.real(k("anneal_end"), 1.0), al};
    h.validate();
    return h;
}

inline nlohmann::json to_json(const Vector& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

inline nlohmann::json to_json(const Mask& m) {
    nlohmann::json j = nlohmann::json::array();
    for (auto v : m) j.push_back(static_cast<int>(v));
    return j;
}

inline nlohmann::json to_json(const Matrix& m) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) j.push_back(to_json(Vector(m.row(i).transpose())));
    return j;
}

inline nlohmann::json to_json(const RigidTransform& t) {
    nlohmann::json j;
    Vector deg = t.euler;
    for (Eigen::Index i = 0; i < deg.size(); ++i) deg[i] = rad_to_deg(deg[i]);
    j["euler_deg"] = to_json(deg);
    j["translation"] = to_json(t.translation);
    j["rotation"] = to_json(t.rotation());
    return j;
}

inline RigidTransform transform_from_json(const nlohmann::json& j) {
    RigidTransform t;
    const auto e = j.at("euler_deg").get<std::vector<double>>();
    const auto s = j.at("translation").get<std::vector<double>>();
    t.euler = Vector(static_cast<Eigen::Index>(e.size()));
    t.translation = Vector(static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < e.size(); ++i) t.euler[static_cast<Eigen::Index>(i)] = deg_to_rad(e[i]);
    for (std::size_t i = 0; i < s.size(); ++i) t.translation[static_cast<Eigen::Index>(i)] = s[i];
    if (j.contains("rotation")) {
        const auto rows = j.at("rotation").get<std::vector<std::vector<double>>>();
        Matrix r(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t a = 0; a < rows.size(); ++a)
            for (std::size_t b = 0; b < rows[a].size(); ++b)
                r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = rows[a][b];
        t = RigidTransform::from_matrix(r, t.translation);
    }
    check_transform_shape(t);
    return t;
}

inline Mask mask_from_json(const nlohmann::json& j) {
    Mask m;
    for (const auto& v : j) m.push_back(v.get<int>() ? 1 : 0);
    return m;
}

inline nlohmann::json to_json(const ChainState& s) {
    nlohmann::json j;
    j["iteration"] = s.iteration;
    j["transform"] = to_json(s.transform);
    j["mask_a"] = to_json(s.mask_a);
    j["mask_b"] = to_json(s.mask_b);
    j["tau"] = s.tau;
    j["similarity"] = s.similarity;
    j["dissimilarity"] = s.dissimilarity;
    j["log_posterior"] = s.log_posterior;
    nlohmann::json ch = nlohmann::json::array();
    for (const auto& c : s.channel_scores) ch.push_back({{"similarity", c.similarity}, {"dissimilarity", c.dissimilarity}});
    j["channels"] = ch;
    return j;
}

/// Result summary; the trace is written separately.
inline nlohmann::json to_json(const AlignmentResult& r) {
    nlohmann::json j;
    j["map_state"] = to_json(r.map_state);
    j["final_state"] = to_json(r.final_state);
    j["plug_in_distance"] = r.plug_in_distance;
    j["mean_plug_in_distance"] = r.mean_plug_in_distance;
    j["mean_transform"] = to_json(r.mean_transform);
    j["inclusion_a"] = r.inclusion_a;
    j["inclusion_b"] = r.inclusion_b;
    j["acceptance"] = {{"rotation", r.acceptance.rotation},
                       {"translation", r.acceptance.translation},
                       {"mask_a", r.acceptance.mask_a},
                       {"mask_b", r.acceptance.mask_b}};
    j["n_restarts"] = r.n_restarts;
    j["failed"] = r.failed;
    return j;
}

/// Thinned trace: iter, theta..., gamma..., tau, similarity, dissimilarity, counts, log posterior.
inline void write_trace(std::ostream& os, const std::vector<TraceRow>& rows) {
    if (rows.empty()) return;
    const auto ne = rows.front().euler.size(), nt = rows.front().translation.size();
    os << "iter";
    for (Eigen::Index i = 0; i < ne; ++i) os << ",theta" << i + 1;
    for (Eigen::Index i = 0; i < nt; ++i) os << ",gamma" << i + 1;
    os << ",tau,carbo_similarity,carbo_dissimilarity,n_unmasked_a,n_unmasked_b,log_posterior\n";
    os << std::setprecision(17);
    for (const auto& r : rows) {
        os << r.iteration;
        for (Eigen::Index i = 0; i < ne; ++i) os << ',' << r.euler[i];
        for (Eigen::Index i = 0; i < nt; ++i) os << ',' << r.translation[i];
        os << ',' << r.tau << ',' << r.similarity << ',' << r.dissimilarity << ',' << r.unmasked_a << ','
           << r.unmasked_b << ',' << r.log_posterior << '\n';
    }
}

}  // namespace fieldalign
