#pragma once

// Experiment configuration: flat key = value text, '#' starts a comment.
// Command-line flags are applied afterwards through the same setter, so a
// flag always overrides the file.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "firalkit/harness/io.hpp"
#include "firalkit/harness/synthetic.hpp"
#include "firalkit/relax.hpp"
#include "firalkit/round.hpp"

namespace firalkit::harness {

inline const std::vector<std::string>& solver_names() {
    static const std::vector<std::string> names{"exact", "approx", "random", "kmeans", "entropy"};
    return names;
}

struct ExperimentConfig {
    // data
    std::string data_path;  // empty: synthetic
    std::string label_column = "label";
    SyntheticSpec synthetic;
    double eval_fraction = 0.5;
    Index initial_per_class = 1;

    // protocol
    int rounds = 3;
    Index budget = 10;
    std::vector<std::string> solvers{"approx"};
    std::uint64_t seed = 0;

    // classifier
    double l2 = 1.0;
    int fit_max_iter = 5000;

    // solvers
    RelaxConfig relax;
    std::vector<double> eta_grid;  // empty: default grid
    bool allow_repeats = false;

    // output
    std::string out;
    std::string plot_out;  // empty: derived from out
    int threads = 0;       // 0: FIRALKIT_THREADS or the runtime default

    void validate() const {
        if (rounds < 1) throw ConfigError("config field 'rounds': must be >= 1");
        if (budget < 1) throw ConfigError("config field 'budget': must be >= 1");
        if (solvers.empty()) throw ConfigError("config field 'solver': no solver given");
        for (const std::string& s : solvers) {
            bool ok = false;
            for (const std::string& n : solver_names()) ok |= s == n;
            if (!ok)
                throw ConfigError("config field 'solver': unknown solver '" + s +
                                  "' (expected exact, approx, random, kmeans or entropy)");
        }
        if (!(eval_fraction >= 0.0 && eval_fraction < 1.0))
            throw ConfigError("config field 'eval_fraction': must lie in [0, 1)");
        if (initial_per_class < 1) throw ConfigError("config field 'initial_per_class': must be >= 1");
        if (!(l2 >= 0.0)) throw ConfigError("config field 'l2': must be >= 0");
        if (fit_max_iter < 1) throw ConfigError("config field 'fit_max_iter': must be >= 1");
        for (double e : eta_grid)
            if (!(e > 0.0)) throw ConfigError("config field 'eta_grid': entries must be positive");
        if (threads < 0) throw ConfigError("config field 'threads': must be >= 0");
        relax.validate();
        if (data_path.empty()) synthetic.validate();
    }
};

namespace detail {

inline std::string field_error(const std::string& where, const std::string& key, const std::string& msg) {
    return (where.empty() ? "" : where + ": ") + "config field '" + key + "': " + msg;
}

template <class T>
T parse_integer(std::string_view v, const std::string& key, const std::string& where) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ConfigError(field_error(where, key, "expected an integer, got '" + std::string(v) + "'"));
    return out;
}

inline double parse_real(std::string_view v, const std::string& key, const std::string& where) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ConfigError(field_error(where, key, "expected a number, got '" + std::string(v) + "'"));
    return out;
}

inline bool parse_bool(std::string_view v, const std::string& key, const std::string& where) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(field_error(where, key, "expected true or false, got '" + std::string(v) + "'"));
}

inline std::vector<std::string> parse_list(std::string_view v) {
    std::vector<std::string> out;
    for (std::string_view part : split(v))
        if (!part.empty()) out.emplace_back(part);
    return out;
}

} // namespace detail

/// Applies one setting. Keys use underscores; dashes are accepted too so
/// flag spellings (cg-tol) work unchanged.
inline void apply_setting(ExperimentConfig& cfg, std::string key, const std::string& value, const std::string& where = "") {
    for (char& c : key)
        if (c == '-') c = '_';
    const std::string_view v = detail::trim(value);
    using detail::parse_bool;
    using detail::parse_real;
    auto integer = [&](auto sample) { return detail::parse_integer<decltype(sample)>(v, key, where); };

    if (key == "data") cfg.data_path = std::string(v);
    else if (key == "label_column") cfg.label_column = std::string(v);
    else if (key == "classes") cfg.synthetic.classes = integer(int{});
    else if (key == "dim") cfg.synthetic.dim = integer(Index{});
    else if (key == "per_class") cfg.synthetic.per_class = integer(Index{});
    else if (key == "spread") cfg.synthetic.spread = parse_real(v, key, where);
    else if (key == "imbalance") cfg.synthetic.imbalance = parse_real(v, key, where);
    else if (key == "data_seed") cfg.synthetic.seed = integer(std::uint64_t{});
    else if (key == "eval_fraction") cfg.eval_fraction = parse_real(v, key, where);
    else if (key == "initial_per_class") cfg.initial_per_class = integer(Index{});
    else if (key == "rounds") cfg.rounds = integer(int{});
    else if (key == "budget") cfg.budget = integer(Index{});
    else if (key == "solver") cfg.solvers = detail::parse_list(v);
    else if (key == "seed") cfg.seed = integer(std::uint64_t{});
    else if (key == "l2") cfg.l2 = parse_real(v, key, where);
    else if (key == "fit_max_iter") cfg.fit_max_iter = integer(int{});
    else if (key == "s") cfg.relax.s = integer(int{});
    else if (key == "cg_tol") cfg.relax.cg_tol = parse_real(v, key, where);
    else if (key == "cg_max_iter") cfg.relax.cg_max_iter = integer(int{});
    else if (key == "max_md_iters") cfg.relax.max_md_iters = integer(int{});
    else if (key == "obj_rel_tol") cfg.relax.obj_rel_tol = parse_real(v, key, where);
    else if (key == "beta0") cfg.relax.beta0 = parse_real(v, key, where);
    else if (key == "stop_patience") cfg.relax.stop_patience = integer(int{});
    else if (key == "tail_average") cfg.relax.tail_average = parse_real(v, key, where);
    else if (key == "scale_by_budget") cfg.relax.scale_by_budget = parse_bool(v, key, where);
    else if (key == "eta_grid") {
        cfg.eta_grid.clear();
        for (const std::string& part : detail::parse_list(v)) cfg.eta_grid.push_back(parse_real(part, key, where));
    } else if (key == "allow_repeats") cfg.allow_repeats = parse_bool(v, key, where);
    else if (key == "out") cfg.out = std::string(v);
    else if (key == "plot_out") cfg.plot_out = std::string(v);
    else if (key == "threads") cfg.threads = integer(int{});
    else throw ConfigError((where.empty() ? "" : where + ": ") + "unknown config key '" + key + "'");
}

inline void parse_config_text(ExperimentConfig& cfg, std::istream& is, const std::string& name) {
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        const std::string where = name + ":" + std::to_string(lineno);
        std::string_view body(line);
        if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
        body = detail::trim(body);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value', got '" + std::string(body) + "'");
        const std::string key(detail::trim(body.substr(0, eq)));
        if (key.empty()) throw ConfigError(where + ": missing key before '='");
        apply_setting(cfg, key, std::string(body.substr(eq + 1)), where);
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    ExperimentConfig cfg;
    parse_config_text(cfg, is, path);
    return cfg;
}

} // namespace firalkit::harness
