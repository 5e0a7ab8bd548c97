#pragma once

// Multi-round active-learning driver and its report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "firalkit/harness/config.hpp"
#include "firalkit/harness/io.hpp"
#include "firalkit/harness/selectors.hpp"
#include "firalkit/harness/synthetic.hpp"
#include "firalkit/logistic.hpp"
#include "firalkit/relax.hpp"
#include "firalkit/round.hpp"

namespace firalkit::harness {

using Json = nlohmann::ordered_json;

inline constexpr int kReportVersion = 1;

/// Train / evaluation split and the initial labeled set, all as dataset rows.
struct Partition {
    std::vector<Index> train;
    std::vector<Index> eval;
    std::vector<Index> initial_labeled;
    std::vector<Index> initial_pool;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
    return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<Index>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(y[static_cast<std::size_t>(r)]);
    return out;
}

inline Json nullable(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

} // namespace detail

inline Dataset load_experiment_data(const ExperimentConfig& cfg) {
    Dataset ds = cfg.data_path.empty() ? generate_synthetic(cfg.synthetic) : load_dataset(cfg.data_path, cfg.label_column);
    if (!ds.has_labels()) throw ConfigError("dataset has no labels; active-learning runs need a label column");
    if (ds.size() < 2 || ds.dim() < 1) throw ConfigError("dataset is empty");
    if (ds.num_classes() < 2) throw ConfigError("dataset needs at least two classes");
    return ds;
}

/// Seeded split: a shuffled eval_fraction of the rows is held out, then
/// initial_per_class labeled rows are drawn per class from the rest.
inline Partition make_partition(const Dataset& ds, const ExperimentConfig& cfg) {
    const Index n = ds.size();
    Partition p;
    std::vector<Index> order = random_select(n, n, derive_seed(cfg.seed, 101));
    const auto n_eval = static_cast<Index>(std::floor(cfg.eval_fraction * static_cast<double>(n)));
    p.eval.assign(order.begin(), order.begin() + n_eval);
    p.train.assign(order.begin() + n_eval, order.end());
    std::sort(p.eval.begin(), p.eval.end());
    std::sort(p.train.begin(), p.train.end());

    const int c = ds.num_classes();
    std::vector<char> labeled(static_cast<std::size_t>(n), 0);
    for (int k = 0; k < c; ++k) {
        std::vector<Index> members;
        for (Index r : p.train)
            if (ds.labels[static_cast<std::size_t>(r)] == k) members.push_back(r);
        if (static_cast<Index>(members.size()) < cfg.initial_per_class)
            throw ConfigError("class " + std::to_string(k) + " has " + std::to_string(members.size()) +
                              " training points, fewer than initial_per_class");
        for (Index pos : random_select(static_cast<Index>(members.size()), cfg.initial_per_class,
                                       derive_seed(cfg.seed, 200 + static_cast<std::uint64_t>(k))))
            labeled[static_cast<std::size_t>(members[static_cast<std::size_t>(pos)])] = 1;
    }
    for (Index r : p.train) (labeled[static_cast<std::size_t>(r)] ? p.initial_labeled : p.initial_pool).push_back(r);
    return p;
}

// ---------------------------------------------------------------------------
// FIRAL selection
// ---------------------------------------------------------------------------

struct FiralStats {
    int relax_steps = 0;
    bool relax_converged = false;
    double objective_first = 0.0;
    double objective_last = 0.0;
    long cg_iterations = 0;
    int cg_max_iter_hits = 0;
    double eta = 0.0;
    double min_block_eigenvalue = 0.0;
    double relax_seconds = 0.0;
    double round_seconds = 0.0;
};

struct FiralSelection {
    std::vector<Index> positions;  // pool positions
    FiralStats stats;
};

/// RELAX then ROUND with eta chosen from the grid. The exact pipeline uses
/// the dense solvers for both steps.
inline FiralSelection firal_select(const FisherContext& ctx, Index b, bool exact, const RelaxConfig& relax_cfg,
                                   const std::vector<double>& eta_grid, bool allow_repeats) {
    FiralSelection out;
    auto t0 = std::chrono::steady_clock::now();
    const RelaxResult rr = exact ? relax_solve_exact(ctx, static_cast<double>(b), relax_cfg)
                                 : relax_solve_fast(ctx, static_cast<double>(b), relax_cfg);
    out.stats.relax_seconds = detail::seconds_since(t0);
    out.stats.relax_steps = rr.trace.steps();
    out.stats.relax_converged = rr.trace.converged;
    out.stats.objective_first = rr.trace.objective.front();
    out.stats.objective_last = rr.trace.objective.back();
    for (int v : rr.trace.cg_iterations) out.stats.cg_iterations += v;
    for (int v : rr.trace.cg_max_iter_hits) out.stats.cg_max_iter_hits += v;

    t0 = std::chrono::steady_clock::now();
    RoundConfig rc;
    rc.b = b;
    rc.eta_grid = eta_grid;
    rc.allow_repeats = allow_repeats;
    if (!exact) {
        const EtaTuneResult tuned = tune_eta(ctx, rr.z_diamond, rc);
        out.positions = tuned.selections[tuned.best_index];
        out.stats.eta = tuned.eta;
        out.stats.min_block_eigenvalue = tuned.min_block_eigenvalue[tuned.best_index];
    } else {
        const std::vector<double> grid = eta_grid.empty() ? default_eta_grid(ctx.dim(), b) : eta_grid;
        const BlockDiag ho = labeled_block_hessians(ctx);
        ExactRoundOptions opt;
        opt.allow_repeats = allow_repeats;
        bool have = false;
        for (double eta : grid) {
            const ExactRoundResult r = round_exact(ctx, rr.z_diamond, b, eta, opt);
            BlockDiag acc = sum_pool_block_hessians(ctx, r.selected);
            acc += ho;
            const double lam = min_block_eigenvalue(acc);
            if (!have || lam > out.stats.min_block_eigenvalue || (lam == out.stats.min_block_eigenvalue && eta < out.stats.eta)) {
                have = true;
                out.positions = r.selected;
                out.stats.eta = eta;
                out.stats.min_block_eigenvalue = lam;
            }
        }
    }
    out.stats.round_seconds = detail::seconds_since(t0);
    return out;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct RoundRecord {
    int round = 0;
    std::vector<Index> selected;  // dataset rows added this round
    Index n_labeled = 0;
    Index n_pool = 0;
    double pool_accuracy = 0.0;
    std::optional<double> eval_accuracy;
    std::optional<FiralStats> firal;
    bool degenerate_labels = false;
    double fit_seconds = 0.0;
    double select_seconds = 0.0;
};

struct MethodRun {
    std::string solver;
    std::vector<RoundRecord> rounds;  // rounds[0] is the initial state
    std::vector<Index> final_labeled;
    std::vector<Index> final_pool;
};

struct ExperimentResult {
    ExperimentConfig config;
    Index n = 0, d = 0;
    int classes = 0;
    Partition partition;
    std::vector<MethodRun> methods;
    double total_seconds = 0.0;
};

namespace detail {

struct Evaluator {
    const Dataset* ds;
    Matrix pool_x, eval_x;
    std::vector<int> pool_y, eval_y;

    Evaluator(const Dataset& d, const Partition& p) : ds(&d) {
        pool_x = gather_rows(d.features, p.initial_pool);
        pool_y = gather_labels(d.labels, p.initial_pool);
        eval_x = gather_rows(d.features, p.eval);
        eval_y = gather_labels(d.labels, p.eval);
    }

    void score(const ModelWeights& w, RoundRecord& rec) const {
        rec.pool_accuracy = predict_accuracy(w, pool_x, pool_y);
        if (!eval_y.empty()) rec.eval_accuracy = predict_accuracy(w, eval_x, eval_y);
    }
};

inline FitResult fit_labeled(const Dataset& ds, const std::vector<Index>& labeled, int classes, const ExperimentConfig& cfg) {
    FitOptions fo;
    fo.l2 = cfg.l2;
    fo.max_iter = cfg.fit_max_iter;
    return fit(gather_rows(ds.features, labeled), gather_labels(ds.labels, labeled), classes, fo);
}

} // namespace detail

/// One selection of b points from pool (dataset rows) given the current
/// labeled rows. Returns positions into pool.
inline std::vector<Index> select_batch(const std::string& solver, const Dataset& ds, const std::vector<Index>& labeled,
                                       const std::vector<Index>& pool, const ModelWeights& w, Index b,
                                       const ExperimentConfig& cfg, std::uint64_t round_seed,
                                       std::optional<FiralStats>* stats = nullptr) {
    if (solver == "random") return random_select(static_cast<Index>(pool.size()), b, round_seed);
    const Matrix pool_x = detail::gather_rows(ds.features, pool);
    if (solver == "kmeans") return kmeans_select(pool_x, b, round_seed);
    if (solver == "entropy") return entropy_select(prob_table(w, pool_x), b);
    const ClassProbTable probs = prob_table(w, ds.features);
    const FisherContext ctx(ds.features, probs, labeled, pool);
    RelaxConfig rc = cfg.relax;
    rc.seed = round_seed;
    FiralSelection sel = firal_select(ctx, b, solver == "exact", rc, cfg.eta_grid, cfg.allow_repeats);
    if (stats) *stats = sel.stats;
    return sel.positions;
}

inline MethodRun run_method(const std::string& solver, const Dataset& ds, const Partition& part,
                            const ExperimentConfig& cfg) {
    const int classes = ds.num_classes();
    const detail::Evaluator ev(ds, part);
    MethodRun run;
    run.solver = solver;
    std::vector<Index> labeled = part.initial_labeled;
    std::vector<Index> pool = part.initial_pool;

    auto t0 = std::chrono::steady_clock::now();
    FitResult fitted = detail::fit_labeled(ds, labeled, classes, cfg);
    RoundRecord init;
    init.fit_seconds = detail::seconds_since(t0);
    init.n_labeled = static_cast<Index>(labeled.size());
    init.n_pool = static_cast<Index>(pool.size());
    init.degenerate_labels = fitted.degenerate_labels;
    ev.score(fitted.weights, init);
    run.rounds.push_back(init);

    for (int r = 1; r <= cfg.rounds; ++r) {
        RoundRecord rec;
        rec.round = r;
        const std::uint64_t round_seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(r));
        t0 = std::chrono::steady_clock::now();
        const std::vector<Index> picks =
            select_batch(solver, ds, labeled, pool, fitted.weights, cfg.budget, cfg, round_seed, &rec.firal);
        rec.select_seconds = detail::seconds_since(t0);

        std::vector<char> chosen(pool.size(), 0);
        for (Index pos : picks) {
            if (pos < 0 || pos >= static_cast<Index>(pool.size()) || chosen[static_cast<std::size_t>(pos)])
                throw NumericalError(solver + ": selector returned an invalid or repeated pool position");
            chosen[static_cast<std::size_t>(pos)] = 1;
            rec.selected.push_back(pool[static_cast<std::size_t>(pos)]);
            labeled.push_back(pool[static_cast<std::size_t>(pos)]);
        }
        std::vector<Index> rest;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (!chosen[i]) rest.push_back(pool[i]);
        pool = std::move(rest);

        t0 = std::chrono::steady_clock::now();
        fitted = detail::fit_labeled(ds, labeled, classes, cfg);
        rec.fit_seconds = detail::seconds_since(t0);
        rec.n_labeled = static_cast<Index>(labeled.size());
        rec.n_pool = static_cast<Index>(pool.size());
        rec.degenerate_labels = fitted.degenerate_labels;
        ev.score(fitted.weights, rec);
        run.rounds.push_back(std::move(rec));
    }
    run.final_labeled = labeled;
    run.final_pool = pool;
    return run;
}

inline ExperimentResult run_active_learning(const ExperimentConfig& cfg, const Dataset& ds) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult res;
    res.config = cfg;
    res.n = ds.size();
    res.d = ds.dim();
    res.classes = ds.num_classes();
    res.partition = make_partition(ds, cfg);
    const auto need = static_cast<Index>(cfg.rounds) * cfg.budget;
    if (need > static_cast<Index>(res.partition.initial_pool.size()))
        throw ConfigError("rounds * budget = " + std::to_string(need) + " exceeds the pool size " +
                          std::to_string(res.partition.initial_pool.size()));
    for (const std::string& s : cfg.solvers) res.methods.push_back(run_method(s, ds, res.partition, cfg));
    res.total_seconds = detail::seconds_since(t0);
    return res;
}

inline ExperimentResult run_active_learning(const ExperimentConfig& cfg) {
    cfg.validate();
    return run_active_learning(cfg, load_experiment_data(cfg));
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

inline Json config_to_json(const ExperimentConfig& c) {
    Json j;
    j["data"] = c.data_path.empty() ? Json(nullptr) : Json(c.data_path);
    if (c.data_path.empty())
        j["synthetic"] = {{"classes", c.synthetic.classes},     {"dim", c.synthetic.dim},
                          {"per_class", c.synthetic.per_class}, {"spread", c.synthetic.spread},
                          {"imbalance", c.synthetic.imbalance}, {"data_seed", c.synthetic.seed}};
    j["eval_fraction"] = c.eval_fraction;
    j["initial_per_class"] = c.initial_per_class;
    j["rounds"] = c.rounds;
    j["budget"] = c.budget;
    j["solvers"] = c.solvers;
    j["seed"] = c.seed;
    j["l2"] = c.l2;
    j["fit_max_iter"] = c.fit_max_iter;
    j["relax"] = {{"s", c.relax.s},
                  {"cg_tol", c.relax.cg_tol},
                  {"cg_max_iter", c.relax.cg_max_iter},
                  {"max_md_iters", c.relax.max_md_iters},
                  {"obj_rel_tol", c.relax.obj_rel_tol},
                  {"beta0", c.relax.beta0},
                  {"stop_patience", c.relax.stop_patience},
                  {"tail_average", c.relax.tail_average},
                  {"scale_by_budget", c.relax.scale_by_budget}};
    j["eta_grid"] = c.eta_grid;
    j["allow_repeats"] = c.allow_repeats;
    return j;
}

/// Everything except fields under a "timings" key is reproducible for a
/// fixed config and seed.
inline Json report_json(const ExperimentResult& r) {
    Json j;
    j["format"] = "firalkit-report";
    j["version"] = kReportVersion;
    j["config"] = config_to_json(r.config);
    j["dataset"] = {{"n", r.n},
                    {"d", r.d},
                    {"classes", r.classes},
                    {"n_train", r.partition.train.size()},
                    {"n_eval", r.partition.eval.size()}};
    j["initial_labeled"] = r.partition.initial_labeled;
    j["methods"] = Json::array();
    for (const MethodRun& m : r.methods) {
        Json mj;
        mj["solver"] = m.solver;
        mj["rounds"] = Json::array();
        for (const RoundRecord& rec : m.rounds) {
            Json rj;
            rj["round"] = rec.round;
            rj["selected"] = rec.selected;
            rj["n_labeled"] = rec.n_labeled;
            rj["n_pool"] = rec.n_pool;
            rj["pool_accuracy"] = rec.pool_accuracy;
            rj["eval_accuracy"] = detail::nullable(rec.eval_accuracy);
            rj["degenerate_labels"] = rec.degenerate_labels;
            if (rec.firal) {
                const FiralStats& s = *rec.firal;
                rj["relax"] = {{"steps", s.relax_steps},
                               {"converged", s.relax_converged},
                               {"objective_first", s.objective_first},
                               {"objective_last", s.objective_last},
                               {"cg_iterations", s.cg_iterations},
                               {"cg_max_iter_hits", s.cg_max_iter_hits}};
                rj["round_step"] = {{"eta", s.eta}, {"min_block_eigenvalue", s.min_block_eigenvalue}};
            } else {
                rj["relax"] = nullptr;
                rj["round_step"] = nullptr;
            }
            Json t = {{"fit_seconds", rec.fit_seconds}, {"select_seconds", rec.select_seconds}};
            if (rec.firal) {
                t["relax_seconds"] = rec.firal->relax_seconds;
                t["round_seconds"] = rec.firal->round_seconds;
            }
            rj["timings"] = t;
            mj["rounds"].push_back(rj);
        }
        mj["final_pool_size"] = m.final_pool.size();
        j["methods"].push_back(mj);
    }
    j["timings"] = {{"total_seconds", r.total_seconds}};
    return j;
}

/// Removes every "timings" member recursively.
inline Json strip_timings(Json j) {
    if (j.is_object()) {
        j.erase("timings");
        for (auto& [k, v] : j.items()) v = strip_timings(v);
    } else if (j.is_array()) {
        for (auto& v : j) v = strip_timings(v);
    }
    return j;
}

/// round, then pool and eval accuracy per method.
inline std::string plot_csv(const ExperimentResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "round";
    for (const MethodRun& m : r.methods) os << ',' << m.solver << "_pool_accuracy," << m.solver << "_eval_accuracy";
    os << '\n';
    const std::size_t rounds = r.methods.empty() ? 0 : r.methods.front().rounds.size();
    for (std::size_t i = 0; i < rounds; ++i) {
        os << i;
        for (const MethodRun& m : r.methods) {
            const RoundRecord& rec = m.rounds[i];
            os << ',' << rec.pool_accuracy << ',';
            if (rec.eval_accuracy) os << *rec.eval_accuracy;
        }
        os << '\n';
    }
    return os.str();
}

inline std::string default_plot_path(const std::string& report_path) {
    const std::string stem = detail::ends_with(report_path, ".json") ? report_path.substr(0, report_path.size() - 5) : report_path;
    return stem + ".plot.csv";
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << text;
    if (!os) throw ConfigError("write failed: " + path);
}

inline void write_outputs(const ExperimentResult& r) {
    if (r.config.out.empty()) return;
    write_text(r.config.out, report_json(r).dump(2) + "\n");
    write_text(r.config.plot_out.empty() ? default_plot_path(r.config.out) : r.config.plot_out, plot_csv(r));
}

} // namespace firalkit::harness
