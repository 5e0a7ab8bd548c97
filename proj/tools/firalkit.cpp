// firalkit command-line front end.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 numerical
// failure, 3 verification failure.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "firalkit/firalkit.hpp"

namespace fk = firalkit;
namespace fh = firalkit::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitVerify = 3;

// Flags shared by run and select. Kept as text and applied through the
// config setter so flags and config files parse identically.
struct ExperimentFlags {
    std::string config;
    std::map<std::string, std::string> set;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "key = value experiment config file");
        add(cmd, "--solver", "solver", "exact, approx, random, kmeans or entropy (comma list for run)");
        add(cmd, "--budget", "budget", "points selected per round");
        add(cmd, "--rounds", "rounds", "selection rounds");
        add(cmd, "--seed", "seed", "experiment seed");
        add(cmd, "--out", "out", "report path");
        add(cmd, "--s", "s", "Rademacher probes per RELAX iteration");
        add(cmd, "--cg-tol", "cg_tol", "relative CG tolerance");
        add(cmd, "--eta-grid", "eta_grid", "comma list of eta values for ROUND");
        add(cmd, "--data", "data", "CSV or FKMX dataset (default: synthetic)");
        add(cmd, "--label-column", "label_column", "CSV label header, or 'last' for FKMX labels in the final column");
    }

    fh::ExperimentConfig build() const {
        fh::ExperimentConfig cfg = config.empty() ? fh::ExperimentConfig{} : fh::load_config(config);
        for (const auto& [key, value] : set) fh::apply_setting(cfg, key, value, "flag --" + key);
        return cfg;
    }

private:
    void add(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        cmd->add_option_function<std::string>(flag, [this, key](const std::string& v) { set[key] = v; }, help);
    }
};

void apply_threads(std::optional<int> flag, int from_config) {
    if (flag) {
        if (*flag < 0) throw fk::ConfigError("--threads must be >= 0");
        fk::set_num_threads(*flag);
    } else if (from_config > 0) {
        fk::set_num_threads(from_config);
    }
    // Otherwise num_threads() falls back to FIRALKIT_THREADS.
}

int cmd_generate(const std::string& config, const std::map<std::string, std::string>& set, const std::string& out) {
    fh::ExperimentConfig cfg = config.empty() ? fh::ExperimentConfig{} : fh::load_config(config);
    for (const auto& [key, value] : set) fh::apply_setting(cfg, key, value, "flag --" + key);
    const std::string path = out.empty() ? cfg.out : out;
    if (path.empty()) throw fk::ConfigError("generate: --out is required");
    cfg.synthetic.validate();
    const fh::Dataset ds = fh::generate_synthetic(cfg.synthetic);
    fh::save_dataset(path, ds);
    std::cerr << "wrote " << ds.size() << " x " << ds.dim() << " (" << ds.num_classes() << " classes) to " << path;
    if (fh::is_binary_path(path)) std::cerr << "; labels are the last column (read with label_column = last)";
    std::cerr << '\n';
    return kExitOk;
}

int cmd_run(const ExperimentFlags& flags, std::optional<int> threads) {
    const fh::ExperimentConfig cfg = flags.build();
    apply_threads(threads, cfg.threads);
    const fh::ExperimentResult res = fh::run_active_learning(cfg);
    fh::write_outputs(res);
    for (const fh::MethodRun& m : res.methods) {
        const fh::RoundRecord& last = m.rounds.back();
        std::cout << m.solver << ": final pool accuracy " << last.pool_accuracy;
        if (last.eval_accuracy) std::cout << ", eval accuracy " << *last.eval_accuracy;
        std::cout << '\n';
    }
    if (cfg.out.empty()) std::cout << fh::report_json(res).dump(2) << '\n';
    return kExitOk;
}

int cmd_select(const ExperimentFlags& flags, std::optional<int> threads, const std::vector<fk::Index>& labeled_rows) {
    fh::ExperimentConfig cfg = flags.build();
    apply_threads(threads, cfg.threads);
    if (cfg.solvers.size() != 1) throw fk::ConfigError("select: exactly one solver is required");
    cfg.validate();
    const fh::Dataset ds = fh::load_experiment_data(cfg);

    std::vector<fk::Index> labeled, pool;
    if (labeled_rows.empty()) {
        const fh::Partition p = fh::make_partition(ds, cfg);
        labeled = p.initial_labeled;
        pool = p.initial_pool;
    } else {
        std::vector<char> mark(static_cast<std::size_t>(ds.size()), 0);
        for (fk::Index r : labeled_rows) {
            if (r < 0 || r >= ds.size()) throw fk::ConfigError("--labeled: row " + std::to_string(r) + " out of range");
            if (mark[static_cast<std::size_t>(r)]) throw fk::ConfigError("--labeled: row " + std::to_string(r) + " repeated");
            mark[static_cast<std::size_t>(r)] = 1;
            labeled.push_back(r);
        }
        for (fk::Index r = 0; r < ds.size(); ++r)
            if (!mark[static_cast<std::size_t>(r)]) pool.push_back(r);
    }
    if (cfg.budget > static_cast<fk::Index>(pool.size()))
        throw fk::ConfigError("budget " + std::to_string(cfg.budget) + " exceeds the pool size " + std::to_string(pool.size()));

    fk::FitOptions fo;
    fo.l2 = cfg.l2;
    fo.max_iter = cfg.fit_max_iter;
    const fk::FitResult fitted = fk::fit(fh::detail::gather_rows(ds.features, labeled),
                                         fh::detail::gather_labels(ds.labels, labeled), ds.num_classes(), fo);
    if (fitted.degenerate_labels) std::cerr << "warning: labeled set covers a single class\n";
    const std::vector<fk::Index> picks = fh::select_batch(cfg.solvers.front(), ds, labeled, pool, fitted.weights,
                                                          cfg.budget, cfg, fk::derive_seed(cfg.seed, 1001));
    for (fk::Index pos : picks) std::cout << pool[static_cast<std::size_t>(pos)] << '\n';
    return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
    bool ok = true;
    for (const fh::SuiteResult& r : fh::run_verify(suite, seed)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.checks << " checks, " << r.failures
                  << " failures, worst " << r.worst << " (tol " << r.tolerance << ")";
        if (!r.note.empty()) std::cout << "; " << r.note;
        std::cout << '\n';
        ok &= r.passed;
    }
    return ok ? kExitOk : kExitVerify;
}

int cmd_bench(const std::string& kind, const fh::BenchOptions& opt, const std::string& out) {
    const fh::BenchTable t = fh::run_bench(kind, opt);
    if (out.empty()) std::cout << t.csv();
    else fh::write_text(out, t.csv());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FIRAL batch active learning for multiclass logistic regression"};
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<int> threads;
    app.add_option("--threads", threads, "worker threads (default: FIRALKIT_THREADS, else all cores)");

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic Gaussian-blob dataset");
    std::string gen_config, gen_out;
    std::map<std::string, std::string> gen_set;
    gen->add_option("--config", gen_config, "config file (synthetic keys)");
    gen->add_option("--out", gen_out, "output path (.csv, .fkmx or .bin)");
    for (const char* key : {"classes", "dim", "per-class", "spread", "imbalance"}) {
        const std::string k = key;
        gen->add_option_function<std::string>("--" + k, [&gen_set, k](const std::string& v) { gen_set[k] = v; });
    }
    gen->add_option_function<std::string>("--seed", [&gen_set](const std::string& v) { gen_set["data_seed"] = v; },
                                          "data seed");

    // run
    auto* run = app.add_subcommand("run", "multi-round active-learning experiment");
    ExperimentFlags run_flags;
    run_flags.attach(run);

    // select
    auto* sel = app.add_subcommand("select", "one selection round; prints dataset row indices");
    ExperimentFlags sel_flags;
    sel_flags.attach(sel);
    std::vector<fk::Index> labeled_rows;
    sel->add_option("--labeled", labeled_rows, "labeled row indices (default: the seeded initial set)")->delimiter(',');

    // verify
    auto* ver = app.add_subcommand("verify", "seeded oracle suites");
    std::string suite;
    std::uint64_t verify_seed = 0;
    ver->add_option("suite", suite, "matvec, hutchinson, sm, prop1, nu or all")->required();
    ver->add_option("--seed", verify_seed, "seed offset");

    // bench
    auto* bench = app.add_subcommand("bench", "timing sweeps; writes CSV");
    std::string kind, bench_out;
    fh::BenchOptions bopt;
    bench->add_option("kind", kind, "matvec, cg, relax or round")->required();
    bench->add_option("--sizes", bopt.sizes, "swept sizes (cg: instance count)")->delimiter(',');
    bench->add_option("--n", bopt.n, "pool size for cg and relax");
    bench->add_option("--d", bopt.d, "feature dimension for matvec, cg and round");
    bench->add_option("--k", bopt.k, "K = classes - 1");
    bench->add_option("--repeats", bopt.repeats, "timed repeats per size");
    bench->add_option("--seed", bopt.seed, "instance seed");
    bench->add_option("--out", bench_out, "CSV path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) {
            apply_threads(threads, 0);
            return cmd_generate(gen_config, gen_set, gen_out);
        }
        if (*run) return cmd_run(run_flags, threads);
        if (*sel) return cmd_select(sel_flags, threads, labeled_rows);
        if (*ver) {
            apply_threads(threads, 0);
            return cmd_verify(suite, verify_seed);
        }
        if (*bench) {
            apply_threads(threads, 0);
            if (bopt.repeats < 1 || bopt.k < 1 || bopt.n < 0 || bopt.d < 0)
                throw fk::ConfigError("bench: repeats and k must be >= 1, n and d >= 0");
            return cmd_bench(kind, bopt, bench_out);
        }
    } catch (const fk::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const fk::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitConfig;
}
