#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "firalkit/firalkit.hpp"
#include "test_support.hpp"

using namespace firalkit;
using namespace firalkit::harness;
using firalkit::testing::Rng;

namespace {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / (std::string("firalkit_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream(path) << text;
}

template <class F>
std::string error_of(F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

ExperimentConfig small_config(const std::string& solver, Index per_class, int rounds, Index budget, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.synthetic.classes = 3;
    cfg.synthetic.dim = 4;
    cfg.synthetic.per_class = per_class;
    cfg.synthetic.seed = seed;
    cfg.solvers = {solver};
    cfg.rounds = rounds;
    cfg.budget = budget;
    cfg.seed = seed;
    return cfg;
}

} // namespace

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

TEST(Fkmx, RoundTripIsBitwise) {
    TempDir dir;
    Rng rng(1);
    Matrix m = rng.normal_matrix(7, 3);
    m(0, 0) = -0.0;
    m(1, 1) = std::numeric_limits<double>::denorm_min();
    m(2, 2) = std::numeric_limits<double>::infinity();
    m(3, 0) = std::numeric_limits<double>::quiet_NaN();
    m(4, 1) = std::numeric_limits<double>::max();
    save_fkmx(dir.file("m.fkmx"), m);
    const Matrix back = load_fkmx(dir.file("m.fkmx"));
    ASSERT_EQ(back.rows(), 7);
    ASSERT_EQ(back.cols(), 3);
    EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * 21), 0);
}

TEST(Fkmx, HeaderLayout) {
    TempDir dir;
    Matrix m(1, 2);
    m << 1.0, -2.0;
    save_fkmx(dir.file("m.fkmx"), m);
    std::ifstream is(dir.file("m.fkmx"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    ASSERT_EQ(bytes.size(), 4u + 4u + 8u + 8u + 16u);
    EXPECT_EQ(bytes.substr(0, 4), "FKMX");
    auto u = [&](std::size_t at, std::size_t len) {
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < len; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
        return v;
    };
    EXPECT_EQ(u(4, 4), 1u);
    EXPECT_EQ(u(8, 8), 1u);
    EXPECT_EQ(u(16, 8), 2u);
    // 1.0 little-endian: 00 .. 00 f0 3f
    EXPECT_EQ(u(24, 8), 0x3ff0000000000000ull);
    EXPECT_EQ(u(32, 8), 0xc000000000000000ull);
}

TEST(Fkmx, RejectsCorruptFiles) {
    TempDir dir;
    write_file(dir.file("bad.fkmx"), "NOPE0000");
    EXPECT_NE(error_of([&] { load_fkmx(dir.file("bad.fkmx")); }).find("magic"), std::string::npos);
    Matrix m = Matrix::Ones(3, 3);
    save_fkmx(dir.file("m.fkmx"), m);
    fs::resize_file(dir.file("m.fkmx"), 24 + 8 * 8);
    EXPECT_NE(error_of([&] { load_fkmx(dir.file("m.fkmx")); }).find("more data than the file holds"), std::string::npos);
    save_fkmx(dir.file("m.fkmx"), m);
    fs::resize_file(dir.file("m.fkmx"), 24 + 9 * 8 + 3);
    EXPECT_NE(error_of([&] { load_fkmx(dir.file("m.fkmx")); }).find("payload size"), std::string::npos);
    EXPECT_THROW(load_fkmx(dir.file("missing.fkmx")), ConfigError);
}

TEST(Csv, RoundTripWithin1e12) {
    TempDir dir;
    Rng rng(2);
    Dataset ds;
    ds.features = rng.normal_matrix(25, 4) * 1e3;
    ds.features(0, 0) = 1e-300;
    ds.features(1, 1) = -123456789.123456789;
    for (int i = 0; i < 25; ++i) ds.labels.push_back(i % 3);
    save_csv(dir.file("d.csv"), ds);
    const Dataset back = load_csv(dir.file("d.csv"));
    ASSERT_EQ(back.labels, ds.labels);
    ASSERT_EQ(back.features.rows(), 25);
    for (Index i = 0; i < 25; ++i)
        for (Index j = 0; j < 4; ++j)
            EXPECT_LE(std::abs(back.features(i, j) - ds.features(i, j)), 1e-12 * std::abs(ds.features(i, j)));
}

TEST(Csv, LabelColumnIsOptionalAndAnywhere) {
    TempDir dir;
    write_file(dir.file("a.csv"), "f1,f2\n1,2\n3.5,-4\n");
    const Dataset a = load_csv(dir.file("a.csv"));
    EXPECT_FALSE(a.has_labels());
    EXPECT_EQ(a.features(1, 0), 3.5);
    EXPECT_EQ(a.features(1, 1), -4.0);

    write_file(dir.file("b.csv"), "y,f1,f2\n1,2,3\n0,4,5\n");
    const Dataset b = load_csv(dir.file("b.csv"), "y");
    EXPECT_EQ(b.labels, (std::vector<int>{1, 0}));
    EXPECT_EQ(b.feature_names, (std::vector<std::string>{"f1", "f2"}));
    EXPECT_EQ(b.features(1, 1), 5.0);
}

TEST(Csv, ErrorsCarryLineNumbers) {
    TempDir dir;
    write_file(dir.file("bad.csv"), "a,b,label\n1,2,0\n1,oops,1\n");
    EXPECT_NE(error_of([&] { load_csv(dir.file("bad.csv")); }).find(":3"), std::string::npos);
    write_file(dir.file("ragged.csv"), "a,b\n1,2\n3\n");
    EXPECT_NE(error_of([&] { load_csv(dir.file("ragged.csv")); }).find(":3"), std::string::npos);
    write_file(dir.file("empty.csv"), "");
    EXPECT_THROW(load_csv(dir.file("empty.csv")), ConfigError);
}

TEST(Dataset, BinaryLabelsTravelInTheLastColumn) {
    TempDir dir;
    SyntheticSpec spec;
    spec.per_class = 6;
    const Dataset ds = generate_synthetic(spec);
    save_dataset(dir.file("d.fkmx"), ds);
    const Dataset with = load_dataset(dir.file("d.fkmx"), "last");
    EXPECT_EQ(with.labels, ds.labels);
    EXPECT_EQ(with.features, ds.features);
    const Dataset without = load_dataset(dir.file("d.fkmx"));
    EXPECT_FALSE(without.has_labels());
    EXPECT_EQ(without.dim(), ds.dim() + 1);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

TEST(Synthetic, DeterministicPerSeed) {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.dim = 2;
    spec.per_class = 10;
    spec.seed = 17;
    const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    spec.seed = 18;
    EXPECT_NE(generate_synthetic(spec).features, a.features);
}

TEST(Synthetic, ClassCounts) {
    SyntheticSpec spec;
    spec.per_class = 40;
    for (Index c : synthetic_class_counts(spec)) EXPECT_EQ(c, 40);

    spec.classes = 3;
    spec.per_class = 100;
    spec.imbalance = 10;
    const Dataset ds = generate_synthetic(spec);
    std::vector<Index> counts(3, 0);
    for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    EXPECT_EQ(*hi, 10 * *lo);

    spec.per_class = 95;
    EXPECT_THROW(synthetic_class_counts(spec), ConfigError);
}

TEST(Synthetic, MeansAreUnitAndSeparated) {
    SyntheticSpec spec;
    spec.classes = 6;
    spec.dim = 3;
    spec.spread = 0.4;
    std::mt19937_64 gen(3);
    const Matrix means = synthetic_means(spec, gen);
    for (Index i = 0; i < means.rows(); ++i) {
        EXPECT_NEAR(means.row(i).norm(), 1.0, 1e-14);
        for (Index j = 0; j < i; ++j) EXPECT_GE((means.row(i) - means.row(j)).norm(), 0.8);
    }
    spec.classes = 3;
    spec.dim = 1;
    EXPECT_THROW(generate_synthetic(spec), ConfigError);  // at most two unit means on a line
}

// ---------------------------------------------------------------------------
// Baseline selectors
// ---------------------------------------------------------------------------

TEST(RandomSelect, FullBudgetIsPermutation) {
    std::vector<Index> p = random_select(30, 30, 4);
    std::sort(p.begin(), p.end());
    for (Index i = 0; i < 30; ++i) EXPECT_EQ(p[static_cast<std::size_t>(i)], i);
    EXPECT_EQ(random_select(30, 7, 4), random_select(30, 7, 4));
    EXPECT_THROW(random_select(3, 4, 0), ConfigError);
}

TEST(RandomSelect, FrequenciesWithinFiveSigma) {
    const Index n = 20, b = 5;
    const int trials = 10000;
    std::vector<int> hits(n, 0);
    for (int t = 0; t < trials; ++t)
        for (Index i : random_select(n, b, static_cast<std::uint64_t>(t))) ++hits[static_cast<std::size_t>(i)];
    const double p = static_cast<double>(b) / static_cast<double>(n);
    const double mean = trials * p, sigma = std::sqrt(trials * p * (1.0 - p));
    for (int h : hits) EXPECT_LE(std::abs(h - mean), 5.0 * sigma);
}

TEST(KMeansSelect, FullBudgetAndDeterminism) {
    Rng rng(5);
    const Matrix x = rng.normal_matrix(12, 3);
    std::vector<Index> all = kmeans_select(x, 12, 1);
    std::sort(all.begin(), all.end());
    for (Index i = 0; i < 12; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
    EXPECT_EQ(kmeans_select(x, 4, 9), kmeans_select(x, 4, 9));
}

TEST(KMeansSelect, OnePointPerSeparatedBlob) {
    Rng rng(6);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Matrix x(40, 2);
        for (Index i = 0; i < 40; ++i) {
            const double cx = i < 20 ? -10.0 : 10.0;
            x(i, 0) = cx + 0.3 * rng.normal();
            x(i, 1) = 0.3 * rng.normal();
        }
        const std::vector<Index> s = kmeans_select(x, 2, seed);
        ASSERT_EQ(s.size(), 2u);
        EXPECT_NE(s[0] < 20, s[1] < 20) << "seed " << seed;
    }
}

TEST(EntropySelect, PicksMostUncertain) {
    Rng rng(7);
    ModelWeights w;
    w.theta = rng.normal_matrix(3, 2) * 2.0;
    w.num_classes = 3;
    const Matrix x = rng.normal_matrix(30, 3);
    std::vector<std::pair<double, Index>> oracle;
    for (Index i = 0; i < 30; ++i) {
        // softmax over (x theta_1, x theta_2, 0)
        const double a = std::exp(x.row(i).dot(w.theta.col(0)));
        const double b = std::exp(x.row(i).dot(w.theta.col(1)));
        const double z = a + b + 1.0;
        double s = 0.0;
        for (double p : {a / z, b / z, 1.0 / z}) s += p * std::log(p);
        oracle.emplace_back(s, i);
    }
    std::stable_sort(oracle.begin(), oracle.end(), [](auto& a, auto& b) { return a.first < b.first; });
    const std::vector<Index> picks = entropy_select(prob_table(w, x), 6);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(picks[j], oracle[j].second);
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TEST(Config, ParsesKeysCommentsAndLists) {
    std::istringstream is("# experiment\n"
                          "rounds = 4\n"
                          "budget=7   # per round\n"
                          "\n"
                          "solver = approx, random\n"
                          "cg-tol = 0.05\n"
                          "eta_grid = 0.5,1,2\n"
                          "scale_by_budget = true\n");
    ExperimentConfig cfg;
    parse_config_text(cfg, is, "exp.cfg");
    EXPECT_EQ(cfg.rounds, 4);
    EXPECT_EQ(cfg.budget, 7);
    EXPECT_EQ(cfg.solvers, (std::vector<std::string>{"approx", "random"}));
    EXPECT_EQ(cfg.relax.cg_tol, 0.05);
    EXPECT_EQ(cfg.eta_grid, (std::vector<double>{0.5, 1.0, 2.0}));
    EXPECT_TRUE(cfg.relax.scale_by_budget);
    apply_setting(cfg, "budget", "3");
    EXPECT_EQ(cfg.budget, 3);
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, ErrorsNameLineAndField) {
    ExperimentConfig cfg;
    std::istringstream bad_value("rounds = 2\nbudget = ten\n");
    const std::string e1 = error_of([&] { parse_config_text(cfg, bad_value, "exp.cfg"); });
    EXPECT_NE(e1.find("exp.cfg:2"), std::string::npos) << e1;
    EXPECT_NE(e1.find("budget"), std::string::npos) << e1;

    std::istringstream unknown("colour = red\n");
    EXPECT_NE(error_of([&] { parse_config_text(cfg, unknown, "x"); }).find("x:1"), std::string::npos);
    std::istringstream no_eq("rounds 3\n");
    EXPECT_NE(error_of([&] { parse_config_text(cfg, no_eq, "x"); }).find("x:1"), std::string::npos);

    ExperimentConfig c;
    c.solvers = {"greedy"};
    EXPECT_NE(error_of([&] { c.validate(); }).find("greedy"), std::string::npos);
    c = ExperimentConfig{};
    c.rounds = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/exp.cfg"), ConfigError);
}

// ---------------------------------------------------------------------------
// Active-learning driver
// ---------------------------------------------------------------------------

TEST(Experiment, RandomSmoke) {
    const ExperimentConfig cfg = small_config("random", 20, 1, 5, 3);
    const ExperimentResult r = run_active_learning(cfg);
    ASSERT_EQ(r.methods.size(), 1u);
    const MethodRun& m = r.methods[0];
    ASSERT_EQ(m.rounds.size(), 2u);
    EXPECT_EQ(m.rounds[1].selected.size(), 5u);
    EXPECT_EQ(m.rounds[1].n_labeled, m.rounds[0].n_labeled + 5);
    for (const RoundRecord& rec : m.rounds) {
        EXPECT_GE(rec.pool_accuracy, 0.0);
        EXPECT_LE(rec.pool_accuracy, 1.0);
        ASSERT_TRUE(rec.eval_accuracy.has_value());
    }
    EXPECT_EQ(r.partition.initial_labeled.size(), 3u);
}

TEST(Experiment, LabeledAndPoolStayDisjoint) {
    for (const char* solver : {"approx", "random", "kmeans", "entropy"}) {
        const ExperimentConfig cfg = small_config(solver, 20, 3, 4, 8);
        const ExperimentResult r = run_active_learning(cfg);
        const MethodRun& m = r.methods[0];
        std::set<Index> labeled(r.partition.initial_labeled.begin(), r.partition.initial_labeled.end());
        std::set<Index> pool(r.partition.initial_pool.begin(), r.partition.initial_pool.end());
        const std::set<Index> eval(r.partition.eval.begin(), r.partition.eval.end());
        for (std::size_t k = 1; k < m.rounds.size(); ++k) {
            for (Index row : m.rounds[k].selected) {
                ASSERT_TRUE(pool.erase(row)) << solver << " picked a row outside the pool";
                ASSERT_TRUE(labeled.insert(row).second);
            }
            for (Index row : labeled) {
                EXPECT_FALSE(pool.count(row));
                EXPECT_FALSE(eval.count(row));
                EXPECT_LT(row, r.n);
            }
            EXPECT_EQ(static_cast<Index>(pool.size()), m.rounds[k].n_pool);
        }
        EXPECT_EQ(std::vector<Index>(pool.begin(), pool.end()),
                  [&] { auto p = m.final_pool; std::sort(p.begin(), p.end()); return p; }());
    }
}

TEST(Experiment, PoolExhaustion) {
    ExperimentConfig cfg = small_config("random", 10, 1, 1, 2);
    const Dataset ds = load_experiment_data(cfg);
    const Partition p = make_partition(ds, cfg);
    cfg.budget = static_cast<Index>(p.initial_pool.size()) / 3;
    cfg.rounds = 3;
    ASSERT_EQ(cfg.budget * 3, static_cast<Index>(p.initial_pool.size())) << "pick a pool divisible by 3";
    const ExperimentResult r = run_active_learning(cfg, ds);
    EXPECT_TRUE(r.methods[0].final_pool.empty());
    EXPECT_EQ(r.methods[0].rounds.back().n_pool, 0);
    cfg.budget += 1;
    EXPECT_THROW(run_active_learning(cfg, ds), ConfigError);
}

TEST(Experiment, ReportIsDeterministicApartFromTimings) {
    ExperimentConfig cfg = small_config("approx", 20, 2, 4, 11);
    cfg.solvers = {"approx", "kmeans", "random", "entropy"};
    const Json a = strip_timings(report_json(run_active_learning(cfg)));
    const Json b = strip_timings(report_json(run_active_learning(cfg)));
    EXPECT_EQ(a.dump(), b.dump());
    EXPECT_EQ(a.dump().find("seconds"), std::string::npos);
}

TEST(Experiment, ApproxTracksExact) {
    // Tracked metric: selected-index overlap between the two pipelines,
    // averaged over seeds per round. Single instances range widely because
    // one differing pick changes the next round's labeled set.
    double overlap[2] = {0.0, 0.0};
    const int seeds = 10;
    for (int seed = 0; seed < seeds; ++seed) {
        ExperimentConfig cfg = small_config("approx", 40, 2, 5, static_cast<std::uint64_t>(seed));
        cfg.solvers = {"approx", "exact"};
        const ExperimentResult r = run_active_learning(cfg);
        ASSERT_EQ(r.partition.train.size(), 60u);
        for (int k = 1; k <= 2; ++k) {
            const auto& a = r.methods[0].rounds[static_cast<std::size_t>(k)].selected;
            const auto& e = r.methods[1].rounds[static_cast<std::size_t>(k)].selected;
            const std::set<Index> sa(a.begin(), a.end());
            int common = 0;
            for (Index i : e) common += static_cast<int>(sa.count(i));
            overlap[k - 1] += common / 5.0 / seeds;
        }
    }
    for (int k = 0; k < 2; ++k) {
        RecordProperty("mean_overlap_round_" + std::to_string(k + 1), std::to_string(overlap[k]));
        std::cout << "round " << k + 1 << " mean approx/exact overlap " << overlap[k] << '\n';
        EXPECT_GE(overlap[k], 0.6);
    }
}

TEST(Experiment, PlotCsvShape) {
    ExperimentConfig cfg = small_config("random", 10, 2, 2, 1);
    cfg.solvers = {"random", "kmeans"};
    const std::string csv = plot_csv(run_active_learning(cfg));
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "round,random_pool_accuracy,random_eval_accuracy,kmeans_pool_accuracy,kmeans_eval_accuracy");
    int rows = 0;
    while (std::getline(is, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
        ++rows;
    }
    EXPECT_EQ(rows, 3);
    EXPECT_EQ(default_plot_path("out/r.json"), "out/r.plot.csv");
}

// ---------------------------------------------------------------------------
// verify / bench
// ---------------------------------------------------------------------------

TEST(Verify, UnknownSuiteIsConfigError) {
    EXPECT_THROW(run_verify("nope"), ConfigError);
    EXPECT_EQ(run_verify("matvec").front().checks, 200);
    EXPECT_TRUE(run_verify("matvec").front().passed);
}

TEST(Bench, SweepShapeIsFixed) {
    BenchOptions opt;
    opt.sizes = {1000, 2000, 4000};
    opt.repeats = 1;
    const BenchTable t = run_bench("matvec", opt);
    EXPECT_EQ(t.rows.size(), 3u);
    EXPECT_EQ(t.at(2, "n"), 4000.0);
    EXPECT_EQ(run_bench("matvec", opt).rows.size(), 3u);
    opt.sizes = {3};
    const BenchTable cg = run_bench("cg", opt);
    ASSERT_EQ(cg.rows.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(cg.at(i, "iters_block"), cg.at(i, "iters_identity"));
    EXPECT_THROW(run_bench("fft", opt), ConfigError);
}
