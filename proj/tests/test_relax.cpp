#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "firalkit/relax.hpp"
#include "test_support.hpp"

using namespace firalkit;
using firalkit::testing::Rng;
using firalkit::testing::random_context;
using firalkit::testing::rel_err;

namespace {

// Objective straight from the definition with an LU inverse.
double objective_oracle(const FisherContext& ctx, const Vector& z) {
    const Matrix sigma = dense_sigma(ctx, z);
    return (Eigen::FullPivLU<Matrix>(sigma).inverse() * dense_pool_hessian(ctx)).trace();
}

// Every sign vector of length m exactly once.
Matrix all_sign_vectors(Index m) {
    const Index count = Index{1} << m;
    Matrix v(m, count);
    for (Index j = 0; j < count; ++j)
        for (Index i = 0; i < m; ++i) v(i, j) = ((j >> i) & 1) ? 1.0 : -1.0;
    return v;
}

FisherContext with_zero_pool_point(Rng& rng, Index zero_at) {
    Matrix xl = firalkit::testing::random_features(rng, 3, 3);
    Matrix hl = firalkit::testing::random_probs(rng, 3, 2);
    Matrix xp = firalkit::testing::random_features(rng, 8, 3);
    Matrix hp = firalkit::testing::random_probs(rng, 8, 2);
    xp.row(zero_at).setZero();
    return FisherContext::from_rows(xl, hl, xp, hp);
}

std::vector<Index> top_b(const Vector& z, Index b) {
    std::vector<Index> idx(static_cast<std::size_t>(z.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index c) { return z(a) > z(c); });
    idx.resize(static_cast<std::size_t>(b));
    std::sort(idx.begin(), idx.end());
    return idx;
}

void expect_simplex(const RelaxTrace& t) {
    for (std::size_t i = 0; i < t.z_min.size(); ++i) {
        EXPECT_GE(t.z_min[i], 0.0);
        EXPECT_LE(t.z_sum_error[i], 1e-12);
    }
}

} // namespace

TEST(ExactGradient, ZeroFeaturePointHasZeroGradient) {
    Rng rng(1);
    const FisherContext ctx = with_zero_pool_point(rng, 5);
    const Vector g = exact_gradient(ctx, Vector::Constant(8, 1.0 / 8));
    EXPECT_EQ(g(5), 0.0);
}

TEST(ExactGradient, VanishingPoolHessianGivesZeroGradient) {
    Rng rng(2);
    const Matrix xl = firalkit::testing::random_features(rng, 4, 2);
    const Matrix hl = firalkit::testing::random_probs(rng, 4, 2);
    const FisherContext ctx = FisherContext::from_rows(xl, hl, Matrix::Zero(5, 2), firalkit::testing::random_probs(rng, 5, 2));
    const Vector g = exact_gradient(ctx, Vector::Constant(5, 0.2));
    EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExactGradient, MatchesCentralFiniteDifferences) {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const FisherContext ctx = random_context(rng, 2, 12, 3, 2);
        const Vector z = firalkit::testing::random_simplex(rng, 12);
        const Vector g = exact_gradient(ctx, z);
        const double eps = 1e-6;
        for (Index i = 0; i < 12; ++i) {
            Vector zp = z, zm = z;
            zp(i) += eps;
            zm(i) -= eps;
            const double fd = (objective_oracle(ctx, zp) - objective_oracle(ctx, zm)) / (2 * eps);
            EXPECT_NEAR(g(i), fd, 1e-4 * std::abs(fd)) << "trial " << trial << " i " << i;
        }
    }
}

TEST(ExactGradient, EntriesAreNonPositive) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const FisherContext ctx = random_context(rng, rng.integer(1, 3), rng.integer(5, 20), rng.integer(1, 4), rng.integer(1, 3));
        const Vector g = exact_gradient(ctx, firalkit::testing::random_simplex(rng, ctx.n_pool()));
        EXPECT_LE(g.maxCoeff(), 1e-10);
    }
}

TEST(ExactObjective, MatchesLuOracle) {
    Rng rng(5);
    const FisherContext ctx = random_context(rng, 2, 10, 3, 2);
    const Vector z = firalkit::testing::random_simplex(rng, 10);
    EXPECT_NEAR(exact_objective(ctx, z), objective_oracle(ctx, z), 1e-10 * objective_oracle(ctx, z));
}

TEST(EstimateGradients, EnumerationReproducesExactGradient) {
    Rng rng(6);
    for (int trial = 0; trial < 3; ++trial) {
        const FisherContext ctx = random_context(rng, 3, 10, trial == 2 ? 5 : 3, 2);  // dtilde 6 or 10
        const Vector z = firalkit::testing::random_simplex(rng, 10);
        RelaxConfig cfg;
        cfg.cg_tol = 1e-10;
        const Matrix probes = all_sign_vectors(ctx.dim());
        const GradientEstimate est = estimate_gradients(ctx, z, probes, cfg);
        const Vector exact = exact_gradient(ctx, z);
        for (Index i = 0; i < 10; ++i) EXPECT_NEAR(est.g(i), exact(i), 1e-8 * std::abs(exact(i)));
        EXPECT_NEAR(estimate_objective(est.hp_w, probes), objective_oracle(ctx, z), 1e-8 * objective_oracle(ctx, z));
    }
}

TEST(EstimateGradients, ZeroFeaturePointIsExactlyZero) {
    Rng rng(7);
    const FisherContext ctx = with_zero_pool_point(rng, 2);
    const GradientEstimate est =
        estimate_gradients(ctx, Vector::Constant(8, 1.0 / 8), rademacher_sample(ctx.dim(), 4, 11), RelaxConfig{});
    EXPECT_EQ(est.g(2), 0.0);
}

TEST(EstimateGradients, DeterministicForFixedSeed) {
    Rng rng(8);
    const FisherContext ctx = random_context(rng, 2, 40, 4, 3);
    const Vector z = firalkit::testing::random_simplex(rng, 40);
    const Matrix probes = rademacher_sample(ctx.dim(), 10, 99);
    const GradientEstimate a = estimate_gradients(ctx, z, probes, RelaxConfig{});
    const GradientEstimate b = estimate_gradients(ctx, z, rademacher_sample(ctx.dim(), 10, 99), RelaxConfig{});
    EXPECT_EQ(a.g, b.g);
    EXPECT_EQ(estimate_objective(a.hp_w, probes), estimate_objective(b.hp_w, probes));
}

TEST(EstimateGradients, SharedWorkspaceMatchesPerPointEvaluation) {
    Rng rng(9);
    const FisherContext ctx = random_context(rng, 2, 25, 3, 3);
    const Vector z = firalkit::testing::random_simplex(rng, 25);
    const Matrix probes = rademacher_sample(ctx.dim(), 6, 5);
    const GradientEstimate est = estimate_gradients(ctx, z, probes, RelaxConfig{});
    for (Index p = 0; p < 25; ++p) {
        // Recompute the workspace for this point alone, then apply H_p literally.
        const GradientEstimate again = estimate_gradients(ctx, z, probes, RelaxConfig{});
        const double lit = hutchinson_gradient_at(ctx, probes, again.w, p);
        EXPECT_NEAR(est.g(p), lit, 1e-12 * std::max(1.0, std::abs(lit)));
    }
}

TEST(EstimateObjective, ZeroPoolHessianGivesZero) {
    const Matrix probes = rademacher_sample(6, 3, 1);
    EXPECT_EQ(estimate_objective(Matrix::Zero(6, 3), probes), 0.0);
}

TEST(MirrorStep, Examples) {
    const Vector z = Vector::Constant(4, 0.25);
    EXPECT_EQ(mirror_step(z, Vector::Zero(4), 1.0), z);
    Vector zr(3);
    zr << 0.2, 0.3, 0.5;
    EXPECT_LT((mirror_step(zr, Vector::Constant(3, 7.5), 2.0) - zr).norm(), 1e-15);

    Vector half = Vector::Constant(2, 0.5), g(2);
    g << -std::log(2.0), 0.0;
    const Vector out = mirror_step(half, g, 1.0);
    EXPECT_NEAR(out(0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(out(1), 1.0 / 3.0, 1e-15);
}

TEST(MirrorStep, HugeGradientsStayOnSimplex) {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = rng.integer(2, 300);
        const Vector z = firalkit::testing::random_simplex(rng, n);
        const Vector g = 1e6 * rng.normal_vector(n);
        const Vector out = mirror_step(z, g, 1.0 / g.cwiseAbs().maxCoeff() * rng.uniform(0.1, 50.0));
        EXPECT_GE(out.minCoeff(), 0.0);
        EXPECT_LE(std::abs(out.sum() - 1.0), 1e-12);
        EXPECT_TRUE(out.allFinite());
    }
}

TEST(RelaxFast, IdenticalPointsKeepUniformWeights) {
    Rng rng(11);
    const Vector x = rng.normal_vector(3);
    const Vector h = firalkit::testing::random_probs(rng, 1, 2).row(0).transpose();
    const Matrix xp = x.transpose().replicate(6, 1), hp = h.transpose().replicate(6, 1);
    const FisherContext ctx = FisherContext::from_rows(firalkit::testing::random_features(rng, 3, 3),
                                                       firalkit::testing::random_probs(rng, 3, 2), xp, hp);
    RelaxConfig cfg;
    cfg.max_md_iters = 5;
    const RelaxResult r = relax_solve_fast(ctx, 2, cfg);
    for (Index i = 0; i < 6; ++i) EXPECT_NEAR(r.z_diamond(i), 2.0 / 6.0, 1e-13);
}

TEST(RelaxFast, FullBudgetScalesToPoolSize) {
    Rng rng(12);
    const FisherContext ctx = random_context(rng, 3, 15, 3, 2);
    const RelaxResult r = relax_solve_fast(ctx, 15, RelaxConfig{});
    EXPECT_NEAR(r.z_diamond.sum(), 15.0, 1e-10);
    expect_simplex(r.trace);
}

TEST(RelaxFast, CloseToExactObjective) {
    Rng rng(13);
    const FisherContext ctx = random_context(rng, 3, 30, 4, 2);
    RelaxConfig cfg;
    cfg.seed = 3;
    const RelaxResult fast = relax_solve_fast(ctx, 5, cfg);
    const RelaxResult exact = relax_solve_exact(ctx, 5, cfg);
    const double ff = relax_objective(ctx, fast.z_diamond, 5, cfg);
    const double fe = relax_objective(ctx, exact.z_diamond, 5, cfg);
    EXPECT_LE(std::abs(ff - fe), 0.05 * fe);
    expect_simplex(fast.trace);
    expect_simplex(exact.trace);
    EXPECT_LE(static_cast<int>(fast.trace.objective.size()), cfg.max_md_iters + 1);
}

TEST(RelaxFast, Deterministic) {
    Rng rng(14);
    const FisherContext ctx = random_context(rng, 3, 40, 4, 2);
    RelaxConfig cfg;
    cfg.seed = 17;
    EXPECT_EQ(relax_solve_fast(ctx, 5, cfg).z_diamond, relax_solve_fast(ctx, 5, cfg).z_diamond);
}

TEST(RelaxFast, TopWeightsAgreeWithExactSolver) {
    int overlap = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(1000 + seed);
        const FisherContext ctx = random_context(rng, 3, 30, 4, 2);
        RelaxConfig cfg;
        cfg.seed = seed;
        const auto a = top_b(relax_solve_fast(ctx, 5, cfg).z_diamond, 5);
        const auto b = top_b(relax_solve_exact(ctx, 5, cfg).z_diamond, 5);
        std::vector<Index> common;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
        overlap += static_cast<int>(common.size());
        total += 5;
    }
    EXPECT_GE(overlap, 0.8 * total);
}

TEST(RelaxExact, OneIterationStaysOnSimplex) {
    Rng rng(15);
    const FisherContext ctx = random_context(rng, 2, 10, 2, 2);
    RelaxConfig cfg;
    cfg.max_md_iters = 1;
    const RelaxResult r = relax_solve_exact(ctx, 3, cfg);
    EXPECT_EQ(r.trace.steps(), 1);
    expect_simplex(r.trace);
    EXPECT_NEAR(r.z_diamond.sum(), 3.0, 1e-10);
}

TEST(RelaxExact, ObjectiveNonIncreasingWithBacktracking) {
    Rng rng(16);
    for (int trial = 0; trial < 5; ++trial) {
        const FisherContext ctx = random_context(rng, 2, 20, 3, 2);
        RelaxConfig cfg;
        cfg.beta0 = 4.0;
        const RelaxResult r = relax_solve_exact(ctx, 4, cfg);
        for (std::size_t i = 1; i < r.trace.objective.size(); ++i)
            EXPECT_LE(r.trace.objective[i], r.trace.objective[i - 1] * (1 + 1e-14));
    }
}

TEST(RelaxExact, HandSteppedTwoPointInstance) {
    // d = K = 1: H_i = h_i(1 - h_i) x_i^2 =: a_i, so Sigma_z = a_o + z_1 a_1 + z_2 a_2
    // and g_i = -a_i (a_1 + a_2) / Sigma^2.
    Matrix xl(1, 1), hl(1, 1), xp(2, 1), hp(2, 1);
    xl << 1.0;
    hl << 0.5;
    xp << 1.0, 2.0;
    hp << 0.5, 0.2;
    const FisherContext ctx = FisherContext::from_rows(xl, hl, xp, hp);
    const double ao = 0.25, a1 = 0.25, a2 = 0.16 * 4;
    const double sigma = ao + 0.5 * a1 + 0.5 * a2;
    const double g1 = -a1 * (a1 + a2) / (sigma * sigma), g2 = -a2 * (a1 + a2) / (sigma * sigma);
    const double beta = 1.0 / std::max(std::abs(g1), std::abs(g2));
    const double w1 = 0.5 * std::exp(-beta * g1), w2 = 0.5 * std::exp(-beta * g2);

    RelaxConfig cfg;
    cfg.max_md_iters = 1;
    cfg.backtrack = false;
    const RelaxResult r = relax_solve_exact(ctx, 1, cfg);
    EXPECT_NEAR(r.z_diamond(0), w1 / (w1 + w2), 1e-14);
    EXPECT_NEAR(r.z_diamond(1), w2 / (w1 + w2), 1e-14);
    EXPECT_NEAR(r.trace.objective[0], (a1 + a2) / sigma, 1e-14);
}

TEST(RelaxConfig, Validation) {
    RelaxConfig cfg;
    cfg.s = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.cg_tol = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    Rng rng(1);
    const FisherContext ctx = random_context(rng, 1, 3, 2, 1);
    EXPECT_THROW(relax_solve_fast(ctx, 4, RelaxConfig{}), ConfigError);
}

TEST(RelaxFast, ScaleByBudgetFlagChangesIterationSpace) {
    Rng rng(18);
    const FisherContext ctx = random_context(rng, 3, 20, 3, 2);
    RelaxConfig lit, scaled;
    scaled.scale_by_budget = true;
    const RelaxResult a = relax_solve_fast(ctx, 6, lit);
    const RelaxResult b = relax_solve_fast(ctx, 6, scaled);
    EXPECT_NEAR(b.z_diamond.sum(), 6.0, 1e-10);
    EXPECT_GT((a.z_diamond - b.z_diamond).norm(), 0.0);
}

TEST(RelaxFast, TailAverageIsMeanOfTrailingIterates) {
    Rng rng(19);
    const FisherContext ctx = random_context(rng, 3, 25, 3, 2);
    for (double frac : {0.0, 0.25, 0.75}) {
        std::vector<Vector> seen;
        RelaxConfig cfg;
        cfg.tail_average = frac;
        cfg.max_md_iters = 12;
        cfg.observer = [&](const Vector& z) { seen.push_back(z); };
        const RelaxResult r = relax_solve_fast(ctx, 4, cfg);
        const std::size_t keep =
            frac == 0.0 ? 1 : static_cast<std::size_t>(std::ceil(frac * static_cast<double>(seen.size())));
        Vector mean = Vector::Zero(25);
        for (std::size_t i = seen.size() - keep; i < seen.size(); ++i) mean += seen[i];
        mean /= static_cast<double>(keep);
        EXPECT_LE((r.z_diamond - 4.0 * mean).cwiseAbs().maxCoeff(), 1e-13) << "tail_average " << frac;
        EXPECT_NEAR(r.z_diamond.sum(), 4.0, 1e-10);
    }
}

TEST(RelaxFast, StopsOnlyAfterPatienceCalmChanges) {
    Rng rng(20);
    const FisherContext ctx = random_context(rng, 3, 30, 4, 2);
    for (int patience : {1, 3}) {
        RelaxConfig cfg;
        cfg.stop_patience = patience;
        cfg.obj_rel_tol = 1e-2;
        const RelaxResult r = relax_solve_fast(ctx, 5, cfg);
        ASSERT_TRUE(r.trace.converged);
        const auto& o = r.trace.objective;
        ASSERT_GE(static_cast<int>(o.size()), patience + 1);
        int calm_run = 0;
        for (std::size_t i = 1; i < o.size(); ++i) {
            const bool calm = std::abs(o[i] - o[i - 1]) / std::abs(o[i - 1]) < cfg.obj_rel_tol;
            calm_run = calm ? calm_run + 1 : 0;
            if (i + 1 < o.size()) EXPECT_LT(calm_run, patience);
        }
        EXPECT_EQ(calm_run, patience);
    }
}

TEST(RelaxConfig, AveragingAndPatienceValidation) {
    RelaxConfig cfg;
    cfg.stop_patience = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.tail_average = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.tail_average = -0.1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
