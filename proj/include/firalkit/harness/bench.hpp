#pragma once

// Timing sweeps behind `firalkit bench`. Every timing is the median of
// `repeats` runs after one warm-up. Sweeps whose ratios matter time the
// sizes round-robin, so load changes during a sweep hit every size alike.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "firalkit/harness/verify.hpp"

namespace firalkit::harness {

struct BenchOptions {
    std::vector<Index> sizes;  // swept quantity; empty: per-kind default
    Index n = 0;  // fixed pool size for cg and relax; 0: per-kind default
    Index d = 0;  // fixed feature dimension; 0: per-kind default
    Index k = 4;
    int repeats = 5;
    std::uint64_t seed = 0;
};

struct BenchTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::string csv() const {
        std::ostringstream os;
        os.precision(9);
        for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
        os << '\n';
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
            os << '\n';
        }
        return os.str();
    }
    double at(std::size_t row, const std::string& col) const {
        const auto it = std::find(header.begin(), header.end(), col);
        if (it == header.end()) throw ConfigError("bench table has no column '" + col + "'");
        return rows.at(row).at(static_cast<std::size_t>(it - header.begin()));
    }
};

namespace detail {

template <class F>
double median_seconds(int repeats, F&& body) {
    body();
    std::vector<double> t;
    for (int r = 0; r < std::max(repeats, 1); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        body();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
}

/// Per-body medians; each repeat runs every body once, in order.
template <class F>
std::vector<double> interleaved_median_seconds(int repeats, std::vector<F>& bodies) {
    for (F& b : bodies) b();
    std::vector<std::vector<double>> t(bodies.size());
    for (int r = 0; r < std::max(repeats, 1); ++r)
        for (std::size_t i = 0; i < bodies.size(); ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            bodies[i]();
            t[i].push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
    std::vector<double> out;
    for (auto& ti : t) {
        std::sort(ti.begin(), ti.end());
        out.push_back(ti[ti.size() / 2]);
    }
    return out;
}

inline double ratio_to_previous(const BenchTable& t, std::size_t col, double value) {
    return t.rows.empty() ? 0.0 : value / t.rows.back()[col];
}

} // namespace detail

/// H_p v wall time while the pool size n sweeps at fixed d and K.
inline BenchTable bench_matvec(const BenchOptions& opt) {
    const std::vector<Index> sizes = opt.sizes.empty() ? std::vector<Index>{10000, 20000, 40000, 80000} : opt.sizes;
    const Index d = opt.d > 0 ? opt.d : 16;
    BenchTable t{{"n", "d", "K", "seconds", "ratio"}, {}};
    detail::InstanceGen g(opt.seed);
    const Vector v = g.normal_matrix(d * opt.k, 1);
    std::vector<FisherContext> ctxs;
    for (Index n : sizes) ctxs.push_back(g.context(0, n, d, opt.k));
    Vector sink;
    std::vector<std::function<void()>> bodies;
    for (const FisherContext& ctx : ctxs) bodies.push_back([&sink, &ctx, &v] { sink = hp_matvec(ctx, v); });
    const std::vector<double> secs = detail::interleaved_median_seconds(opt.repeats, bodies);
    for (std::size_t i = 0; i < sizes.size(); ++i)
        t.rows.push_back({static_cast<double>(sizes[i]), static_cast<double>(d), static_cast<double>(opt.k), secs[i],
                          detail::ratio_to_previous(t, 3, secs[i])});
    return t;
}

/// PCG iteration counts with and without the block preconditioner, plus
/// the condition numbers of Sigma_z and of its block-scaled form.
inline BenchTable bench_cg(const BenchOptions& opt) {
    const int instances = opt.sizes.empty() ? 20 : static_cast<int>(opt.sizes.front());
    const Index n = opt.n > 0 ? opt.n : 200;
    const Index d = opt.d > 0 ? opt.d : 10;
    BenchTable t{{"instance", "n", "d", "K", "iters_identity", "iters_block", "cond_sigma", "cond_scaled"}, {}};
    detail::InstanceGen g(opt.seed);
    for (int i = 0; i < instances; ++i) {
        const FisherContext ctx = g.context(opt.k + 1, n, d, opt.k);
        const Vector z = g.simplex(n) * 10.0;
        const SigmaOperator op(ctx, z);
        const BlockDiag blocks = block_diag_sigma(ctx, z);
        const BlockPreconditioner pc(blocks);
        const Matrix rhs = rademacher_sample(ctx.dim(), 4, derive_seed(opt.seed, static_cast<std::uint64_t>(i)));
        const PcgOptions po{1e-6, 10 * static_cast<int>(ctx.dim())};
        const int it_id = pcg_solve(op, IdentityPreconditioner{}, rhs, po).total_iterations();
        const int it_pc = pcg_solve(op, pc, rhs, po).total_iterations();
        double cs = 0.0, cp = 0.0;
        if (ctx.dim() <= kDenseHessianCap) {
            const Matrix s = dense_sigma(ctx, z);
            const Vector e = sym_eigvals(s);
            cs = e(e.size() - 1) / e(0);
            Matrix r = Matrix::Zero(ctx.dim(), ctx.dim());
            for (Index c = 0; c < blocks.count(); ++c) r.block(c * d, c * d, d, d) = spd_roots(blocks[c]).inv_sqrt;
            const Vector es = sym_eigvals(symmetrize(r * s * r));
            cp = es(es.size() - 1) / es(0);
        }
        t.rows.push_back({static_cast<double>(i), static_cast<double>(n), static_cast<double>(d), static_cast<double>(opt.k),
                          static_cast<double>(it_id), static_cast<double>(it_pc), cs, cp});
    }
    return t;
}

/// Component costs of one fast RELAX iteration while d sweeps at fixed n:
/// preconditioner setup (block sums plus Cholesky), one PCG solve on s
/// probes, and the gradient evaluation from a given workspace.
inline BenchTable bench_relax(const BenchOptions& opt) {
    const std::vector<Index> sizes = opt.sizes.empty() ? std::vector<Index>{32, 64, 128, 256} : opt.sizes;
    const Index n = opt.n > 0 ? opt.n : 2000;
    BenchTable t{{"d", "n", "K", "precond_setup_seconds", "precond_ratio", "cg_seconds", "gradient_seconds"}, {}};
    detail::InstanceGen g(opt.seed);
    std::vector<FisherContext> ctxs;
    std::vector<Vector> zs;
    for (Index d : sizes) {
        ctxs.push_back(g.context(opt.k + 1, n, d, opt.k));
        zs.push_back(g.simplex(n));
    }
    std::vector<BlockPreconditioner> pcs(sizes.size());
    std::vector<std::function<void()>> bodies;
    for (std::size_t i = 0; i < sizes.size(); ++i)
        bodies.push_back([&, i] { pcs[i] = BlockPreconditioner(block_diag_sigma(ctxs[i], zs[i])); });
    const std::vector<double> setup = detail::interleaved_median_seconds(opt.repeats, bodies);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const FisherContext& ctx = ctxs[i];
        const Matrix probes = rademacher_sample(ctx.dim(), 10, opt.seed);
        const SigmaOperator op(ctx, zs[i]);
        PcgResult sol;
        const double cg = detail::median_seconds(std::min(opt.repeats, 3), [&] { sol = pcg_solve(op, pcs[i], probes, {0.1, 500}); });
        Vector grad;
        const double gs = detail::median_seconds(opt.repeats, [&] { grad = hutchinson_gradients(ctx, probes, sol.solution); });
        t.rows.push_back({static_cast<double>(sizes[i]), static_cast<double>(n), static_cast<double>(opt.k), setup[i],
                          detail::ratio_to_previous(t, 3, setup[i]), cg, gs});
    }
    return t;
}

/// round_diag wall time while the pool size sweeps.
inline BenchTable bench_round(const BenchOptions& opt) {
    const std::vector<Index> sizes = opt.sizes.empty() ? std::vector<Index>{1000, 2000, 4000, 8000} : opt.sizes;
    const Index d = opt.d > 0 ? opt.d : 16;
    BenchTable t{{"n", "d", "K", "b", "seconds", "ratio"}, {}};
    detail::InstanceGen g(opt.seed);
    const Index b = 10;
    for (Index n : sizes) {
        const FisherContext ctx = g.context(opt.k + 1, n, d, opt.k);
        const Vector zd = g.simplex(n) * static_cast<double>(b);
        const double eta = std::sqrt(static_cast<double>(ctx.dim())) / static_cast<double>(b);
        const double s = detail::median_seconds(std::min(opt.repeats, 3), [&] { (void)round_diag(ctx, zd, b, eta); });
        t.rows.push_back({static_cast<double>(n), static_cast<double>(d), static_cast<double>(opt.k),
                          static_cast<double>(b), s, detail::ratio_to_previous(t, 4, s)});
    }
    return t;
}

inline BenchTable run_bench(const std::string& kind, const BenchOptions& opt) {
    if (kind == "matvec") return bench_matvec(opt);
    if (kind == "cg") return bench_cg(opt);
    if (kind == "relax") return bench_relax(opt);
    if (kind == "round") return bench_round(opt);
    throw ConfigError("unknown bench kind '" + kind + "' (expected matvec, cg, relax or round)");
}

} // namespace firalkit::harness
