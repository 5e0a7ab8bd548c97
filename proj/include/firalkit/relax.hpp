#pragma once

// RELAX step: entropic mirror descent on the simplex for
//   f(z) = Tr[(H_o + sum_i z_i H_i)^{-1} H_p],
// with an exact dense solver (oracle) and the fast solver built from
// Hutchinson gradient estimates and block-preconditioned CG.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "firalkit/fisher.hpp"
#include "firalkit/numkit.hpp"

namespace firalkit {

inline constexpr Index kDenseGradientCap = 256;

struct RelaxConfig {
    int s = 10;                 // Rademacher probes per iteration
    double cg_tol = 0.1;        // relative residual
    int cg_max_iter = kDefaultCgMaxIter;
    int max_md_iters = 100;
    double obj_rel_tol = 1e-4;  // stop on relative objective change
    double beta0 = 1.0;         // beta_t = beta0 / ||g||_inf
    /// Fast solver: consecutive below-tolerance changes needed to stop.
    int stop_patience = 3;
    /// Fast solver: return the mean of this trailing fraction of iterates
    /// (0 returns the last iterate).
    double tail_average = 0.75;
    std::uint64_t seed = 0;
    /// Iterate with Sigma = H_o + H_{b z} instead of the unit-simplex z.
    bool scale_by_budget = false;
    /// Exact solver only: halve beta until the exact objective does not increase.
    bool backtrack = true;
    /// Optional; sees every simplex iterate (sums to 1), the start included.
    std::function<void(const Vector&)> observer;

    void validate() const {
        if (s < 1) throw ConfigError("relax: s must be >= 1");
        if (!(cg_tol > 0.0 && cg_tol < 1.0)) throw ConfigError("relax: cg_tol must lie in (0, 1)");
        if (!(obj_rel_tol > 0.0 && obj_rel_tol < 1.0)) throw ConfigError("relax: obj_rel_tol must lie in (0, 1)");
        if (max_md_iters < 1) throw ConfigError("relax: max_md_iters must be >= 1");
        if (cg_max_iter < 1) throw ConfigError("relax: cg_max_iter must be >= 1");
        if (!(beta0 > 0.0)) throw ConfigError("relax: beta0 must be positive");
        if (stop_patience < 1) throw ConfigError("relax: stop_patience must be >= 1");
        if (!(tail_average >= 0.0 && tail_average < 1.0)) throw ConfigError("relax: tail_average must lie in [0, 1)");
    }
};

struct RelaxTrace {
    std::vector<double> objective;       // one per visited iterate
    std::vector<double> grad_inf_norm;   // one per mirror step
    std::vector<double> beta;
    std::vector<int> cg_iterations;      // summed over all solves of a step
    std::vector<int> cg_max_iter_hits;
    std::vector<double> z_min;           // after each mirror step
    std::vector<double> z_sum_error;     // |sum z - 1| after each mirror step
    bool converged = false;

    int steps() const { return static_cast<int>(grad_inf_norm.size()); }
};

struct RelaxResult {
    Vector z_diamond;  // sums to b
    RelaxTrace trace;
};

/// Mixes a stream id into a seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Weights entering Sigma for simplex iterate z.
inline Vector sigma_weights(const Vector& z, double b, const RelaxConfig& cfg) {
    return cfg.scale_by_budget ? Vector(b * z) : z;
}

// ---------------------------------------------------------------------------
// Exact (dense) quantities
// ---------------------------------------------------------------------------

namespace detail {

inline CholFactor factor_sigma(const Matrix& sigma) {
    try {
        return cholesky_factor_ridged(sigma);
    } catch (const NotPositiveDefinite& e) {
        throw SingularSigma(std::string("Sigma_z is singular: ") + e.what());
    }
}

inline void check_dense_cap(const FisherContext& ctx, const char* what) {
    if (ctx.dim() > kDenseGradientCap)
        throw SizeCap(std::string(what) + ": dtilde = " + std::to_string(ctx.dim()) + " exceeds dense cap " +
                      std::to_string(kDenseGradientCap));
}

} // namespace detail

/// Tr(Sigma_w^{-1} H_p) with Sigma_w = H_o + sum_i w_i H_i, formed densely.
inline double exact_objective(const FisherContext& ctx, const Vector& weights) {
    detail::check_dense_cap(ctx, "exact_objective");
    const CholFactor f = detail::factor_sigma(dense_sigma(ctx, weights));
    Matrix x = dense_pool_hessian(ctx);
    f.solve_in_place(x);
    return x.trace();
}

/// g_i = -Tr(H_i Sigma^{-1} H_p Sigma^{-1}) for every pool point.
inline Vector exact_gradient(const FisherContext& ctx, const Vector& weights) {
    detail::check_dense_cap(ctx, "exact_gradient");
    const CholFactor f = detail::factor_sigma(dense_sigma(ctx, weights));
    const Matrix sinv = f.inverse();
    const Matrix m = symmetrize(sinv * dense_pool_hessian(ctx) * sinv);
    const Index d = ctx.d(), k = ctx.K();
    const Matrix& x = ctx.pool_x();
    const Matrix& h = ctx.pool_h();
    // Tr(H_i M) = sum_{k,l} (delta_kl h_k - h_k h_l) x^T M_kl x
    Vector g = Vector::Zero(ctx.n_pool());
    for (Index a = 0; a < k; ++a) {
        for (Index c = 0; c < k; ++c) {
            const Vector q = (x * m.block(a * d, c * d, d, d)).cwiseProduct(x).rowwise().sum();
            Vector coef = -h.col(a).cwiseProduct(h.col(c));
            if (a == c) coef += h.col(a);
            g -= coef.cwiseProduct(q);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Hutchinson estimates
// ---------------------------------------------------------------------------

/// g_i = -(1/s) sum_j v_j^T H_i w_j for every pool point, with probes V and
/// the shared workspace W = Sigma^{-1} H_p Sigma^{-1} V.
inline Vector hutchinson_gradients(const FisherContext& ctx, const Matrix& probes, const Matrix& w) {
    require_dims(probes.rows() == ctx.dim() && w.rows() == ctx.dim() && probes.cols() == w.cols(),
                 "hutchinson_gradients: probe / workspace shape mismatch");
    const Index d = ctx.d(), k = ctx.K(), s = probes.cols();
    const Matrix& x = ctx.pool_x();
    const Matrix& h = ctx.pool_h();
    Vector g = Vector::Zero(ctx.n_pool());
    for (Index j = 0; j < s; ++j) {
        const Eigen::Map<const Matrix> vj(probes.col(j).data(), d, k);
        const Eigen::Map<const Matrix> wj(w.col(j).data(), d, k);
        const Matrix a = x * vj;  // n x K
        const Matrix c = x * wj;
        // v^T H_i w = sum_k h_k a_k c_k - (h.a)(h.c)
        const Vector quad = h.cwiseProduct(a).cwiseProduct(c).rowwise().sum() -
                            Vector(h.cwiseProduct(a).rowwise().sum()).cwiseProduct(h.cwiseProduct(c).rowwise().sum());
        g -= quad;
    }
    return g / static_cast<double>(s);
}

/// The same estimate for one pool point, evaluated literally through the
/// matrix-free matvec H_i w_j.
inline double hutchinson_gradient_at(const FisherContext& ctx, const Matrix& probes, const Matrix& w, Index p) {
    const Vector x = ctx.pool_x().row(p).transpose();
    const Vector h = ctx.pool_h().row(p).transpose();
    double acc = 0.0;
    for (Index j = 0; j < probes.cols(); ++j) acc += probes.col(j).dot(hessian_matvec(x, h, w.col(j)));
    return -acc / static_cast<double>(probes.cols());
}

struct GradientEstimate {
    Vector g;
    Matrix w;     // Sigma^{-1} H_p Sigma^{-1} V
    Matrix hp_w;  // H_p Sigma^{-1} V
    int cg_iterations = 0;
    int cg_max_iter_hits = 0;
};

/// Two preconditioned CG solves around one H_p product; the workspace is
/// computed once and shared by every pool point.
inline GradientEstimate estimate_gradients(const FisherContext& ctx, const Vector& weights, const Matrix& probes,
                                           const RelaxConfig& cfg, const BlockPreconditioner& precond) {
    require_dims(probes.rows() == ctx.dim(), "estimate_gradients: probes must have dtilde rows");
    const SigmaOperator sigma(ctx, weights);
    const PcgOptions opt{cfg.cg_tol, cfg.cg_max_iter};
    GradientEstimate out;
    PcgResult first = pcg_solve(sigma, precond, probes, opt);
    out.hp_w = hp_apply(ctx, first.solution);
    PcgResult second = pcg_solve(sigma, precond, out.hp_w, opt);
    out.w = std::move(second.solution);
    out.g = hutchinson_gradients(ctx, probes, out.w);
    out.cg_iterations = first.total_iterations() + second.total_iterations();
    for (const PcgResult* r : {&first, &second})
        for (char c : r->max_iter_reached) out.cg_max_iter_hits += c;
    return out;
}

inline GradientEstimate estimate_gradients(const FisherContext& ctx, const Vector& weights, const Matrix& probes,
                                           const RelaxConfig& cfg) {
    return estimate_gradients(ctx, weights, probes, cfg, BlockPreconditioner(block_diag_sigma(ctx, weights)));
}

/// (1/s) sum_j v_j^T (H_p Sigma^{-1} v_j): Hutchinson estimate of f(z) from
/// the H_p Sigma^{-1} V product.
inline double estimate_objective(const Matrix& hp_w, const Matrix& probes) {
    require_dims(hp_w.rows() == probes.rows() && hp_w.cols() == probes.cols(),
                 "estimate_objective: workspace / probe shape mismatch");
    return probes.cwiseProduct(hp_w).sum() / static_cast<double>(probes.cols());
}

// ---------------------------------------------------------------------------
// Mirror descent
// ---------------------------------------------------------------------------

/// z_i <- z_i exp(-beta g_i), renormalized. The exponent is shifted by
/// min(g) (the update is invariant to constant shifts) so it never overflows.
inline Vector mirror_step(const Vector& z, const Vector& g, double beta) {
    require_dims(z.size() == g.size(), "mirror_step: z and g differ in length");
    if (!(beta > 0.0)) throw ConfigError("mirror_step: beta must be positive");
    const double gmin = g.minCoeff();
    Vector out = z.array() * (-beta * (g.array() - gmin)).exp();
    const double total = out.sum();
    return out / total;
}

namespace detail {

inline void record_simplex(RelaxTrace& t, const Vector& z) {
    t.z_min.push_back(z.minCoeff());
    t.z_sum_error.push_back(std::abs(z.sum() - 1.0));
}

inline bool relative_change_below(double prev, double cur, double tol) {
    const double scale = std::max(std::abs(prev), std::numeric_limits<double>::min());
    return std::abs(cur - prev) / scale < tol;
}

inline void check_budget(const FisherContext& ctx, double b) {
    if (!(b >= 1.0)) throw ConfigError("relax: budget must be >= 1");
    if (static_cast<double>(ctx.n_pool()) < b)
        throw ConfigError("relax: pool has " + std::to_string(ctx.n_pool()) + " points, budget is " +
                          std::to_string(b));
}

} // namespace detail

/// Exact RELAX: dense gradients, exact objective for the stopping rule.
inline RelaxResult relax_solve_exact(const FisherContext& ctx, double b, const RelaxConfig& cfg) {
    cfg.validate();
    detail::check_budget(ctx, b);
    const Index n = ctx.n_pool();
    Vector z = Vector::Constant(n, 1.0 / static_cast<double>(n));
    if (cfg.observer) cfg.observer(z);
    RelaxResult res;
    double obj = exact_objective(ctx, sigma_weights(z, b, cfg));
    res.trace.objective.push_back(obj);
    for (int t = 0; t < cfg.max_md_iters; ++t) {
        const Vector g = exact_gradient(ctx, sigma_weights(z, b, cfg));
        const double ginf = g.cwiseAbs().maxCoeff();
        res.trace.grad_inf_norm.push_back(ginf);
        res.trace.cg_iterations.push_back(0);
        res.trace.cg_max_iter_hits.push_back(0);
        if (ginf == 0.0) {
            res.trace.beta.push_back(0.0);
            detail::record_simplex(res.trace, z);
            res.trace.objective.push_back(obj);
            res.trace.converged = true;
            break;
        }
        double beta = cfg.beta0 / ginf;
        Vector next = mirror_step(z, g, beta);
        double next_obj = exact_objective(ctx, sigma_weights(next, b, cfg));
        for (int halvings = 0; cfg.backtrack && next_obj > obj && halvings < 40; ++halvings) {
            beta *= 0.5;
            next = mirror_step(z, g, beta);
            next_obj = exact_objective(ctx, sigma_weights(next, b, cfg));
        }
        res.trace.beta.push_back(beta);
        detail::record_simplex(res.trace, next);
        z = std::move(next);
        if (cfg.observer) cfg.observer(z);
        const double prev = obj;
        obj = next_obj;
        res.trace.objective.push_back(obj);
        if (detail::relative_change_below(prev, obj, cfg.obj_rel_tol)) {
            res.trace.converged = true;
            break;
        }
    }
    res.z_diamond = b * z;
    return res;
}

/// Fast RELAX. Each iteration draws fresh probes, rebuilds B(Sigma_z)^{-1},
/// estimates every gradient from one shared workspace and takes a mirror
/// step. The stopping rule tracks a Hutchinson objective estimate on a probe
/// set drawn once, so successive values differ only through z. That estimate
/// can stall while f still falls, hence the patience count. With a constant
/// normalized step the iterates jitter at a noise floor; averaging the tail
/// removes most of it.
inline RelaxResult relax_solve_fast(const FisherContext& ctx, double b, const RelaxConfig& cfg) {
    cfg.validate();
    detail::check_budget(ctx, b);
    const Index n = ctx.n_pool();
    const PcgOptions opt{cfg.cg_tol, cfg.cg_max_iter};
    const Matrix objective_probes = rademacher_sample(ctx.dim(), cfg.s, derive_seed(cfg.seed, 0));
    Vector z = Vector::Constant(n, 1.0 / static_cast<double>(n));
    if (cfg.observer) cfg.observer(z);
    RelaxResult res;
    std::vector<Vector> iterates{z};
    double prev = 0.0;
    int calm = 0;
    for (int t = 0; t <= cfg.max_md_iters; ++t) {
        const Vector weights = sigma_weights(z, b, cfg);
        const BlockPreconditioner precond(block_diag_sigma(ctx, weights));
        const SigmaOperator sigma(ctx, weights);
        const PcgResult obj_solve = pcg_solve(sigma, precond, objective_probes, opt);
        const double obj = estimate_objective(hp_apply(ctx, obj_solve.solution), objective_probes);
        res.trace.objective.push_back(obj);
        if (t > 0) calm = detail::relative_change_below(prev, obj, cfg.obj_rel_tol) ? calm + 1 : 0;
        if (calm >= cfg.stop_patience) {
            res.trace.converged = true;
            break;
        }
        if (t == cfg.max_md_iters) break;
        prev = obj;

        const Matrix probes = rademacher_sample(ctx.dim(), cfg.s, derive_seed(cfg.seed, static_cast<std::uint64_t>(t) + 1));
        const GradientEstimate est = estimate_gradients(ctx, weights, probes, cfg, precond);
        const double ginf = est.g.cwiseAbs().maxCoeff();
        res.trace.grad_inf_norm.push_back(ginf);
        res.trace.cg_iterations.push_back(est.cg_iterations + obj_solve.total_iterations());
        int hits = est.cg_max_iter_hits;
        for (char c : obj_solve.max_iter_reached) hits += c;
        res.trace.cg_max_iter_hits.push_back(hits);
        if (ginf == 0.0) {
            res.trace.beta.push_back(0.0);
            detail::record_simplex(res.trace, z);
            res.trace.converged = true;
            break;
        }
        const double beta = cfg.beta0 / ginf;
        res.trace.beta.push_back(beta);
        z = mirror_step(z, est.g, beta);
        detail::record_simplex(res.trace, z);
        if (cfg.observer) cfg.observer(z);
        if (cfg.tail_average > 0.0) iterates.push_back(z);
    }
    if (cfg.tail_average > 0.0) {
        const std::size_t count = iterates.size();
        const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.tail_average * static_cast<double>(count))));
        z.setZero();
        for (std::size_t i = count - keep; i < count; ++i) z += iterates[i];
        z /= static_cast<double>(keep);
    }
    res.z_diamond = b * z;
    return res;
}

/// Exact objective of a RELAX output z_diamond (sums to b), measured in the
/// same space the solver iterated in.
inline double relax_objective(const FisherContext& ctx, const Vector& z_diamond, double b, const RelaxConfig& cfg) {
    return exact_objective(ctx, sigma_weights(z_diamond / b, b, cfg));
}

} // namespace firalkit
