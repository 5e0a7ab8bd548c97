#pragma once

// Seeded property suites behind `firalkit verify`. Each suite compares a
// fast path with a dense reference on freshly generated instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "firalkit/fisher.hpp"
#include "firalkit/relax.hpp"
#include "firalkit/round.hpp"

namespace firalkit::harness {

struct SuiteResult {
    std::string name;
    bool passed = true;
    int checks = 0;
    int failures = 0;
    double worst = 0.0;      // largest observed error measure
    double tolerance = 0.0;
    std::string note;

    void record(double err) {
        ++checks;
        worst = std::max(worst, err);
        if (!(err <= tolerance)) {
            ++failures;
            passed = false;
        }
    }
    void expect(bool ok) {
        ++checks;
        if (!ok) {
            ++failures;
            passed = false;
        }
    }
};

namespace detail {

class InstanceGen {
public:
    explicit InstanceGen(std::uint64_t seed) : gen_(seed) {}

    double normal() { return normal_(gen_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * std::ldexp(static_cast<double>(gen_() >> 11), -53); }
    Index integer(Index lo, Index hi) { return lo + static_cast<Index>(gen_() % static_cast<std::uint64_t>(hi - lo + 1)); }

    Matrix normal_matrix(Index r, Index c) {
        Matrix m(r, c);
        for (Index j = 0; j < c; ++j)
            for (Index i = 0; i < r; ++i) m(i, j) = normal();
        return m;
    }
    Matrix probs(Index n, Index k) {
        Matrix h(n, k);
        for (Index i = 0; i < n; ++i) {
            double denom = 1.0;
            for (Index c = 0; c < k; ++c) denom += (h(i, c) = std::exp(normal()));
            h.row(i) /= denom;
        }
        return h;
    }
    Matrix spd(Index d) {
        const Matrix g = normal_matrix(d, d);
        return symmetrize(g * g.transpose() + static_cast<double>(d) * Matrix::Identity(d, d) * uniform(0.1, 1.0));
    }
    FisherContext context(Index n_lab, Index n_pool, Index d, Index k) {
        return FisherContext::from_rows(normal_matrix(n_lab, d), probs(n_lab, k), normal_matrix(n_pool, d), probs(n_pool, k));
    }
    Vector simplex(Index n) {
        Vector z(n);
        for (Index i = 0; i < n; ++i) z(i) = -std::log(uniform(1e-12, 1.0));
        return z / z.sum();
    }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double relative(const Matrix& a, const Matrix& b) {
    const double s = b.norm();
    return s == 0.0 ? a.norm() : (a - b).norm() / s;
}

inline Matrix sign_enumeration(Index m) {
    const Index count = Index{1} << m;
    Matrix v(m, count);
    for (Index j = 0; j < count; ++j)
        for (Index i = 0; i < m; ++i) v(i, j) = ((j >> i) & 1) ? 1.0 : -1.0;
    return v;
}

} // namespace detail

/// Matrix-free per-point Hessian matvec against the explicit Kronecker product.
inline SuiteResult verify_matvec(std::uint64_t seed = 1, int instances = 200) {
    SuiteResult r{"matvec"};
    r.tolerance = 1e-12;
    detail::InstanceGen g(seed);
    for (int t = 0; t < instances; ++t) {
        const Index d = g.integer(1, 8), k = g.integer(1, 5);
        const Vector x = g.normal_matrix(d, 1);
        const Vector h = g.probs(1, k).row(0).transpose();
        const Vector v = g.normal_matrix(d * k, 1);
        r.record(detail::relative(hessian_matvec(x, h, v), dense_hessian(x, h) * v));
    }
    return r;
}

/// Hutchinson estimate over every sign vector with tight CG equals the
/// exact gradient.
inline SuiteResult verify_hutchinson(std::uint64_t seed = 2, int instances = 4) {
    SuiteResult r{"hutchinson"};
    r.tolerance = 1e-8;
    detail::InstanceGen g(seed);
    for (int t = 0; t < instances; ++t) {
        const Index k = g.integer(1, 2);
        const Index d = k == 1 ? g.integer(2, 10) : g.integer(2, 5);
        const FisherContext ctx = g.context(3, 12, d, k);
        const Vector z = g.simplex(12);
        RelaxConfig cfg;
        cfg.cg_tol = 1e-10;
        const GradientEstimate est = estimate_gradients(ctx, z, detail::sign_enumeration(ctx.dim()), cfg);
        const Vector exact = exact_gradient(ctx, z);
        for (Index i = 0; i < ctx.n_pool(); ++i)
            r.record(std::abs(est.g(i) - exact(i)) / std::max(std::abs(exact(i)), 1e-300));
    }
    return r;
}

/// Sherman-Morrison block update against a dense inverse.
inline SuiteResult verify_sm(std::uint64_t seed = 3, int instances = 100) {
    SuiteResult r{"sm"};
    r.tolerance = 1e-10;
    detail::InstanceGen g(seed);
    for (int t = 0; t < instances; ++t) {
        const Index d = g.integer(1, 6);
        const Matrix a = g.spd(d);
        const Vector x = g.normal_matrix(d, 1);
        const double gamma = std::exp(g.uniform(-3.0, 3.0));
        const Matrix a_inv = a.llt().solve(Matrix::Identity(d, d));
        const Matrix dense = (a + gamma * x * x.transpose()).llt().solve(Matrix::Identity(d, d));
        r.record(detail::relative(sm_block_update(a_inv, gamma, x), dense));
    }
    return r;
}

/// r_i = Tr[B^{-1} S] - eta score_i at every step, argmax score = argmin r,
/// and the dense reference on block-truncated Hessians picks the same points.
inline SuiteResult verify_prop1(std::uint64_t seed = 4, int instances = 50) {
    SuiteResult r{"prop1"};
    r.tolerance = 1e-8;
    detail::InstanceGen g(seed);
    int mismatched_sequences = 0;
    for (int t = 0; t < instances; ++t) {
        const Index n = g.integer(8, 40), d = g.integer(1, 4), k = g.integer(1, 3);
        const Index b = g.integer(1, std::min<Index>(6, n));
        const FisherContext ctx = g.context(g.integer(1, 4), n, d, k);
        const Vector zd = g.simplex(n) * static_cast<double>(b);
        const double eta = std::exp(g.uniform(-1.5, 1.5));
        const RoundResult diag = round_diag(ctx, zd, b, eta, {}, [&](const RoundStep& step) {
            const RoundState& st = *step.state;
            double base = 0.0;
            std::vector<Matrix> b_blocks;
            for (Index c = 0; c < k; ++c) {
                base += (st.b_inv[c] * st.sigma_diamond[c]).trace();
                b_blocks.push_back(st.b_inv[c].llt().solve(Matrix::Identity(d, d)));
            }
            Index argmin = -1;
            double best = 0.0;
            for (Index p = 0; p < n; ++p) {
                const Vector x = ctx.pool_x().row(p).transpose();
                double val = 0.0;
                for (Index c = 0; c < k; ++c) {
                    const double w = ctx.pool_h()(p, c) * (1.0 - ctx.pool_h()(p, c));
                    const Matrix m = b_blocks[static_cast<std::size_t>(c)] + eta * w * x * x.transpose();
                    val += m.llt().solve(st.sigma_diamond[c]).trace();
                }
                r.record(std::abs(val - (base - eta * (*step.scores)(p))) / std::abs(val));
                if ((*step.eligible)[static_cast<std::size_t>(p)] && (argmin < 0 || val < best)) {
                    argmin = p;
                    best = val;
                }
            }
            // Near-ties can flip either way; only count a mismatch when the
            // gap is well above roundoff.
            if (argmin != step.pick) {
                const Vector x = ctx.pool_x().row(step.pick).transpose();
                double picked = 0.0;
                for (Index c = 0; c < k; ++c) {
                    const double w = ctx.pool_h()(step.pick, c) * (1.0 - ctx.pool_h()(step.pick, c));
                    picked += (b_blocks[static_cast<std::size_t>(c)] + eta * w * x * x.transpose()).llt().solve(st.sigma_diamond[c]).trace();
                }
                r.expect(std::abs(picked - best) <= 1e-10 * std::abs(best));
            } else {
                r.expect(true);
            }
        });
        ExactRoundOptions opt;
        opt.block_truncated = true;
        const bool same = round_exact(ctx, zd, b, eta, opt).selected == diag.selected;
        if (!same) ++mismatched_sequences;
        r.expect(same);
    }
    if (mismatched_sequences) r.note = std::to_string(mismatched_sequences) + " selection sequences differ";
    return r;
}

/// The nu equation holds after every pick of both round variants; an
/// all-zero spectrum gives sqrt(dtilde).
inline SuiteResult verify_nu(std::uint64_t seed = 5, int instances = 20) {
    SuiteResult r{"nu"};
    r.tolerance = 1e-10;
    detail::InstanceGen g(seed);
    for (int t = 0; t < instances; ++t) {
        const Index n = g.integer(6, 30), d = g.integer(1, 4), k = g.integer(1, 3);
        const Index b = g.integer(1, 5);
        const FisherContext ctx = g.context(2, n, d, k);
        const Vector zd = g.simplex(n) * static_cast<double>(b);
        const double eta = std::exp(g.uniform(-1.5, 1.5));
        for (double res : round_diag(ctx, zd, b, eta).nu_residual) r.record(std::abs(res));
        const ExactRoundResult ex = round_exact(ctx, zd, b, eta);
        for (double res : ex.nu_residual) r.record(std::abs(res));
        for (double res : ex.trace_a_inv_sq_residual) r.record(std::abs(res));
        const Index m = d * k;
        const std::vector<double> zeros(static_cast<std::size_t>(m), 0.0);
        r.record(std::abs(find_nu(zeros, eta) - std::sqrt(static_cast<double>(m))));
    }
    return r;
}

inline const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names{"matvec", "hutchinson", "sm", "prop1", "nu"};
    return names;
}

/// Runs one suite, or every suite for "all". Unknown names raise ConfigError.
inline std::vector<SuiteResult> run_verify(const std::string& suite, std::uint64_t seed = 0) {
    auto one = [&](const std::string& name) -> SuiteResult {
        if (name == "matvec") return verify_matvec(seed + 1);
        if (name == "hutchinson") return verify_hutchinson(seed + 2);
        if (name == "sm") return verify_sm(seed + 3);
        if (name == "prop1") return verify_prop1(seed + 4);
        return verify_nu(seed + 5);
    };
    if (suite == "all") {
        std::vector<SuiteResult> out;
        for (const std::string& n : verify_suite_names()) out.push_back(one(n));
        return out;
    }
    for (const std::string& n : verify_suite_names())
        if (n == suite) return {one(n)};
    throw ConfigError("unknown verify suite '" + suite + "' (expected matvec, hutchinson, sm, prop1, nu or all)");
}

} // namespace firalkit::harness
