#pragma once

// Baseline selectors: uniform random, k-means (k = b) and minimum
// sum p log p (entropy).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "firalkit/logistic.hpp"

namespace firalkit::harness {

/// Uniform integer in [0, span) by rejection, independent of the standard
/// library's distribution implementations.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t span) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r;
    do r = gen();
    while (r >= limit);
    return r % span;
}

/// b distinct positions in [0, n), uniform without replacement.
inline std::vector<Index> random_select(Index n, Index b, std::uint64_t seed) {
    if (b < 0 || b > n) throw ConfigError("random_select: budget " + std::to_string(b) + " exceeds pool size " + std::to_string(n));
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 gen(seed);
    for (Index i = 0; i < b; ++i) {  // partial Fisher-Yates
        const Index j = i + static_cast<Index>(uniform_below(gen, static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(b));
    return idx;
}

struct KMeansOptions {
    int max_iter = 100;
};

namespace detail {

inline double sq_dist(const Matrix& x, Index i, const Matrix& c, Index k) {
    return (x.row(i) - c.row(k)).squaredNorm();
}

/// k-means++ seeding followed by Lloyd iterations. Empty clusters keep
/// their previous centroid.
inline Matrix kmeans_centroids(const Matrix& x, Index k, std::uint64_t seed, const KMeansOptions& opt) {
    const Index n = x.rows();
    std::mt19937_64 gen(seed);
    Matrix c(k, x.cols());
    c.row(0) = x.row(static_cast<Index>(uniform_below(gen, static_cast<std::uint64_t>(n))));
    Vector d2(n);
    for (Index i = 0; i < n; ++i) d2(i) = sq_dist(x, i, c, 0);
    for (Index j = 1; j < k; ++j) {
        const double total = d2.sum();
        Index pick = n - 1;
        if (total > 0.0) {
            const double r = std::ldexp(static_cast<double>(gen() >> 11), -53) * total;
            double acc = 0.0;
            for (Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc > r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Index>(uniform_below(gen, static_cast<std::uint64_t>(n)));
        }
        c.row(j) = x.row(pick);
        for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), sq_dist(x, i, c, j));
    }

    std::vector<Index> assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < opt.max_iter; ++it) {
        bool changed = false;
        for (Index i = 0; i < n; ++i) {
            Index best = 0;
            double bd = sq_dist(x, i, c, 0);
            for (Index j = 1; j < k; ++j) {
                const double dj = sq_dist(x, i, c, j);
                if (dj < bd) {
                    bd = dj;
                    best = j;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;
        Matrix sum = Matrix::Zero(k, x.cols());
        std::vector<Index> count(static_cast<std::size_t>(k), 0);
        for (Index i = 0; i < n; ++i) {
            sum.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
            ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (Index j = 0; j < k; ++j)
            if (count[static_cast<std::size_t>(j)] > 0) c.row(j) = sum.row(j) / static_cast<double>(count[static_cast<std::size_t>(j)]);
    }
    return c;
}

} // namespace detail

/// Runs k-means with k = b on the rows of features and returns, for each
/// centroid, the nearest row not already taken (next-nearest on collisions).
inline std::vector<Index> kmeans_select(const Matrix& features, Index b, std::uint64_t seed, const KMeansOptions& opt = {}) {
    const Index n = features.rows();
    if (b < 0 || b > n) throw ConfigError("kmeans_select: budget " + std::to_string(b) + " exceeds pool size " + std::to_string(n));
    if (b == 0) return {};
    const Matrix c = detail::kmeans_centroids(features, b, seed, opt);
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(b));
    for (Index j = 0; j < b; ++j) {
        Index best = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < n; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            const double di = detail::sq_dist(features, i, c, j);
            if (di < bd) {
                bd = di;
                best = i;
            }
        }
        taken[static_cast<std::size_t>(best)] = 1;
        out.push_back(best);
    }
    return out;
}

/// Positions of the b smallest sum_c p_c log p_c scores (most uncertain);
/// ties go to the lower position.
inline std::vector<Index> entropy_select(const ClassProbTable& pool_probs, Index b) {
    const Index n = pool_probs.size();
    if (b < 0 || b > n) throw ConfigError("entropy_select: budget exceeds pool size");
    const Vector s = entropy_scores(pool_probs);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index c) { return s(a) < s(c); });
    idx.resize(static_cast<std::size_t>(b));
    return idx;
}

} // namespace firalkit::harness
