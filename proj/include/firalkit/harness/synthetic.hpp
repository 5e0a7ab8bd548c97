#pragma once

// Gaussian-blob datasets standing in for precomputed image features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "firalkit/harness/io.hpp"

namespace firalkit::harness {

struct SyntheticSpec {
    int classes = 3;
    Index dim = 5;
    /// Points in the largest class.
    Index per_class = 100;
    double spread = 0.3;
    /// Largest / smallest class count. Class sizes shrink geometrically
    /// from class 0 to class c-1.
    double imbalance = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 2) throw ConfigError("synthetic: classes must be >= 2");
        if (dim < 1) throw ConfigError("synthetic: dim must be >= 1");
        if (per_class < 1) throw ConfigError("synthetic: per_class must be >= 1");
        if (!(spread > 0.0)) throw ConfigError("synthetic: spread must be positive");
        if (!(imbalance >= 1.0)) throw ConfigError("synthetic: imbalance ratio must be >= 1");
    }
};

/// Class sizes: class 0 gets per_class, class c-1 gets per_class / ratio
/// (which must be a whole number), the others are geometric in between.
inline std::vector<Index> synthetic_class_counts(const SyntheticSpec& spec) {
    spec.validate();
    const double smallest = static_cast<double>(spec.per_class) / spec.imbalance;
    const Index lo = static_cast<Index>(std::llround(smallest));
    if (lo < 1 || std::abs(static_cast<double>(lo) * spec.imbalance - static_cast<double>(spec.per_class)) > 1e-9)
        throw ConfigError("synthetic: per_class " + std::to_string(spec.per_class) +
                          " is not a whole multiple of the imbalance ratio");
    std::vector<Index> counts(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) {
        const double frac = static_cast<double>(c) / static_cast<double>(spec.classes - 1);
        const double v = static_cast<double>(spec.per_class) * std::pow(spec.imbalance, -frac);
        counts[static_cast<std::size_t>(c)] = std::clamp<Index>(static_cast<Index>(std::llround(v)), lo, spec.per_class);
    }
    counts.back() = lo;
    counts.front() = spec.per_class;
    return counts;
}

/// Unit-norm class means, pairwise at least 2 * spread apart, drawn by
/// rejection from the uniform distribution on the sphere.
inline Matrix synthetic_means(const SyntheticSpec& spec, std::mt19937_64& gen) {
    std::normal_distribution<double> normal;
    Matrix means(spec.classes, spec.dim);
    const double min_sep = 2.0 * spec.spread;
    for (int c = 0; c < spec.classes; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            Vector m(spec.dim);
            for (Index j = 0; j < spec.dim; ++j) m(j) = normal(gen);
            if (m.norm() == 0.0) continue;
            m.normalize();
            placed = true;
            for (int o = 0; o < c && placed; ++o) placed = (means.row(o).transpose() - m).norm() >= min_sep;
            if (placed) means.row(c) = m.transpose();
        }
        if (!placed)
            throw ConfigError("synthetic: cannot place " + std::to_string(spec.classes) + " unit means " +
                              std::to_string(min_sep) + " apart in dimension " + std::to_string(spec.dim));
    }
    return means;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    const std::vector<Index> counts = synthetic_class_counts(spec);
    std::mt19937_64 gen(spec.seed);
    const Matrix means = synthetic_means(spec, gen);
    std::normal_distribution<double> normal;
    Index n = 0;
    for (Index c : counts) n += c;
    Dataset ds;
    ds.features.resize(n, spec.dim);
    ds.labels.reserve(static_cast<std::size_t>(n));
    Index row = 0;
    for (int c = 0; c < spec.classes; ++c)
        for (Index i = 0; i < counts[static_cast<std::size_t>(c)]; ++i, ++row) {
            for (Index j = 0; j < spec.dim; ++j) ds.features(row, j) = means(c, j) + spec.spread * normal(gen);
            ds.labels.push_back(c);
        }
    for (Index j = 0; j < spec.dim; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    return ds;
}

} // namespace firalkit::harness
