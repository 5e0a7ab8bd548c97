#pragma once

// Thread configuration and deterministic blocked reductions.
//
// Work over points is cut into fixed-size blocks whose boundaries do not
// depend on the thread count. Block partials are combined by a pairwise tree
// in block order, so reductions are bitwise reproducible for any number of
// threads.

#include <cstddef>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace firalkit {

inline constexpr std::ptrdiff_t kReduceBlock = 256;

namespace detail {
inline int& thread_setting() {
    static int n = 0;
    return n;
}
} // namespace detail

/// Sets the worker count used by pooled operators. n <= 0 restores the
/// default (FIRALKIT_THREADS if set, else the OpenMP default).
inline void set_num_threads(int n) {
    detail::thread_setting() = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

inline int num_threads() {
    if (detail::thread_setting() > 0) return detail::thread_setting();
    if (const char* env = std::getenv("FIRALKIT_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

/// Calls body(i) for i in [0, n), possibly concurrently.
template <class Body>
void parallel_for(std::ptrdiff_t n, Body&& body) {
#ifdef _OPENMP
    const int threads = num_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && n > 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
#else
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
#endif
}

/// Pairwise reduction of parts in index order. parts must be nonempty.
template <class T>
T pairwise_combine(std::vector<T> parts) {
    while (parts.size() > 1) {
        std::vector<T> next;
        next.reserve((parts.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
            T s = std::move(parts[i]);
            s += parts[i + 1];
            next.push_back(std::move(s));
        }
        if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
        parts = std::move(next);
    }
    return std::move(parts.front());
}

/// Sums partial(begin, end) over fixed blocks of [0, n). Returns zero when
/// n == 0.
template <class T, class Partial>
T blocked_sum(std::ptrdiff_t n, T zero, Partial&& partial,
              std::ptrdiff_t block = kReduceBlock) {
    if (n <= 0) return zero;
    const std::ptrdiff_t nb = (n + block - 1) / block;
    std::vector<T> parts(static_cast<std::size_t>(nb), zero);
    parallel_for(nb, [&](std::ptrdiff_t b) {
        const std::ptrdiff_t lo = b * block;
        const std::ptrdiff_t hi = lo + block < n ? lo + block : n;
        parts[static_cast<std::size_t>(b)] = partial(lo, hi);
    });
    return pairwise_combine(std::move(parts));
}

} // namespace firalkit
