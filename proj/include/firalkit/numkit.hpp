#pragma once

// Dense small-matrix linear algebra, preconditioned CG and Rademacher probes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "firalkit/errors.hpp"
#include "firalkit/parallel.hpp"

namespace firalkit {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// A square matrix that callers promise is symmetric. Only the lower
/// triangle is read by the factorizations.
using SymMatrix = Eigen::MatrixXd;

inline constexpr Index kDefaultEigCap = 4096;
inline constexpr int kDefaultCgMaxIter = 500;

inline bool is_symmetric(const Matrix& a, double rel_tol = 0.0) {
    if (a.rows() != a.cols()) return false;
    const double scale = a.cwiseAbs().maxCoeff();
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Lower-triangular Cholesky factor L with L L^T = A.
class CholFactor {
public:
    CholFactor() = default;
    explicit CholFactor(Matrix lower) : lower_(std::move(lower)) {}

    Index dim() const { return lower_.rows(); }
    const Matrix& lower() const { return lower_; }

    /// Solves A x = rhs in place; rhs may hold several columns.
    template <class Derived>
    void solve_in_place(Eigen::MatrixBase<Derived>& rhs) const {
        require_dims(rhs.rows() == dim(), "cholesky_solve: rhs has " + std::to_string(rhs.rows()) +
                                              " rows, factor has dim " + std::to_string(dim()));
        const auto l = lower_.triangularView<Eigen::Lower>();
        l.solveInPlace(rhs);
        l.transpose().solveInPlace(rhs);
    }

    Matrix inverse() const {
        Matrix id = Matrix::Identity(dim(), dim());
        solve_in_place(id);
        return symmetrize(id);
    }

    double log_det() const { return 2.0 * lower_.diagonal().array().log().sum(); }

    Matrix reconstruct() const { return lower_ * lower_.transpose(); }

private:
    Matrix lower_;
};

/// Left-looking Cholesky. Reads the lower triangle of a.
inline CholFactor cholesky_factor(const SymMatrix& a) {
    require_dims(a.rows() == a.cols(), "cholesky_factor: matrix is not square");
    const Index n = a.rows();
    Matrix l = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
        double pivot = a(j, j);
        if (j > 0) pivot -= l.row(j).head(j).squaredNorm();
        if (!(pivot > 0.0) || !std::isfinite(pivot))
            throw NotPositiveDefinite("cholesky_factor: nonpositive pivot " + std::to_string(pivot) +
                                          " at index " + std::to_string(j),
                                      static_cast<long>(j));
        const double ljj = std::sqrt(pivot);
        l(j, j) = ljj;
        for (Index i = j + 1; i < n; ++i) {
            double v = a(i, j);
            if (j > 0) v -= l.row(i).head(j).dot(l.row(j).head(j));
            l(i, j) = v / ljj;
        }
    }
    return CholFactor(std::move(l));
}

/// Ridge added by cholesky_factor_ridged on the retry: 1e-8 * trace / dim.
inline double ridge_for(const SymMatrix& a) {
    return 1e-8 * a.trace() / static_cast<double>(a.rows());
}

/// Factors a; on failure retries once with a + ridge_for(a) I.
/// ridge_used, when given, receives the ridge actually applied (0 if none).
inline CholFactor cholesky_factor_ridged(const SymMatrix& a, double* ridge_used = nullptr) {
    if (ridge_used) *ridge_used = 0.0;
    try {
        return cholesky_factor(a);
    } catch (const NotPositiveDefinite&) {
        const double eps = ridge_for(a);
        if (!(eps > 0.0)) throw;
        Matrix repaired = a;
        repaired.diagonal().array() += eps;
        if (ridge_used) *ridge_used = eps;
        return cholesky_factor(repaired);
    }
}

inline Vector cholesky_solve(const CholFactor& f, const Vector& rhs) {
    Vector x = rhs;
    f.solve_in_place(x);
    return x;
}

/// Ascending eigenvalues of a symmetric matrix.
inline Vector sym_eigvals(const SymMatrix& a, Index cap = kDefaultEigCap) {
    require_dims(a.rows() == a.cols(), "sym_eigvals: matrix is not square");
    if (a.rows() > cap)
        throw SizeCap("sym_eigvals: dimension " + std::to_string(a.rows()) + " exceeds cap " +
                      std::to_string(cap));
    if (a.rows() == 0) return Vector();
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw ConvergenceFailure("sym_eigvals: QR iteration did not converge");
    return es.eigenvalues();
}

struct SymEigen {
    Vector values;   // ascending
    Matrix vectors;  // columns
};

inline SymEigen sym_eig(const SymMatrix& a) {
    require_dims(a.rows() == a.cols(), "sym_eig: matrix is not square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    if (es.info() != Eigen::Success) throw ConvergenceFailure("sym_eig: QR iteration did not converge");
    return {es.eigenvalues(), es.eigenvectors()};
}

/// Symmetric A^{-1/2} and A^{1/2} of an SPD matrix via eigendecomposition.
struct SpdRoots {
    Matrix sqrt;
    Matrix inv_sqrt;
};

inline SpdRoots spd_roots(const SymMatrix& a) {
    const SymEigen e = sym_eig(a);
    if (e.values.size() > 0 && !(e.values(0) > 0.0))
        throw NotPositiveDefinite("spd_roots: smallest eigenvalue " + std::to_string(e.values(0)), 0);
    const Vector s = e.values.array().sqrt();
    SpdRoots r;
    r.sqrt = symmetrize(e.vectors * s.asDiagonal() * e.vectors.transpose());
    r.inv_sqrt = symmetrize(e.vectors * s.cwiseInverse().asDiagonal() * e.vectors.transpose());
    return r;
}

// ---------------------------------------------------------------------------
// Preconditioned conjugate gradients
// ---------------------------------------------------------------------------

/// Type-erased symmetric operator on R^dim.
struct LinearOperator {
    Index dim = 0;
    std::function<void(const Vector&, Vector&)> apply;

    void operator()(const Vector& in, Vector& out) const { apply(in, out); }
};

struct IdentityPreconditioner {
    void operator()(const Vector& in, Vector& out) const { out = in; }
};

struct PcgOptions {
    double tol = 0.1;
    int max_iter = kDefaultCgMaxIter;
};

struct PcgResult {
    Matrix solution;
    std::vector<int> iterations;
    std::vector<double> final_relative_residual;
    std::vector<char> max_iter_reached;

    int total_iterations() const {
        int t = 0;
        for (int it : iterations) t += it;
        return t;
    }
    bool any_max_iter() const {
        return std::any_of(max_iter_reached.begin(), max_iter_reached.end(), [](char c) { return c != 0; });
    }
};

namespace detail {

struct PcgColumn {
    Vector x;
    int iterations = 0;
    double rel_residual = 0.0;
    bool max_iter = false;
};

template <class Op, class Precond>
PcgColumn pcg_column(const Op& op, const Precond& precond, const Vector& b, const PcgOptions& opt) {
    const Index n = b.size();
    PcgColumn out;
    out.x = Vector::Zero(n);
    const double bnorm = b.norm();
    if (bnorm == 0.0) return out;

    const double target = opt.tol * bnorm;
    Vector r = b;
    Vector zv(n), p(n), ap(n);
    precond(r, zv);
    p = zv;
    double rho = r.dot(zv);
    double rnorm = bnorm;
    int it = 0;
    while (true) {
        while (rnorm > target && it < opt.max_iter) {
            op(p, ap);
            const double pap = p.dot(ap);
            if (!(pap > 0.0))
                throw BreakdownError("pcg_solve: p^T A p = " + std::to_string(pap) +
                                     " at iteration " + std::to_string(it));
            const double alpha = rho / pap;
            out.x.noalias() += alpha * p;
            r.noalias() -= alpha * ap;
            rnorm = r.norm();
            ++it;
            if (rnorm <= target) break;
            precond(r, zv);
            const double rho_next = r.dot(zv);
            p = zv + (rho_next / rho) * p;
            rho = rho_next;
        }
        // The recurrence residual can drift from b - A x; confirm with the
        // true residual and restart from it when they disagree.
        op(out.x, ap);
        r = b - ap;
        rnorm = r.norm();
        if (rnorm <= target || it >= opt.max_iter) break;
        precond(r, zv);
        p = zv;
        rho = r.dot(zv);
    }
    out.iterations = it;
    out.rel_residual = rnorm / bnorm;
    out.max_iter = rnorm > target;
    return out;
}

} // namespace detail

/// Solves op X = rhs column by column with preconditioner precond
/// (an approximation of op^{-1}). Both callables take (const Vector&, Vector&).
template <class Op, class Precond>
PcgResult pcg_solve(const Op& op, const Precond& precond, const Matrix& rhs, const PcgOptions& opt) {
    if (!(opt.tol > 0.0 && opt.tol < 1.0)) throw ConfigError("pcg_solve: tol must lie in (0, 1)");
    const Index cols = rhs.cols();
    PcgResult res;
    res.solution = Matrix::Zero(rhs.rows(), cols);
    res.iterations.assign(static_cast<std::size_t>(cols), 0);
    res.final_relative_residual.assign(static_cast<std::size_t>(cols), 0.0);
    res.max_iter_reached.assign(static_cast<std::size_t>(cols), 0);
    for (Index j = 0; j < cols; ++j) {
        detail::PcgColumn c = detail::pcg_column(op, precond, rhs.col(j), opt);
        res.solution.col(j) = c.x;
        res.iterations[static_cast<std::size_t>(j)] = c.iterations;
        res.final_relative_residual[static_cast<std::size_t>(j)] = c.rel_residual;
        res.max_iter_reached[static_cast<std::size_t>(j)] = c.max_iter ? 1 : 0;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Random probes
// ---------------------------------------------------------------------------

/// dim x s matrix of independent +-1 entries, deterministic in seed.
inline Matrix rademacher_sample(Index dim, Index s, std::uint64_t seed) {
    if (dim < 1 || s < 1) throw ConfigError("rademacher_sample: dim and s must be >= 1");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
    std::mt19937_64 gen(seq);
    Matrix out(dim, s);
    std::uint64_t bits = 0;
    int left = 0;
    for (Index j = 0; j < s; ++j) {
        for (Index i = 0; i < dim; ++i) {
            if (left == 0) {
                bits = gen();
                left = 64;
            }
            out(i, j) = (bits & 1u) ? 1.0 : -1.0;
            bits >>= 1;
            --left;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// FTRL normalization constant
// ---------------------------------------------------------------------------

/// sum_j (nu + eta * lambda_j)^{-2} - 1
inline double nu_residual(std::span<const double> eigvals, double eta, double nu) {
    double s = 0.0;
    for (double l : eigvals) {
        const double t = nu + eta * l;
        s += 1.0 / (t * t);
    }
    return s - 1.0;
}

/// Unique nu > -eta * min(lambda) with sum_j (nu + eta lambda_j)^{-2} = 1.
///
/// The map nu -> sum is strictly decreasing and convex on the valid half
/// line, blowing up at -eta*min(lambda) and falling below 1 at
/// sqrt(m) - eta*min(lambda). Bisection brackets the root, Newton finishes it.
inline double find_nu(std::span<const double> eigvals, double eta) {
    if (eigvals.empty()) throw ConfigError("find_nu: empty spectrum");
    if (!(eta > 0.0)) throw ConfigError("find_nu: eta must be positive");
    const auto [mn_it, mx_it] = std::minmax_element(eigvals.begin(), eigvals.end());
    const double shift_min = eta * *mn_it;
    const double shift_max = eta * *mx_it;
    const double root_m = std::sqrt(static_cast<double>(eigvals.size()));
    if (shift_min == shift_max) return root_m - shift_min;

    double lo = -shift_min;  // residual -> +inf
    double hi = root_m - shift_min;  // residual <= 0
    auto f = [&](double nu) { return nu_residual(eigvals, eta, nu); };
    if (f(hi) == 0.0) return hi;
    const double scale = std::max(1.0, std::abs(hi));
    for (int i = 0; i < 200 && (hi - lo) > 1e-6 * scale; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) lo = mid; else hi = mid;
    }
    // Newton from the left endpoint increases monotonically to the root for a
    // convex decreasing function; clamp to the bracket regardless.
    double nu = lo;
    if (!(f(nu) > 0.0)) nu = 0.5 * (lo + hi);
    for (int i = 0; i < 100; ++i) {
        double val = -1.0, deriv = 0.0;
        for (double l : eigvals) {
            const double t = nu + eta * l;
            const double inv2 = 1.0 / (t * t);
            val += inv2;
            deriv -= 2.0 * inv2 / t;
        }
        if (val == 0.0) break;
        double next = nu - val / deriv;
        if (!(next > lo && next < hi + 1e-12 * scale)) next = 0.5 * (lo + hi);
        if (val > 0.0) lo = std::max(lo, nu); else hi = std::min(hi, nu);
        if (std::abs(next - nu) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(nu))) {
            nu = next;
            break;
        }
        nu = next;
    }
    return nu;
}

inline double find_nu(const Vector& eigvals, double eta) {
    return find_nu(std::span<const double>(eigvals.data(), static_cast<std::size_t>(eigvals.size())), eta);
}

} // namespace firalkit
