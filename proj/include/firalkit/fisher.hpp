#pragma once

// Fisher-information operators of multiclass logistic regression.
//
// A point x with free-class probabilities h (length K) has Hessian
//   H = [diag(h) - h h^T] (x) (x x^T)          (dtilde x dtilde, dtilde = d K)
// acting on column-stacked vectors v = vec(V), V in R^{d x K}. The fast path
// never materializes H:
//   gamma = V^T x;  alpha = gamma^T h;  gamma = (gamma - alpha) .* h;  H v = vec(x gamma^T)
// Pooled sums run the same schedule for a block of points at once (gamma for
// every point of the block, then one d x K accumulation).

#include <optional>
#include <string>
#include <vector>

#include "firalkit/logistic.hpp"
#include "firalkit/numkit.hpp"
#include "firalkit/parallel.hpp"

namespace firalkit {

inline constexpr Index kDenseHessianCap = 512;

/// K diagonal blocks of size d x d of a dtilde x dtilde matrix.
struct BlockDiag {
    std::vector<Matrix> blocks;

    static BlockDiag zeros(Index count, Index d) {
        return {std::vector<Matrix>(static_cast<std::size_t>(count), Matrix::Zero(d, d))};
    }

    Index count() const { return static_cast<Index>(blocks.size()); }
    Index block_dim() const { return blocks.empty() ? 0 : blocks.front().rows(); }
    Index dim() const { return count() * block_dim(); }
    const Matrix& operator[](Index k) const { return blocks[static_cast<std::size_t>(k)]; }
    Matrix& operator[](Index k) { return blocks[static_cast<std::size_t>(k)]; }

    BlockDiag& operator+=(const BlockDiag& o) {
        for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k] += o.blocks[k];
        return *this;
    }

    Matrix to_dense() const {
        const Index d = block_dim();
        Matrix out = Matrix::Zero(dim(), dim());
        for (Index k = 0; k < count(); ++k) out.block(k * d, k * d, d, d) = (*this)[k];
        return out;
    }

    /// Extracts the K diagonal d x d blocks of a dense matrix.
    static BlockDiag from_dense(const Matrix& a, Index d) {
        require_dims(a.rows() == a.cols() && d > 0 && a.rows() % d == 0, "BlockDiag::from_dense: bad shape");
        BlockDiag out;
        for (Index k = 0; k < a.rows() / d; ++k) out.blocks.push_back(a.block(k * d, k * d, d, d));
        return out;
    }
};

/// View of a dtilde-vector as the d x K matrix V with vec(V) = v.
inline Eigen::Map<const Matrix> as_columns(const Vector& v, Index d, Index k) {
    require_dims(v.size() == d * k, "StackedVec: length " + std::to_string(v.size()) + " is not d*K");
    return Eigen::Map<const Matrix>(v.data(), d, k);
}

inline Vector stack_columns(const Matrix& cols) {
    return Eigen::Map<const Vector>(cols.data(), cols.size());
}

/// Features, cached probabilities and the labeled / pool partition used by
/// every operator. Rows of the two subsets are gathered into contiguous
/// storage once at construction.
class FisherContext {
public:
    FisherContext(const Matrix& features, const ClassProbTable& probs, std::vector<Index> labeled,
                  std::vector<Index> pool)
        : labeled_(std::move(labeled)), pool_(std::move(pool)) {
        require_dims(probs.size() == features.rows(), "FisherContext: probability table has " +
                                                          std::to_string(probs.size()) + " rows, features have " +
                                                          std::to_string(features.rows()));
        if (probs.free_classes() < 1) throw ConfigError("FisherContext: need K >= 1");
        const Index n = features.rows();
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        auto check = [&](const std::vector<Index>& idx, const char* name) {
            for (Index i : idx) {
                if (i < 0 || i >= n)
                    throw ConfigError(std::string("FisherContext: ") + name + " index " + std::to_string(i) +
                                      " out of range");
                if (seen[static_cast<std::size_t>(i)])
                    throw ConfigError(std::string("FisherContext: index ") + std::to_string(i) +
                                      " repeated or shared between labeled and pool");
                seen[static_cast<std::size_t>(i)] = 1;
            }
        };
        check(labeled_, "labeled");
        check(pool_, "pool");
        gather(features, probs.probs, labeled_, x_lab_, h_lab_);
        gather(features, probs.probs, pool_, x_pool_, h_pool_);
        d_ = features.cols();
        k_ = probs.free_classes();
    }

    /// Builds a context directly from gathered rows (tests, synthetic setups).
    static FisherContext from_rows(const Matrix& x_lab, const Matrix& h_lab, const Matrix& x_pool,
                                   const Matrix& h_pool) {
        require_dims(x_lab.cols() == x_pool.cols() && h_lab.cols() == h_pool.cols() &&
                         x_lab.rows() == h_lab.rows() && x_pool.rows() == h_pool.rows(),
                     "FisherContext::from_rows: inconsistent shapes");
        const Index nl = x_lab.rows(), np = x_pool.rows();
        Matrix x(nl + np, x_pool.cols());
        x << x_lab, x_pool;
        ClassProbTable t;
        t.probs.resize(nl + np, h_pool.cols());
        t.probs << h_lab, h_pool;
        t.last = (1.0 - t.probs.rowwise().sum().array()).matrix();
        t.num_classes = static_cast<int>(h_pool.cols()) + 1;
        std::vector<Index> lab(static_cast<std::size_t>(nl)), pool(static_cast<std::size_t>(np));
        for (Index i = 0; i < nl; ++i) lab[static_cast<std::size_t>(i)] = i;
        for (Index i = 0; i < np; ++i) pool[static_cast<std::size_t>(i)] = nl + i;
        return FisherContext(x, t, std::move(lab), std::move(pool));
    }

    Index d() const { return d_; }
    Index K() const { return k_; }
    Index dim() const { return d_ * k_; }
    Index n_labeled() const { return x_lab_.rows(); }
    Index n_pool() const { return x_pool_.rows(); }

    const Matrix& labeled_x() const { return x_lab_; }
    const Matrix& labeled_h() const { return h_lab_; }
    const Matrix& pool_x() const { return x_pool_; }
    const Matrix& pool_h() const { return h_pool_; }
    const std::vector<Index>& labeled_idx() const { return labeled_; }
    const std::vector<Index>& pool_idx() const { return pool_; }

private:
    static void gather(const Matrix& features, const Matrix& probs, const std::vector<Index>& idx, Matrix& x,
                       Matrix& h) {
        x.resize(static_cast<Index>(idx.size()), features.cols());
        h.resize(static_cast<Index>(idx.size()), probs.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            x.row(static_cast<Index>(r)) = features.row(idx[r]);
            h.row(static_cast<Index>(r)) = probs.row(idx[r]);
        }
    }

    std::vector<Index> labeled_, pool_;
    Matrix x_lab_, h_lab_, x_pool_, h_pool_;
    Index d_ = 0, k_ = 0;
};

// ---------------------------------------------------------------------------
// Single-point operators
// ---------------------------------------------------------------------------

inline Vector hessian_matvec(const Vector& x, const Vector& h, const Vector& v) {
    const Index d = x.size(), k = h.size();
    require_dims(v.size() == d * k, "hessian_matvec: v has length " + std::to_string(v.size()) + ", expected " +
                                        std::to_string(d * k));
    const auto vm = as_columns(v, d, k);
    Vector gamma = vm.transpose() * x;                        // (1)
    const double alpha = gamma.dot(h);                        // (2)
    gamma = (gamma.array() - alpha).cwiseProduct(h.array());  // (3)
    Matrix out = x * gamma.transpose();                       // (4)
    return stack_columns(out);
}

/// Explicit [diag(h) - h h^T] (x) (x x^T). Oracle use only.
inline SymMatrix dense_hessian(const Vector& x, const Vector& h) {
    const Index d = x.size(), k = h.size();
    if (d * k > kDenseHessianCap)
        throw SizeCap("dense_hessian: dtilde = " + std::to_string(d * k) + " exceeds " +
                      std::to_string(kDenseHessianCap));
    const Matrix a = Matrix(h.asDiagonal()) - h * h.transpose();
    const Matrix xx = x * x.transpose();
    Matrix out(d * k, d * k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) out.block(i * d, j * d, d, d) = a(i, j) * xx;
    return out;
}

// ---------------------------------------------------------------------------
// Pooled operators
// ---------------------------------------------------------------------------

namespace detail {

/// sum_i w_i H_i applied to V (d x K); w == nullptr means unit weights.
inline Matrix weighted_hessian_apply(const Matrix& x, const Matrix& h, const Vector* w,
                                     const Eigen::Ref<const Matrix>& v) {
    const Index d = x.cols(), k = h.cols();
    return blocked_sum<Matrix>(x.rows(), Matrix::Zero(d, k), [&](Index lo, Index hi) {
        const Index len = hi - lo;
        const auto xb = x.middleRows(lo, len);
        const auto hb = h.middleRows(lo, len);
        Matrix gamma = xb * v;
        const Vector alpha = gamma.cwiseProduct(hb).rowwise().sum();
        gamma = (gamma.colwise() - alpha).cwiseProduct(hb);
        if (w) gamma = gamma.array().colwise() * w->segment(lo, len).array();
        return Matrix(xb.transpose() * gamma);
    });
}

/// Per-class sums sum_i w_i h_ik (1 - h_ik) x_i x_i^T.
inline BlockDiag weighted_block_sum(const Matrix& x, const Matrix& h, const Vector* w) {
    const Index d = x.cols(), k = h.cols();
    BlockDiag out = blocked_sum<BlockDiag>(x.rows(), BlockDiag::zeros(k, d), [&](Index lo, Index hi) {
        const Index len = hi - lo;
        const auto xb = x.middleRows(lo, len);
        BlockDiag part = BlockDiag::zeros(k, d);
        for (Index c = 0; c < k; ++c) {
            Vector coef = h.col(c).segment(lo, len).array() * (1.0 - h.col(c).segment(lo, len).array());
            if (w) coef.array() *= w->segment(lo, len).array();
            const Matrix scaled = xb.array().colwise() * coef.array();
            part[c].noalias() = xb.transpose() * scaled;
        }
        return part;
    });
    for (Matrix& b : out.blocks) b.triangularView<Eigen::StrictlyUpper>() = b.transpose();
    return out;
}

inline Matrix dense_hessian_sum(const Matrix& x, const Matrix& h, const Vector* w) {
    const Index dim = x.cols() * h.cols();
    if (dim > kDenseHessianCap)
        throw SizeCap("dense oracle: dtilde = " + std::to_string(dim) + " exceeds " + std::to_string(kDenseHessianCap));
    Matrix out = Matrix::Zero(dim, dim);
    for (Index i = 0; i < x.rows(); ++i) {
        const double wi = w ? (*w)(i) : 1.0;
        if (wi != 0.0) out += wi * dense_hessian(x.row(i).transpose(), h.row(i).transpose());
    }
    return out;
}

inline void check_weights(const FisherContext& ctx, const Vector& z) {
    require_dims(z.size() == ctx.n_pool(), "pool weights have length " + std::to_string(z.size()) +
                                               ", pool has " + std::to_string(ctx.n_pool()) + " points");
}

} // namespace detail

/// H_p V for each column of vs (dtilde x s).
inline Matrix hp_apply(const FisherContext& ctx, const Matrix& vs) {
    require_dims(vs.rows() == ctx.dim(), "hp_apply: row count is not dtilde");
    Matrix out(vs.rows(), vs.cols());
    for (Index j = 0; j < vs.cols(); ++j) {
        const Eigen::Map<const Matrix> v(vs.col(j).data(), ctx.d(), ctx.K());
        const Matrix r = detail::weighted_hessian_apply(ctx.pool_x(), ctx.pool_h(), nullptr, v);
        out.col(j) = Eigen::Map<const Vector>(r.data(), r.size());
    }
    return out;
}

inline Vector hp_matvec(const FisherContext& ctx, const Vector& v) {
    return hp_apply(ctx, Matrix(v));
}

/// Sigma_z = H_o + sum_i z_i H_i (pool weights z) as an operator.
class SigmaOperator {
public:
    SigmaOperator(const FisherContext& ctx, Vector z) : ctx_(&ctx), z_(std::move(z)) {
        detail::check_weights(ctx, z_);
    }

    Index dim() const { return ctx_->dim(); }

    void operator()(const Vector& in, Vector& out) const {
        const Eigen::Map<const Matrix> v(in.data(), ctx_->d(), ctx_->K());
        Matrix r = detail::weighted_hessian_apply(ctx_->pool_x(), ctx_->pool_h(), &z_, v);
        if (ctx_->n_labeled() > 0) r += detail::weighted_hessian_apply(ctx_->labeled_x(), ctx_->labeled_h(), nullptr, v);
        out = Eigen::Map<const Vector>(r.data(), r.size());
    }

    Matrix apply(const Matrix& vs) const {
        Matrix out(vs.rows(), vs.cols());
        Vector o;
        for (Index j = 0; j < vs.cols(); ++j) {
            (*this)(vs.col(j), o);
            out.col(j) = o;
        }
        return out;
    }

private:
    const FisherContext* ctx_;
    Vector z_;
};

inline Vector sigma_matvec(const FisherContext& ctx, const Vector& z, const Vector& v) {
    require_dims(v.size() == ctx.dim(), "sigma_matvec: v is not dtilde long");
    Vector out;
    SigmaOperator(ctx, z)(v, out);
    return out;
}

/// H_o restricted to its diagonal blocks.
inline BlockDiag labeled_block_hessians(const FisherContext& ctx) {
    return detail::weighted_block_sum(ctx.labeled_x(), ctx.labeled_h(), nullptr);
}

/// B(Sigma_z): per-class blocks of H_o + sum_i z_i H_i.
inline BlockDiag block_diag_sigma(const FisherContext& ctx, const Vector& z) {
    detail::check_weights(ctx, z);
    BlockDiag out = detail::weighted_block_sum(ctx.pool_x(), ctx.pool_h(), &z);
    if (ctx.n_labeled() > 0) out += labeled_block_hessians(ctx);
    return out;
}

/// Block-diagonal Hessian sum over a subset of pool positions, optionally
/// weighted. Repeated positions contribute once per occurrence.
inline BlockDiag sum_pool_block_hessians(const FisherContext& ctx, const std::vector<Index>& subset,
                                         const std::optional<Vector>& weights = std::nullopt) {
    if (weights) require_dims(weights->size() == static_cast<Index>(subset.size()), "subset weight length mismatch");
    Matrix xs(static_cast<Index>(subset.size()), ctx.d());
    Matrix hs(static_cast<Index>(subset.size()), ctx.K());
    for (std::size_t r = 0; r < subset.size(); ++r) {
        const Index p = subset[r];
        if (p < 0 || p >= ctx.n_pool())
            throw ConfigError("sum_pool_block_hessians: position " + std::to_string(p) + " is not in the pool");
        xs.row(static_cast<Index>(r)) = ctx.pool_x().row(p);
        hs.row(static_cast<Index>(r)) = ctx.pool_h().row(p);
    }
    return detail::weighted_block_sum(xs, hs, weights ? &*weights : nullptr);
}

// ---------------------------------------------------------------------------
// Dense oracles (size-capped)
// ---------------------------------------------------------------------------

inline SymMatrix dense_labeled_hessian(const FisherContext& ctx) {
    return detail::dense_hessian_sum(ctx.labeled_x(), ctx.labeled_h(), nullptr);
}

inline SymMatrix dense_pool_hessian(const FisherContext& ctx) {
    return detail::dense_hessian_sum(ctx.pool_x(), ctx.pool_h(), nullptr);
}

inline SymMatrix dense_sigma(const FisherContext& ctx, const Vector& z) {
    detail::check_weights(ctx, z);
    return detail::dense_hessian_sum(ctx.pool_x(), ctx.pool_h(), &z) + dense_labeled_hessian(ctx);
}

inline SymMatrix dense_pool_point_hessian(const FisherContext& ctx, Index p) {
    return dense_hessian(ctx.pool_x().row(p).transpose(), ctx.pool_h().row(p).transpose());
}

// ---------------------------------------------------------------------------
// Block preconditioner
// ---------------------------------------------------------------------------

/// Applies B(Sigma)^{-1} through per-block Cholesky factors. Blocks that are
/// not numerically SPD are retried with the standard ridge.
class BlockPreconditioner {
public:
    BlockPreconditioner() = default;
    explicit BlockPreconditioner(const BlockDiag& blocks) : d_(blocks.block_dim()) {
        factors_.reserve(blocks.blocks.size());
        for (const Matrix& b : blocks.blocks) {
            double ridge = 0.0;
            try {
                factors_.push_back(cholesky_factor_ridged(b, &ridge));
            } catch (const NotPositiveDefinite& e) {
                throw SingularSigma(std::string("block preconditioner: ") + e.what());
            }
            if (ridge > 0.0) ++ridged_;
        }
    }

    Index dim() const { return d_ * static_cast<Index>(factors_.size()); }
    int ridged_blocks() const { return ridged_; }
    const std::vector<CholFactor>& factors() const { return factors_; }

    void operator()(const Vector& in, Vector& out) const {
        out = in;
        for (std::size_t k = 0; k < factors_.size(); ++k) {
            auto seg = out.segment(static_cast<Index>(k) * d_, d_);
            factors_[k].solve_in_place(seg);
        }
    }

private:
    Index d_ = 0;
    std::vector<CholFactor> factors_;
    int ridged_ = 0;
};

} // namespace firalkit
