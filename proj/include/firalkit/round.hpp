#pragma once

// ROUND step: turn the relaxed weights z_diamond into b concrete picks by
// follow-the-regularized-leader regret minimization.
//
// round_exact is the dense reference (all dtilde x dtilde matrices explicit,
// Sigma_diamond^{+-1/2} by eigendecomposition). round_diag keeps only the
// per-class d x d blocks of every Hessian, where the candidate objective
//   r_i = Tr[(B_t + eta H_i)^{-1} Sigma_diamond]
// reduces via Sherman-Morrison to r_i = Tr[B_t^{-1} Sigma_diamond] - eta score_i with
//   score_i = sum_k w_ik (x^T Binv_k S_k Binv_k x) / (1 + eta w_ik x^T Binv_k x),
//   w_ik = h_ik (1 - h_ik),  S_k = (Sigma_diamond)_k,
// so the pick is argmax score_i.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "firalkit/fisher.hpp"
#include "firalkit/numkit.hpp"

namespace firalkit {

inline constexpr Index kDenseRoundCap = 128;

/// (A + gamma x x^T)^{-1} from a_inv = A^{-1}.
inline SymMatrix sm_block_update(const SymMatrix& a_inv, double gamma, const Vector& x) {
    require_dims(a_inv.rows() == a_inv.cols() && a_inv.rows() == x.size(), "sm_block_update: shape mismatch");
    if (gamma == 0.0) return a_inv;
    const Vector u = a_inv * x;
    const double denom = 1.0 + gamma * x.dot(u);
    if (!(denom > 0.0))
        throw DenominatorNonpositive("sm_block_update: 1 + gamma x^T A^{-1} x = " + std::to_string(denom));
    return symmetrize(a_inv - (gamma / denom) * u * u.transpose());
}

struct RoundOptions {
    /// Let a pool point be picked more than once.
    bool allow_repeats = false;
};

/// eta grid {0.1, 0.3, 1, 3, 10, 30} * sqrt(dtilde) / b.
inline std::vector<double> default_eta_grid(Index dim, Index b) {
    const double base = std::sqrt(static_cast<double>(dim)) / static_cast<double>(b);
    return {0.1 * base, 0.3 * base, base, 3 * base, 10 * base, 30 * base};
}

struct RoundConfig {
    std::vector<double> eta_grid;  // empty: default_eta_grid
    Index b = 1;
    bool allow_repeats = false;
};

/// Mutable state of the diagonal ROUND loop.
struct RoundState {
    std::vector<Index> selected;
    BlockDiag b_inv;          // (B_t)_k^{-1}
    BlockDiag h_acc;          // accumulated (H)_k
    BlockDiag sigma_diamond;  // (Sigma_diamond)_k
    BlockDiag sigma_inv_sqrt;
    BlockDiag h_o;            // (H_o)_k
    double eta = 1.0;
    double nu = 0.0;
    Index b = 1;
};

/// One observation per selection, taken after scoring and before the state
/// absorbs the pick.
struct RoundStep {
    int t = 0;
    const RoundState* state = nullptr;
    const Vector* scores = nullptr;
    const std::vector<char>* eligible = nullptr;
    Index pick = -1;
};

using RoundObserver = std::function<void(const RoundStep&)>;

struct RoundResult {
    std::vector<Index> selected;  // pool positions, in pick order
    BlockDiag h_acc;
    std::vector<double> nu;           // nu_{t+1} after each pick
    std::vector<double> nu_residual;  // sum (nu + eta lambda)^{-2} - 1 after each pick
    double eta = 0.0;
};

namespace detail {

inline Matrix spd_repaired(const Matrix& a) {
    double ridge = 0.0;
    try {
        (void)cholesky_factor_ridged(a, &ridge);
    } catch (const NotPositiveDefinite& e) {
        throw SingularSigma(std::string("Sigma_diamond block is singular: ") + e.what());
    }
    if (ridge == 0.0) return a;
    Matrix r = a;
    r.diagonal().array() += ridge;
    return r;
}

inline Matrix spd_inverse(const Matrix& a) {
    try {
        return cholesky_factor_ridged(a).inverse();
    } catch (const NotPositiveDefinite& e) {
        throw SingularSigma(std::string("B_t block is singular: ") + e.what());
    }
}

/// Lowest-index argmax of scores over eligible entries; -1 if none.
inline Index argmax_eligible(const Vector& scores, const std::vector<char>& eligible) {
    Index best = -1;
    for (Index i = 0; i < scores.size(); ++i) {
        if (!eligible[static_cast<std::size_t>(i)]) continue;
        if (best < 0 || scores(i) > scores(best)) best = i;
    }
    return best;
}

inline void rebuild_b_inv(RoundState& st) {
    const double eb = st.eta / static_cast<double>(st.b);
    for (Index k = 0; k < st.b_inv.count(); ++k)
        st.b_inv[k] = spd_inverse(st.nu * st.sigma_diamond[k] + st.eta * st.h_acc[k] + eb * st.h_o[k]);
}

} // namespace detail

/// Builds the t = 1 state: (B_1)_k^{-1} = [sqrt(dtilde) S_k + (eta/b)(H_o)_k]^{-1}.
inline RoundState round_initial_state(const FisherContext& ctx, const Vector& z_diamond, Index b, double eta) {
    if (!(eta > 0.0)) throw ConfigError("round: eta must be positive");
    if (b < 1) throw ConfigError("round: budget must be >= 1");
    RoundState st;
    st.eta = eta;
    st.b = b;
    st.sigma_diamond = block_diag_sigma(ctx, z_diamond);
    st.sigma_inv_sqrt = st.sigma_diamond;
    for (Index k = 0; k < ctx.K(); ++k) {
        st.sigma_diamond[k] = detail::spd_repaired(symmetrize(st.sigma_diamond[k]));
        st.sigma_inv_sqrt[k] = spd_roots(st.sigma_diamond[k]).inv_sqrt;
    }
    st.h_o = labeled_block_hessians(ctx);
    st.h_acc = BlockDiag::zeros(ctx.K(), ctx.d());
    st.b_inv = BlockDiag::zeros(ctx.K(), ctx.d());
    st.nu = std::sqrt(static_cast<double>(ctx.dim()));
    detail::rebuild_b_inv(st);
    return st;
}

/// Candidate scores for every pool point under the current state.
inline Vector prop1_scores(const RoundState& st, const FisherContext& ctx) {
    const Matrix& x = ctx.pool_x();
    const Matrix& h = ctx.pool_h();
    Vector score = Vector::Zero(ctx.n_pool());
    for (Index k = 0; k < ctx.K(); ++k) {
        const Matrix u = x * st.b_inv[k];  // rows: (Binv_k x_i)^T
        const Vector num = (u * st.sigma_diamond[k]).cwiseProduct(u).rowwise().sum();
        const Vector quad = u.cwiseProduct(x).rowwise().sum();
        const Vector w = h.col(k).array() * (1.0 - h.col(k).array());
        score.array() += w.array() * num.array() / (1.0 + st.eta * w.array() * quad.array());
    }
    return score;
}

/// Diagonal ROUND: b picks, each followed by the (H)_k accumulation, the
/// transformed block spectra, a new nu and a rebuild of (B_t)_k^{-1}.
inline RoundResult round_diag(const FisherContext& ctx, const Vector& z_diamond, Index b, double eta,
                              const RoundOptions& opt = {}, const RoundObserver& observer = {}) {
    if (!opt.allow_repeats && b > ctx.n_pool())
        throw ConfigError("round_diag: budget " + std::to_string(b) + " exceeds pool size " +
                          std::to_string(ctx.n_pool()));
    RoundState st = round_initial_state(ctx, z_diamond, b, eta);
    std::vector<char> eligible(static_cast<std::size_t>(ctx.n_pool()), 1);
    RoundResult res;
    res.eta = eta;
    const double inv_b = 1.0 / static_cast<double>(b);
    std::vector<double> spectrum(static_cast<std::size_t>(ctx.dim()));
    for (Index t = 0; t < b; ++t) {
        const Vector scores = prop1_scores(st, ctx);
        const Index pick = detail::argmax_eligible(scores, eligible);
        if (pick < 0) throw ConfigError("round_diag: no eligible candidates left");
        if (observer) observer(RoundStep{static_cast<int>(t), &st, &scores, &eligible, pick});

        const Vector xp = ctx.pool_x().row(pick).transpose();
        for (Index k = 0; k < ctx.K(); ++k) {
            const double w = ctx.pool_h()(pick, k) * (1.0 - ctx.pool_h()(pick, k));
            st.h_acc[k] += inv_b * st.h_o[k] + w * (xp * xp.transpose());
            const Matrix transformed = symmetrize(st.sigma_inv_sqrt[k] * st.h_acc[k] * st.sigma_inv_sqrt[k]);
            const Vector lam = sym_eigvals(transformed);
            std::copy(lam.data(), lam.data() + lam.size(), spectrum.begin() + k * ctx.d());
        }
        st.nu = find_nu(spectrum, eta);
        res.nu.push_back(st.nu);
        res.nu_residual.push_back(nu_residual(spectrum, eta, st.nu));
        detail::rebuild_b_inv(st);

        st.selected.push_back(pick);
        if (!opt.allow_repeats) eligible[static_cast<std::size_t>(pick)] = 0;
    }
    res.selected = st.selected;
    res.h_acc = st.h_acc;
    return res;
}

// ---------------------------------------------------------------------------
// Dense reference
// ---------------------------------------------------------------------------

struct ExactRoundOptions {
    bool allow_repeats = false;
    /// Keep only the per-class diagonal blocks of every Hessian.
    bool block_truncated = false;
};

struct ExactRoundResult {
    std::vector<Index> selected;
    std::vector<double> nu;
    std::vector<double> trace_a_inv_sq_residual;  // Tr(A_{t+1}^{-2}) - 1 after each pick
    std::vector<double> nu_residual;
};

namespace detail {

inline Matrix point_hessian(const FisherContext& ctx, Index p, bool truncated) {
    if (!truncated) return dense_pool_point_hessian(ctx, p);
    const Index d = ctx.d();
    const Vector x = ctx.pool_x().row(p).transpose();
    Matrix out = Matrix::Zero(ctx.dim(), ctx.dim());
    for (Index k = 0; k < ctx.K(); ++k) {
        const double hk = ctx.pool_h()(p, k);
        out.block(k * d, k * d, d, d) = hk * (1.0 - hk) * (x * x.transpose());
    }
    return out;
}

/// Tr(M^{-1}) for SPD M.
inline double trace_inverse(const Matrix& m) {
    CholFactor f;
    try {
        f = cholesky_factor(m);
    } catch (const NotPositiveDefinite& e) {
        throw SingularSigma(std::string("round_exact: candidate matrix not SPD: ") + e.what());
    }
    Matrix linv = Matrix::Identity(m.rows(), m.cols());
    f.lower().triangularView<Eigen::Lower>().solveInPlace(linv);
    return linv.squaredNorm();
}

} // namespace detail

inline ExactRoundResult round_exact(const FisherContext& ctx, const Vector& z_diamond, Index b, double eta,
                                    const ExactRoundOptions& opt = {}) {
    if (ctx.dim() > kDenseRoundCap)
        throw SizeCap("round_exact: dtilde = " + std::to_string(ctx.dim()) + " exceeds " + std::to_string(kDenseRoundCap));
    if (!(eta > 0.0)) throw ConfigError("round_exact: eta must be positive");
    if (b < 1) throw ConfigError("round_exact: budget must be >= 1");
    if (!opt.allow_repeats && b > ctx.n_pool())
        throw ConfigError("round_exact: budget exceeds pool size");
    const Index m = ctx.dim();
    const Index n = ctx.n_pool();

    Matrix sigma, h_o;
    if (opt.block_truncated) {
        BlockDiag s = block_diag_sigma(ctx, z_diamond);
        for (Index k = 0; k < s.count(); ++k) s[k] = detail::spd_repaired(symmetrize(s[k]));
        sigma = s.to_dense();
        h_o = labeled_block_hessians(ctx).to_dense();
    } else {
        sigma = detail::spd_repaired(symmetrize(dense_sigma(ctx, z_diamond)));
        h_o = dense_labeled_hessian(ctx);
    }
    const Matrix r = spd_roots(sigma).inv_sqrt;
    const Matrix ho_t = symmetrize(r * h_o * r);
    std::vector<Matrix> hi_t(static_cast<std::size_t>(n));
    for (Index p = 0; p < n; ++p) hi_t[static_cast<std::size_t>(p)] = symmetrize(r * detail::point_hessian(ctx, p, opt.block_truncated) * r);

    Matrix a = std::sqrt(static_cast<double>(m)) * Matrix::Identity(m, m);
    Matrix h_t = Matrix::Zero(m, m);
    std::vector<char> eligible(static_cast<std::size_t>(n), 1);
    const double eb = eta / static_cast<double>(b);
    ExactRoundResult res;
    for (Index t = 0; t < b; ++t) {
        Index best = -1;
        double best_val = std::numeric_limits<double>::infinity();
        const Matrix base = a + eb * ho_t;
        for (Index p = 0; p < n; ++p) {
            if (!eligible[static_cast<std::size_t>(p)]) continue;
            const double val = detail::trace_inverse(base + eta * hi_t[static_cast<std::size_t>(p)]);
            if (best < 0 || val < best_val) {
                best = p;
                best_val = val;
            }
        }
        if (best < 0) throw ConfigError("round_exact: no eligible candidates left");
        h_t += ho_t / static_cast<double>(b) + hi_t[static_cast<std::size_t>(best)];
        const SymEigen e = sym_eig(symmetrize(eta * h_t));
        const double nu = find_nu(e.values, 1.0);
        a = symmetrize(e.vectors * (e.values.array() + nu).matrix().asDiagonal() * e.vectors.transpose());
        const Matrix a_inv = cholesky_factor(a).inverse();
        res.nu.push_back(nu);
        res.nu_residual.push_back(nu_residual(std::span<const double>(e.values.data(), static_cast<std::size_t>(m)), 1.0, nu));
        res.trace_a_inv_sq_residual.push_back((a_inv * a_inv).trace() - 1.0);
        res.selected.push_back(best);
        if (!opt.allow_repeats) eligible[static_cast<std::size_t>(best)] = 0;
    }
    return res;
}

// ---------------------------------------------------------------------------
// eta selection
// ---------------------------------------------------------------------------

struct EtaTuneResult {
    double eta = 0.0;
    std::size_t best_index = 0;
    std::vector<double> grid;
    std::vector<double> min_block_eigenvalue;  // per grid point
    std::vector<std::vector<Index>> selections;
};

/// Smallest eigenvalue over all blocks of an accumulated block Hessian.
inline double min_block_eigenvalue(const BlockDiag& blocks) {
    double mn = std::numeric_limits<double>::infinity();
    for (const Matrix& blk : blocks.blocks) mn = std::min(mn, sym_eigvals(symmetrize(blk))(0));
    return mn;
}

/// Runs round_diag for each grid eta and keeps the one whose accumulated
/// (H)_k has the largest min_k lambda_min; ties go to the smaller eta.
inline EtaTuneResult tune_eta(const FisherContext& ctx, const Vector& z_diamond, const RoundConfig& cfg) {
    EtaTuneResult res;
    res.grid = cfg.eta_grid.empty() ? default_eta_grid(ctx.dim(), cfg.b) : cfg.eta_grid;
    if (res.grid.empty()) throw ConfigError("tune_eta: empty eta grid");
    RoundOptions opt;
    opt.allow_repeats = cfg.allow_repeats;
    bool have = false;
    double best = 0.0;
    for (std::size_t g = 0; g < res.grid.size(); ++g) {
        const RoundResult r = round_diag(ctx, z_diamond, cfg.b, res.grid[g], opt);
        const double lam = min_block_eigenvalue(r.h_acc);
        res.min_block_eigenvalue.push_back(lam);
        res.selections.push_back(r.selected);
        const bool better = !have || lam > best || (lam == best && res.grid[g] < res.grid[res.best_index]);
        if (better) {
            have = true;
            best = lam;
            res.best_index = g;
        }
    }
    res.eta = res.grid[res.best_index];
    return res;
}

} // namespace firalkit
