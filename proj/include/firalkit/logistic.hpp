#pragma once

// Multiclass logistic regression with a pinned reference class.
//
// With c classes the model carries K = c-1 weight columns; class c (index
// c-1 here, labels are 0-based) has an implicit zero logit:
//   p(y=k|x) = exp(theta_k^T x) / (1 + sum_l exp(theta_l^T x)),  k < K
//   p(y=c|x) = 1 / (1 + sum_l exp(theta_l^T x))

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "firalkit/numkit.hpp"

namespace firalkit {

struct ModelWeights {
    Matrix theta;  // d x K
    int num_classes = 2;

    static ModelWeights zeros(Index d, int num_classes) {
        if (num_classes < 2) throw ConfigError("ModelWeights: need at least two classes");
        return {Matrix::Zero(d, num_classes - 1), num_classes};
    }
    Index dim() const { return theta.rows(); }
    Index free_classes() const { return theta.cols(); }
};

/// Per-point probabilities of the K free classes; the reference class gets
/// the remainder, kept separately so it is not lost to cancellation.
struct ClassProbTable {
    Matrix probs;  // n x K
    Vector last;   // n, probability of the reference class
    int num_classes = 2;

    Index size() const { return probs.rows(); }
    Index free_classes() const { return probs.cols(); }
};

struct ClassProbs {
    Vector h;
    double last = 0.0;
};

namespace detail {

using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;
using ConstRowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

/// Stable probabilities from logits (the reference logit 0 is implicit).
inline void probs_from_logits(const ConstRowRef& logits, RowRef h, double& last) {
    const double m = std::max(0.0, logits.size() ? logits.maxCoeff() : 0.0);
    double denom = std::exp(-m);
    for (Index k = 0; k < logits.size(); ++k) {
        h(k) = std::exp(logits(k) - m);
        denom += h(k);
    }
    h /= denom;
    last = std::exp(-m) / denom;
}

} // namespace detail

inline ClassProbs class_probs(const ModelWeights& w, const Vector& x) {
    require_dims(x.size() == w.dim(), "class_probs: feature length does not match weights");
    const Eigen::RowVectorXd logits = (w.theta.transpose() * x).transpose();
    Eigen::RowVectorXd h(w.free_classes());
    double last = 0.0;
    detail::probs_from_logits(logits, h, last);
    return {h.transpose(), last};
}

/// Probabilities for every row of features (n x d).
inline ClassProbTable prob_table(const ModelWeights& w, const Matrix& features) {
    require_dims(features.cols() == w.dim(), "prob_table: feature width does not match weights");
    ClassProbTable t;
    t.num_classes = w.num_classes;
    const Matrix logits = features * w.theta;
    t.probs.resize(features.rows(), w.free_classes());
    t.last.resize(features.rows());
    parallel_for(features.rows(), [&](Index i) {
        double last = 0.0;
        detail::probs_from_logits(logits.row(i), t.probs.row(i), last);
        t.last(i) = last;
    });
    return t;
}

/// Argmax class per row; ties go to the lowest class index.
inline std::vector<int> predict(const ModelWeights& w, const Matrix& features) {
    require_dims(features.cols() == w.dim(), "predict: feature width does not match weights");
    const Matrix logits = features * w.theta;
    std::vector<int> out(static_cast<std::size_t>(features.rows()));
    for (Index i = 0; i < logits.rows(); ++i) {
        int best = 0;
        double best_val = w.free_classes() > 0 ? logits(i, 0) : 0.0;
        for (Index k = 1; k < logits.cols(); ++k)
            if (logits(i, k) > best_val) {
                best_val = logits(i, k);
                best = static_cast<int>(k);
            }
        if (0.0 > best_val) best = w.num_classes - 1;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

inline double predict_accuracy(const ModelWeights& w, const Matrix& features, const std::vector<int>& labels) {
    require_dims(static_cast<Index>(labels.size()) == features.rows(), "predict_accuracy: label count mismatch");
    if (labels.empty()) return 0.0;
    const std::vector<int> pred = predict(w, features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// sum_c p_c log p_c over all c classes (<= 0; more negative = more uncertain).
inline Vector entropy_scores(const ClassProbTable& t) {
    auto plogp = [](double p) { return p > 0.0 ? p * std::log(p) : 0.0; };
    Vector s(t.size());
    for (Index i = 0; i < t.size(); ++i) {
        double acc = plogp(t.last(i));
        for (Index k = 0; k < t.free_classes(); ++k) acc += plogp(t.probs(i, k));
        s(i) = acc;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct FitOptions {
    double l2 = 1.0;
    int max_iter = 5000;
    /// Stop once ||grad|| <= grad_tol * n.
    double grad_tol = 1e-6;
};

struct FitResult {
    ModelWeights weights;
    bool degenerate_labels = false;
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
    std::vector<double> loss_history;
};

namespace detail {

inline double log1p_sum_exp(const ConstRowRef& logits) {
    const double m = std::max(0.0, logits.size() ? logits.maxCoeff() : 0.0);
    return m + std::log(std::exp(-m) + (logits.array() - m).exp().sum());
}

} // namespace detail

/// L2-regularized negative log-likelihood sum_i -log p(y_i|x_i) + l2/2 ||theta||^2.
inline double logistic_loss(const Matrix& theta, const Matrix& x, const std::vector<int>& y, double l2) {
    const Matrix logits = x * theta;
    const Index k_free = theta.cols();
    double loss = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
        loss += detail::log1p_sum_exp(logits.row(i));
        const int yi = y[static_cast<std::size_t>(i)];
        if (yi < k_free) loss -= logits(i, yi);
    }
    return loss + 0.5 * l2 * theta.squaredNorm();
}

inline Matrix logistic_gradient(const Matrix& theta, const Matrix& x, const std::vector<int>& y, double l2) {
    const Matrix logits = x * theta;
    Matrix resid(x.rows(), theta.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        double last = 0.0;
        detail::probs_from_logits(logits.row(i), resid.row(i), last);
        const int yi = y[static_cast<std::size_t>(i)];
        if (yi < theta.cols()) resid(i, yi) -= 1.0;
    }
    return x.transpose() * resid + l2 * theta;
}

/// Full-batch gradient descent with Armijo backtracking.
inline FitResult fit(const Matrix& x, const std::vector<int>& labels, int num_classes, const FitOptions& opt = {}) {
    if (x.rows() < 1) throw ConfigError("fit: need at least one labeled example");
    require_dims(static_cast<Index>(labels.size()) == x.rows(), "fit: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw ConfigError("fit: label " + std::to_string(y) + " out of range");

    FitResult res;
    res.weights = ModelWeights::zeros(x.cols(), num_classes);
    std::vector<char> present(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) present[static_cast<std::size_t>(y)] = 1;
    int distinct = 0;
    for (char p : present) distinct += p;
    if (distinct < 2) {
        res.degenerate_labels = true;
        return res;
    }

    Matrix& theta = res.weights.theta;
    const double tol = opt.grad_tol * static_cast<double>(x.rows());
    double loss = logistic_loss(theta, x, labels, opt.l2);
    res.loss_history.push_back(loss);
    double step = 1.0;
    for (int it = 0; it < opt.max_iter; ++it) {
        const Matrix g = logistic_gradient(theta, x, labels, opt.l2);
        const double gsq = g.squaredNorm();
        res.grad_norm = std::sqrt(gsq);
        if (res.grad_norm <= tol) {
            res.converged = true;
            break;
        }
        step = std::min(step * 2.0, 1e6);
        Matrix trial;
        double trial_loss = loss;
        for (int bt = 0; bt < 60; ++bt) {
            trial = theta - step * g;
            trial_loss = logistic_loss(trial, x, labels, opt.l2);
            if (trial_loss <= loss - 0.5 * step * gsq) break;
            step *= 0.5;
        }
        if (!(trial_loss <= loss)) break;  // no descent at machine precision
        theta = std::move(trial);
        loss = trial_loss;
        res.loss_history.push_back(loss);
        res.iterations = it + 1;
    }
    if (!res.converged) {
        res.grad_norm = logistic_gradient(theta, x, labels, opt.l2).norm();
        res.converged = res.grad_norm <= tol;
    }
    return res;
}

} // namespace firalkit
