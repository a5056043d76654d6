#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mavex/linalg.hpp"

namespace mavex {

// Candidate-set layout everywhere in this module: the current batch's
// momentum CLS features first (one-hot target at the own batch index),
// queue contents after, so rows have length B + fill.

constexpr double kLogEps = 1e-12;

inline std::vector<double> scaled_softmax_sim(std::span<const double> cls, const Mat& candidates,
                                              double tau) {
  if (candidates.rows == 0) throw std::invalid_argument("empty candidate set");
  if (candidates.cols != cls.size())
    throw std::invalid_argument("candidate width does not match the CLS vector");
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::vector<double> logits(candidates.rows);
  for (std::size_t i = 0; i < candidates.rows; ++i) logits[i] = dot(candidates.row(i), cls) / tau;
  return softmax(logits);
}

// Momentum pseudo-similarity row: softmax over candidate dot products.
inline std::vector<double> pseudo_similarity(std::span<const double> momentum_cls,
                                             const Mat& candidates, double tau) {
  return scaled_softmax_sim(momentum_cls, candidates, tau);
}

// Predicted matching row: identical arithmetic, evaluated with the online
// CLS against the opposite-modality candidates.
inline std::vector<double> matching_distribution(std::span<const double> online_cls,
                                                 const Mat& candidates, double tau) {
  return scaled_softmax_sim(online_cls, candidates, tau);
}

inline std::vector<double> smooth_targets(std::span<const double> p_onehot,
                                          std::span<const double> q, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0,1]");
  if (p_onehot.size() != q.size()) throw std::invalid_argument("smooth_targets: length mismatch");
  std::vector<double> out(p_onehot.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (1.0 - alpha) * p_onehot[i] + alpha * q[i];
  return out;
}

// Cross-entropy of one direction, clamped so a cold-start zero never NaNs.
inline double smoothed_cross_entropy(const Mat& targets, const Mat& predicted) {
  if (!targets.same_shape(predicted))
    throw std::invalid_argument("contrastive_loss: row shape mismatch");
  if (targets.rows == 0) throw std::invalid_argument("contrastive_loss: no rows");
  double total = 0.0;
  for (std::size_t n = 0; n < targets.rows; ++n)
    for (std::size_t k = 0; k < targets.cols; ++k)
      total -= targets(n, k) * std::log(std::max(predicted(n, k), kLogEps));
  return total / static_cast<double>(targets.rows);
}

inline double contrastive_loss(const Mat& targets_i2t, const Mat& predicted_i2t,
                               const Mat& targets_t2i, const Mat& predicted_t2i) {
  return 0.5 * (smoothed_cross_entropy(targets_i2t, predicted_i2t) +
                smoothed_cross_entropy(targets_t2i, predicted_t2i));
}

struct AlignmentTargets {
  Mat p_i2t, p_t2i;    // one-hot rows
  Mat q_i2t, q_t2i;    // momentum pseudo-similarities
  Mat pt_i2t, pt_t2i;  // smoothed targets
  Mat d_i2t, d_t2i;    // predicted matching rows
  double alpha = 0.0;
  double tau = 0.0;
};

struct ScLossResult {
  double loss = 0.0;
  Mat grad_visual_cls;   // B x d_h, d L_sc / d (online normalized visual CLS)
  Mat grad_textual_cls;  // B x d_h
  AlignmentTargets targets;
};

namespace detail {

// dL/dz for L = -(1/N) sum_k p~_k log(max(d_k, eps)) with d = softmax(z):
// dL/dz_j = weight * (d_j * S - p~_j * [d_j > eps]),  S = sum_{d_k > eps} p~_k.
inline void clamped_ce_grad_to_cls(std::span<const double> ptilde, std::span<const double> d,
                                   const Mat& candidates, double tau, double weight,
                                   std::span<double> grad_cls) {
  double support = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d[k] > kLogEps) support += ptilde[k];
  for (std::size_t j = 0; j < d.size(); ++j) {
    const double gz = weight * (d[j] * support - (d[j] > kLogEps ? ptilde[j] : 0.0));
    axpy(gz / tau, candidates.row(j), grad_cls);
  }
}

}  // namespace detail

// Batch-level S1 loss. Rows of online_*/momentum_* are unit-normalized CLS
// features; queue_* are the queue snapshots (possibly empty). Gradients are
// with respect to the online rows only; the momentum path is constant.
inline ScLossResult sc_loss(const Mat& online_visual, const Mat& online_textual,
                            const Mat& momentum_visual, const Mat& momentum_textual,
                            const Mat& queue_visual, const Mat& queue_textual, double tau,
                            double alpha, bool with_grad) {
  const std::size_t B = online_visual.rows;
  const std::size_t d_h = online_visual.cols;
  if (B < 2) throw std::invalid_argument("sc_loss: need a batch of at least 2");
  if (online_textual.rows != B || momentum_visual.rows != B || momentum_textual.rows != B)
    throw std::invalid_argument("sc_loss: batch size mismatch");

  auto candidates = [&](const Mat& batch, const Mat& queue) {
    Mat all(B + queue.rows, d_h);
    for (std::size_t i = 0; i < B; ++i)
      std::copy(batch.row(i).begin(), batch.row(i).end(), all.row(i).begin());
    for (std::size_t i = 0; i < queue.rows; ++i)
      std::copy(queue.row(i).begin(), queue.row(i).end(), all.row(B + i).begin());
    return all;
  };
  const Mat cand_t = candidates(momentum_textual, queue_textual);
  const Mat cand_v = candidates(momentum_visual, queue_visual);
  const std::size_t K = cand_t.rows;

  ScLossResult r;
  r.targets.alpha = alpha;
  r.targets.tau = tau;
  r.targets.p_i2t = Mat(B, K);
  r.targets.p_t2i = Mat(B, K);
  r.targets.q_i2t = Mat(B, K);
  r.targets.q_t2i = Mat(B, K);
  r.targets.pt_i2t = Mat(B, K);
  r.targets.pt_t2i = Mat(B, K);
  r.targets.d_i2t = Mat(B, K);
  r.targets.d_t2i = Mat(B, K);

  for (std::size_t n = 0; n < B; ++n) {
    r.targets.p_i2t(n, n) = 1.0;
    r.targets.p_t2i(n, n) = 1.0;
    auto fill_row = [](Mat& m, std::size_t row, const std::vector<double>& v) {
      std::copy(v.begin(), v.end(), m.row(row).begin());
    };
    fill_row(r.targets.q_i2t, n, pseudo_similarity(momentum_visual.row(n), cand_t, tau));
    fill_row(r.targets.q_t2i, n, pseudo_similarity(momentum_textual.row(n), cand_v, tau));
    fill_row(r.targets.pt_i2t, n,
             smooth_targets(r.targets.p_i2t.row(n), r.targets.q_i2t.row(n), alpha));
    fill_row(r.targets.pt_t2i, n,
             smooth_targets(r.targets.p_t2i.row(n), r.targets.q_t2i.row(n), alpha));
    fill_row(r.targets.d_i2t, n, matching_distribution(online_visual.row(n), cand_t, tau));
    fill_row(r.targets.d_t2i, n, matching_distribution(online_textual.row(n), cand_v, tau));
  }

  r.loss = contrastive_loss(r.targets.pt_i2t, r.targets.d_i2t, r.targets.pt_t2i, r.targets.d_t2i);

  if (with_grad) {
    r.grad_visual_cls = Mat(B, d_h);
    r.grad_textual_cls = Mat(B, d_h);
    const double weight = 0.5 / static_cast<double>(B);
    for (std::size_t n = 0; n < B; ++n) {
      detail::clamped_ce_grad_to_cls(r.targets.pt_i2t.row(n), r.targets.d_i2t.row(n), cand_t, tau,
                                     weight, r.grad_visual_cls.row(n));
      detail::clamped_ce_grad_to_cls(r.targets.pt_t2i.row(n), r.targets.d_t2i.row(n), cand_v, tau,
                                     weight, r.grad_textual_cls.row(n));
    }
  }
  return r;
}

}  // namespace mavex
