#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mavex/encoders.hpp"
#include "mavex/linalg.hpp"

namespace mavex {

// Per-patch scores serve double duty: softmax-pooling weights for the
// category classifier and gate logits for prune().
struct CategoryForward {
  std::vector<double> scores;  // P mask logits
  std::vector<double> attn;    // softmax(scores)
  std::vector<double> pooled;  // attention-weighted patch feature
  std::vector<double> logits;  // C category logits
  std::vector<double> probs;
};

// patch_embeddings: P x d_h (the visual sequence without its CLS row).
inline CategoryForward category_forward(const EncoderParams& params,
                                        const Mat& patch_embeddings) {
  if (params.w_cat.rows < 2) throw std::invalid_argument("need at least 2 categories");
  if (patch_embeddings.cols != params.mask_w.cols)
    throw std::invalid_argument("category_forward: embedding width mismatch");
  const std::size_t P = patch_embeddings.rows;
  CategoryForward f;
  f.scores.resize(P);
  for (std::size_t p = 0; p < P; ++p)
    f.scores[p] = dot(params.mask_w.row(0), patch_embeddings.row(p)) + params.mask_b(0, 0);
  f.attn = softmax(f.scores);
  f.pooled.assign(patch_embeddings.cols, 0.0);
  for (std::size_t p = 0; p < P; ++p) axpy(f.attn[p], patch_embeddings.row(p), f.pooled);
  f.logits = matvec(params.w_cat, f.pooled);
  axpy(1.0, params.b_cat.row(0), f.logits);
  f.probs = softmax(f.logits);
  return f;
}

inline std::vector<double> category_logits(const EncoderParams& params,
                                           const Mat& patch_embeddings) {
  return category_forward(params, patch_embeddings).logits;
}

// Mean cross-entropy over the batch; rows are category logits.
inline double ct_loss(const Mat& logits, const std::vector<int>& categories) {
  if (logits.rows == 0 || logits.rows != categories.size())
    throw std::invalid_argument("ct_loss: logits/categories size mismatch");
  double total = 0.0;
  for (std::size_t n = 0; n < logits.rows; ++n) {
    if (categories[n] < 0 || static_cast<std::size_t>(categories[n]) >= logits.cols)
      throw std::invalid_argument("ct_loss: category id " + std::to_string(categories[n]) +
                                  " out of range");
    const auto probs = softmax(logits.row(n));
    total -= std::log(std::max(probs[static_cast<std::size_t>(categories[n])], 1e-12));
  }
  return total / static_cast<double>(logits.rows);
}

// Accumulates d(scale * ce(sample)) into parameter grads and grad_patches.
inline void category_backward(const EncoderParams& params, const Mat& patch_embeddings,
                              const CategoryForward& f, int category_id, double scale,
                              EncoderParams& grads, Mat& grad_patches) {
  const std::size_t P = patch_embeddings.rows;
  const std::size_t C = f.probs.size();
  std::vector<double> grad_logits(C, 0.0);
  const auto c = static_cast<std::size_t>(category_id);
  if (f.probs[c] > 1e-12) {
    for (std::size_t k = 0; k < C; ++k) grad_logits[k] = scale * f.probs[k];
    grad_logits[c] -= scale;
  }
  add_outer(grads.w_cat, grad_logits, f.pooled);
  axpy(1.0, grad_logits, grads.b_cat.row(0));
  const auto grad_pooled = matvec_t(params.w_cat, grad_logits);

  std::vector<double> grad_attn(P);
  for (std::size_t p = 0; p < P; ++p) {
    grad_attn[p] = dot(grad_pooled, patch_embeddings.row(p));
    axpy(f.attn[p], grad_pooled, grad_patches.row(p));
  }
  const auto grad_scores = softmax_backward(f.attn, grad_attn);
  for (std::size_t p = 0; p < P; ++p) {
    axpy(grad_scores[p], patch_embeddings.row(p), grads.mask_w.row(0));
    grads.mask_b(0, 0) += grad_scores[p];
    axpy(grad_scores[p], params.mask_w.row(0), grad_patches.row(p));
  }
}

// Gates patch rows by sigmoid(score); the CLS row passes through unscaled.
inline Mat prune(const Mat& vseq, std::span<const double> scores) {
  if (vseq.rows != scores.size() + 1)
    throw std::invalid_argument("prune: mask length " + std::to_string(scores.size()) +
                                " does not match " + std::to_string(vseq.rows) +
                                "-row sequence");
  Mat out = vseq;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    const double g = sigmoid(scores[p]);
    for (std::size_t j = 0; j < vseq.cols; ++j) out(p + 1, j) *= g;
  }
  return out;
}

inline void prune_backward(const Mat& vseq, std::span<const double> scores, const Mat& grad_out,
                           Mat& grad_vseq, std::span<double> grad_scores) {
  axpy(1.0, grad_out.row(0), grad_vseq.row(0));
  for (std::size_t p = 0; p < scores.size(); ++p) {
    const double g = sigmoid(scores[p]);
    axpy(g, grad_out.row(p + 1), grad_vseq.row(p + 1));
    grad_scores[p] += g * (1.0 - g) * dot(grad_out.row(p + 1), vseq.row(p + 1));
  }
}

}  // namespace mavex
