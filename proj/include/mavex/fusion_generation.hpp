#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mavex/linalg.hpp"
#include "mavex/model.hpp"
#include "mavex/vocab.hpp"

namespace mavex {

// "what is the <attribute> of the <category> ?"; the CLS-Q position is
// prepended by the text encoder.
struct Prompt {
  std::vector<int> tokens;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

inline Prompt build_prompt(int attribute_token, int category_token, const Vocabulary& vocab) {
  vocab.token_surface(attribute_token);  // validates
  vocab.token_surface(category_token);
  auto word = [&](const char* w) {
    const int id = vocab.token_id(w);
    if (id < 0)
      throw std::invalid_argument(std::string("vocabulary lacks prompt template word '") + w +
                                  "'");
    return id;
  };
  Prompt p;
  p.tokens = {word("what"), word("is"),  word("the"),    attribute_token,
              word("of"),   word("the"), category_token, word("?")};
  return p;
}

// ---------------------------------------------------------------------------
// Single-layer cross-attention grounding: queries are the prompt positions,
// keys/values the concatenated visual+text positions, residual on the query.

struct FuseResult {
  Mat grounded;  // same row count as queries
  Mat qp, kp, vp;
  Mat attn;  // queries x keys, rows sum to 1
};

inline FuseResult fuse(const FusionParams& fp, const Mat& queries, const Mat& keys) {
  if (keys.rows == 0) throw std::invalid_argument("fuse: empty key set");
  if (queries.cols != fp.w_q.cols || keys.cols != fp.w_k.cols)
    throw std::invalid_argument("fuse: width mismatch");
  const std::size_t d = queries.cols;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
  FuseResult r;
  r.qp = Mat(queries.rows, d);
  r.kp = Mat(keys.rows, d);
  r.vp = Mat(keys.rows, d);
  for (std::size_t j = 0; j < keys.rows; ++j) {
    auto k = matvec(fp.w_k, keys.row(j));
    auto v = matvec(fp.w_v, keys.row(j));
    std::copy(k.begin(), k.end(), r.kp.row(j).begin());
    std::copy(v.begin(), v.end(), r.vp.row(j).begin());
  }
  r.attn = Mat(queries.rows, keys.rows);
  r.grounded = Mat(queries.rows, d);
  for (std::size_t i = 0; i < queries.rows; ++i) {
    auto q = matvec(fp.w_q, queries.row(i));
    std::copy(q.begin(), q.end(), r.qp.row(i).begin());
    std::vector<double> scores(keys.rows);
    for (std::size_t j = 0; j < keys.rows; ++j) scores[j] = dot(q, r.kp.row(j)) * inv_scale;
    const auto attn = softmax(scores);
    std::copy(attn.begin(), attn.end(), r.attn.row(i).begin());
    auto out = r.grounded.row(i);
    for (std::size_t j = 0; j < keys.rows; ++j) axpy(attn[j], r.vp.row(j), out);
    axpy(1.0, queries.row(i), out);
  }
  return r;
}

inline void fuse_backward(const FusionParams& fp, const Mat& queries, const Mat& keys,
                          const FuseResult& r, const Mat& grad_grounded, FusionParams& grads,
                          Mat& grad_queries, Mat& grad_keys) {
  const std::size_t d = queries.cols;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
  Mat grad_kp(keys.rows, d), grad_vp(keys.rows, d);
  for (std::size_t i = 0; i < queries.rows; ++i) {
    const auto g = grad_grounded.row(i);
    axpy(1.0, g, grad_queries.row(i));  // residual
    std::vector<double> grad_attn(keys.rows);
    for (std::size_t j = 0; j < keys.rows; ++j) {
      grad_attn[j] = dot(g, r.vp.row(j));
      axpy(r.attn(i, j), g, grad_vp.row(j));
    }
    const auto grad_scores = softmax_backward(r.attn.row(i), grad_attn);
    std::vector<double> grad_qp(d, 0.0);
    for (std::size_t j = 0; j < keys.rows; ++j) {
      axpy(grad_scores[j] * inv_scale, r.kp.row(j), grad_qp);
      axpy(grad_scores[j] * inv_scale, r.qp.row(i), grad_kp.row(j));
    }
    add_outer(grads.w_q, grad_qp, queries.row(i));
    const auto back_q = matvec_t(fp.w_q, grad_qp);
    axpy(1.0, back_q, grad_queries.row(i));
  }
  for (std::size_t j = 0; j < keys.rows; ++j) {
    add_outer(grads.w_k, grad_kp.row(j), keys.row(j));
    add_outer(grads.w_v, grad_vp.row(j), keys.row(j));
    const auto back_k = matvec_t(fp.w_k, grad_kp.row(j));
    const auto back_v = matvec_t(fp.w_v, grad_vp.row(j));
    axpy(1.0, back_k, grad_keys.row(j));
    axpy(1.0, back_v, grad_keys.row(j));
  }
}

// ---------------------------------------------------------------------------
// Toy decoder: one causal self-attention step, one cross-attention step over
// the grounded sequence, then a linear head over the value symbols + NONE +
// END.

struct DecoderCache {
  Mat inputs;      // S x d, embedded previous symbols (BOS first)
  Mat sq, sk, sv;  // S x d
  Mat self_attn;   // S x S lower-triangular rows
  Mat h;           // after self-attention + residual
  Mat cq;          // S x d
  Mat ck, cv;      // keys/values over grounded rows
  Mat cross_attn;  // S x grounded.rows
  Mat z;           // after cross-attention + residual
  Mat prob_rows;   // S x symbols
};

namespace detail {

inline void decode_step_stack(const DecoderParams& dp, const Mat& grounded,
                              std::span<const int> input_symbols, DecoderCache& c) {
  const std::size_t d = dp.emb.cols;
  const std::size_t S = input_symbols.size();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.inputs = Mat(S, d);
  c.sq = Mat(S, d);
  c.sk = Mat(S, d);
  c.sv = Mat(S, d);
  c.self_attn = Mat(S, S);
  c.h = Mat(S, d);
  for (std::size_t s = 0; s < S; ++s) {
    const int sym = input_symbols[s];
    if (sym < 0 || static_cast<std::size_t>(sym) >= dp.emb.rows)
      throw std::invalid_argument("decoder: symbol id out of range");
    std::copy(dp.emb.row(sym).begin(), dp.emb.row(sym).end(), c.inputs.row(s).begin());
  }
  for (std::size_t s = 0; s < S; ++s) {
    auto q = matvec(dp.w_sq, c.inputs.row(s));
    auto k = matvec(dp.w_sk, c.inputs.row(s));
    auto v = matvec(dp.w_sv, c.inputs.row(s));
    std::copy(q.begin(), q.end(), c.sq.row(s).begin());
    std::copy(k.begin(), k.end(), c.sk.row(s).begin());
    std::copy(v.begin(), v.end(), c.sv.row(s).begin());
  }
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> scores(s + 1);
    for (std::size_t r = 0; r <= s; ++r) scores[r] = dot(c.sq.row(s), c.sk.row(r)) * inv_scale;
    const auto attn = softmax(scores);
    auto out = c.h.row(s);
    for (std::size_t r = 0; r <= s; ++r) {
      c.self_attn(s, r) = attn[r];
      axpy(attn[r], c.sv.row(r), out);
    }
    axpy(1.0, c.inputs.row(s), out);
  }
  // cross-attention over the grounded sequence
  c.ck = Mat(grounded.rows, d);
  c.cv = Mat(grounded.rows, d);
  for (std::size_t j = 0; j < grounded.rows; ++j) {
    auto k = matvec(dp.w_ck, grounded.row(j));
    auto v = matvec(dp.w_cv, grounded.row(j));
    std::copy(k.begin(), k.end(), c.ck.row(j).begin());
    std::copy(v.begin(), v.end(), c.cv.row(j).begin());
  }
  c.cq = Mat(S, d);
  c.cross_attn = Mat(S, grounded.rows);
  c.z = Mat(S, d);
  c.prob_rows = Mat(S, dp.w_out.rows);
  for (std::size_t s = 0; s < S; ++s) {
    auto q = matvec(dp.w_cq, c.h.row(s));
    std::copy(q.begin(), q.end(), c.cq.row(s).begin());
    std::vector<double> scores(grounded.rows);
    for (std::size_t j = 0; j < grounded.rows; ++j) scores[j] = dot(q, c.ck.row(j)) * inv_scale;
    const auto attn = softmax(scores);
    std::copy(attn.begin(), attn.end(), c.cross_attn.row(s).begin());
    auto z = c.z.row(s);
    for (std::size_t j = 0; j < grounded.rows; ++j) axpy(attn[j], c.cv.row(j), z);
    axpy(1.0, c.h.row(s), z);
    auto logits = matvec(dp.w_out, z);
    axpy(1.0, dp.b_out.row(0), logits);
    const auto probs = softmax(logits);
    std::copy(probs.begin(), probs.end(), c.prob_rows.row(s).begin());
  }
}

}  // namespace detail

// Teacher-forced probability rows for a label sequence (values then END).
inline DecoderCache decode_teacher(const DecoderParams& dp, const Mat& grounded,
                                   std::span<const int> label_tokens) {
  if (label_tokens.empty()) throw std::invalid_argument("decode_teacher: empty label sequence");
  std::vector<int> inputs(label_tokens.size());
  inputs[0] = static_cast<int>(dp.emb.rows) - 1;  // BOS row
  for (std::size_t s = 1; s < label_tokens.size(); ++s) inputs[s] = label_tokens[s - 1];
  DecoderCache c;
  detail::decode_step_stack(dp, grounded, inputs, c);
  return c;
}

// grad_logit_rows: d(loss)/d(logits) per step. Accumulates parameter grads
// and the gradient w.r.t. the grounded sequence.
inline void decode_teacher_backward(const DecoderParams& dp, const Mat& grounded,
                                    std::span<const int> label_tokens, const DecoderCache& c,
                                    const Mat& grad_logit_rows, DecoderParams& grads,
                                    Mat& grad_grounded) {
  const std::size_t S = label_tokens.size();
  const std::size_t d = dp.emb.cols;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

  Mat grad_h(S, d);
  Mat grad_ck(grounded.rows, d), grad_cv(grounded.rows, d);
  for (std::size_t s = 0; s < S; ++s) {
    const auto gl = grad_logit_rows.row(s);
    add_outer(grads.w_out, gl, c.z.row(s));
    axpy(1.0, gl, grads.b_out.row(0));
    const auto grad_z = matvec_t(dp.w_out, gl);
    axpy(1.0, grad_z, grad_h.row(s));  // residual
    std::vector<double> grad_attn(grounded.rows);
    for (std::size_t j = 0; j < grounded.rows; ++j) {
      grad_attn[j] = dot(grad_z, c.cv.row(j));
      axpy(c.cross_attn(s, j), grad_z, grad_cv.row(j));
    }
    const auto grad_scores = softmax_backward(c.cross_attn.row(s), grad_attn);
    std::vector<double> grad_cq(d, 0.0);
    for (std::size_t j = 0; j < grounded.rows; ++j) {
      axpy(grad_scores[j] * inv_scale, c.ck.row(j), grad_cq);
      axpy(grad_scores[j] * inv_scale, c.cq.row(s), grad_ck.row(j));
    }
    add_outer(grads.w_cq, grad_cq, c.h.row(s));
    const auto back_h = matvec_t(dp.w_cq, grad_cq);
    axpy(1.0, back_h, grad_h.row(s));
  }
  for (std::size_t j = 0; j < grounded.rows; ++j) {
    add_outer(grads.w_ck, grad_ck.row(j), grounded.row(j));
    add_outer(grads.w_cv, grad_cv.row(j), grounded.row(j));
    axpy(1.0, matvec_t(dp.w_ck, grad_ck.row(j)), grad_grounded.row(j));
    axpy(1.0, matvec_t(dp.w_cv, grad_cv.row(j)), grad_grounded.row(j));
  }

  Mat grad_inputs(S, d);
  Mat grad_sk(S, d), grad_sv(S, d);
  for (std::size_t s = 0; s < S; ++s) {
    const auto gh = grad_h.row(s);
    axpy(1.0, gh, grad_inputs.row(s));  // residual
    std::vector<double> grad_attn(s + 1);
    for (std::size_t r = 0; r <= s; ++r) {
      grad_attn[r] = dot(gh, c.sv.row(r));
      axpy(c.self_attn(s, r), gh, grad_sv.row(r));
    }
    const auto grad_scores =
        softmax_backward(std::span<const double>(c.self_attn.row(s).data(), s + 1), grad_attn);
    std::vector<double> grad_sq(d, 0.0);
    for (std::size_t r = 0; r <= s; ++r) {
      axpy(grad_scores[r] * inv_scale, c.sk.row(r), grad_sq);
      axpy(grad_scores[r] * inv_scale, c.sq.row(s), grad_sk.row(r));
    }
    add_outer(grads.w_sq, grad_sq, c.inputs.row(s));
    axpy(1.0, matvec_t(dp.w_sq, grad_sq), grad_inputs.row(s));
  }
  for (std::size_t r = 0; r < S; ++r) {
    add_outer(grads.w_sk, grad_sk.row(r), c.inputs.row(r));
    add_outer(grads.w_sv, grad_sv.row(r), c.inputs.row(r));
    axpy(1.0, matvec_t(dp.w_sk, grad_sk.row(r)), grad_inputs.row(r));
    axpy(1.0, matvec_t(dp.w_sv, grad_sv.row(r)), grad_inputs.row(r));
  }
  const int bos = static_cast<int>(dp.emb.rows) - 1;
  for (std::size_t s = 0; s < S; ++s) {
    const int sym = s == 0 ? bos : label_tokens[s - 1];
    axpy(1.0, grad_inputs.row(s), grads.emb.row(static_cast<std::size_t>(sym)));
  }
}

// Weighted teacher-forced negative log-likelihood of one sample's label
// sequence; the training loop averages contributions over the batch.
inline double generation_loss(const Mat& prob_rows, std::span<const int> label_tokens,
                              double sample_weight) {
  if (!(sample_weight >= 0.0 && sample_weight <= 1.0))
    throw std::invalid_argument("sample weight must be in [0,1]");
  if (prob_rows.rows != label_tokens.size())
    throw std::invalid_argument("generation_loss: one probability row per label token required");
  double total = 0.0;
  for (std::size_t s = 0; s < prob_rows.rows; ++s) {
    const int y = label_tokens[s];
    if (y < 0 || static_cast<std::size_t>(y) >= prob_rows.cols)
      throw std::invalid_argument("generation_loss: label token out of range");
    total -= std::log(std::max(prob_rows(s, static_cast<std::size_t>(y)), 1e-12));
  }
  return sample_weight * total;
}

// ---------------------------------------------------------------------------
// Greedy autoregressive decoding; stops at END/NONE or after 3 values.

struct Generation {
  std::vector<int> values;  // emitted value ids, in emission order
  Mat prob_rows;
  bool abstained = false;  // NONE emitted or nothing decoded
};

inline Generation decode(const DecoderParams& dp, const Mat& grounded, const ModelDims& dims) {
  constexpr int kMaxValues = 3;
  Generation g;
  std::vector<int> inputs{dims.bos_symbol()};
  std::vector<std::vector<double>> rows;
  while (true) {
    DecoderCache c;
    detail::decode_step_stack(dp, grounded, inputs, c);
    const auto probs = c.prob_rows.row(inputs.size() - 1);
    rows.emplace_back(probs.begin(), probs.end());
    const int best = static_cast<int>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (best == dims.end_symbol()) break;
    if (best == dims.none_symbol()) {
      g.abstained = true;
      break;
    }
    g.values.push_back(best);
    if (static_cast<int>(g.values.size()) >= kMaxValues) break;
    inputs.push_back(best);
  }
  g.prob_rows = Mat(rows.size(), dims.decoder_symbols());
  for (std::size_t s = 0; s < rows.size(); ++s)
    std::copy(rows[s].begin(), rows[s].end(), g.prob_rows.row(s).begin());
  if (g.values.empty()) g.abstained = true;
  return g;
}

// Sorted-unique value ids; empty means abstention (NONE).
inline std::vector<int> prediction_set(const Generation& g) {
  std::vector<int> out = g.values;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace mavex
