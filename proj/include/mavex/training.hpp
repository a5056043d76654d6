#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mavex/alignment.hpp"
#include "mavex/neighborhood.hpp"
#include "mavex/pipeline.hpp"

namespace mavex {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double lr = 1e-5;  // cosine-annealed initial rate
  double weight_decay = 0.05;
  double alpha = 0.4;
  double tau = 0.07;
  int queue_capacity = 512;
  int knn_k = 10;
  int regularization_epoch = 2;  // E: prediction neighbors join from here
  double momentum_coef = 0.995;
  std::uint64_t seed = 0;
  Toggles toggles;
  // Per-term scales; the composite objective is their weighted sum and
  // defaults to the plain unweighted sum.
  double scale_sc = 1.0;
  double scale_ct = 1.0;
  double scale_rmlm = 1.0;
  int d_h = 32;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (queue_capacity < batch_size)
      throw std::invalid_argument("queue_capacity must be >= batch_size");
    if (epochs > 0 && regularization_epoch > epochs)
      throw std::invalid_argument("regularization_epoch must be <= epochs");
    if (regularization_epoch < 0) throw std::invalid_argument("regularization_epoch must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0,1]");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (knn_k < 1) throw std::invalid_argument("knn_k must be >= 1");
    if (!(momentum_coef >= 0.0 && momentum_coef <= 1.0))
      throw std::invalid_argument("momentum_coef must be in [0,1]");
    if (d_h < 2) throw std::invalid_argument("d_h must be >= 2");
  }
};

struct LossComponents {
  double sc = 0.0;
  double ct = 0.0;
  double rmlm = 0.0;
  double total = 0.0;
};

struct BatchResult {
  LossComponents components;
  Mat momentum_visual;   // B x d_h, filled when S1 is on
  Mat momentum_textual;  // fed to the queues after the optimizer step
};

// Composite objective over one batch. Disabled toggles contribute exactly 0
// and stay out of the gradient; when grads is non-null the analytic gradient
// of the (scaled) total accumulates into it.
inline BatchResult batch_loss(const std::vector<const Sample*>& batch, const ModelState& state,
                              const Vocabulary& vocab, const PromptContext& ctx,
                              const std::vector<double>& weights, const Toggles& toggles,
                              double tau, double alpha, double scale_sc, double scale_ct,
                              double scale_rmlm, ModelParams* grads) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  if (weights.size() != batch.size())
    throw std::invalid_argument("batch_loss: one weight per batch sample required");
  const std::size_t B = batch.size();
  const std::size_t d_h = static_cast<std::size_t>(state.dims.d_h);
  const ModelParams& params = state.online;

  std::vector<SampleForward> fwd(B);
  std::vector<std::vector<int>> labels(B);
  std::vector<DecoderCache> dec(B);
  BatchResult out;

  double ct_sum = 0.0;
  double rmlm_sum = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const Sample& s = *batch[b];
    fwd[b] = forward_sample(params, vocab, ctx, s, toggles.s2);
    if (toggles.s2) {
      ct_sum -= std::log(
          std::max(fwd[b].category.probs[static_cast<std::size_t>(s.category_id)], 1e-12));
    }
    labels[b] = label_sequence(s, state.dims);
    dec[b] = decode_teacher(params.dec, fwd[b].fused.grounded, labels[b]);
    rmlm_sum += generation_loss(dec[b].prob_rows, labels[b], weights[b]);
  }

  ScLossResult sc;
  if (toggles.s1) {
    if (B < 2) throw std::invalid_argument("batch_loss: S1 needs a batch of at least 2");
    Mat online_v(B, d_h), online_t(B, d_h);
    out.momentum_visual = Mat(B, d_h);
    out.momentum_textual = Mat(B, d_h);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(fwd[b].visual.cls_norm.begin(), fwd[b].visual.cls_norm.end(),
                online_v.row(b).begin());
      std::copy(fwd[b].textual.cls_norm.begin(), fwd[b].textual.cls_norm.end(),
                online_t.row(b).begin());
      const auto mv = encode_image(state.momentum, batch[b]->patches);
      const auto mt = encode_text(state.momentum, batch[b]->tokens);
      std::copy(mv.cls_norm.begin(), mv.cls_norm.end(), out.momentum_visual.row(b).begin());
      std::copy(mt.cls_norm.begin(), mt.cls_norm.end(), out.momentum_textual.row(b).begin());
    }
    sc = sc_loss(online_v, online_t, out.momentum_visual, out.momentum_textual,
                 state.queue_visual.contents(), state.queue_textual.contents(), tau, alpha,
                 grads != nullptr);
    out.components.sc = scale_sc * sc.loss;
  }
  if (toggles.s2) out.components.ct = scale_ct * ct_sum / static_cast<double>(B);
  out.components.rmlm = scale_rmlm * rmlm_sum / static_cast<double>(B);
  out.components.total = out.components.sc + out.components.ct + out.components.rmlm;

  if (!grads) return out;

  const std::size_t D = static_cast<std::size_t>(state.dims.decoder_symbols());
  for (std::size_t b = 0; b < B; ++b) {
    const Sample& s = *batch[b];
    const auto& f = fwd[b];
    const std::size_t P = s.patches.rows;
    const std::size_t S = labels[b].size();

    // generation loss -> decoder logits
    const double w = scale_rmlm * weights[b] / static_cast<double>(B);
    Mat grad_logits(S, D);
    for (std::size_t st = 0; st < S; ++st) {
      const auto y = static_cast<std::size_t>(labels[b][st]);
      if (dec[b].prob_rows(st, y) > 1e-12 && w != 0.0) {
        for (std::size_t k = 0; k < D; ++k) grad_logits(st, k) = w * dec[b].prob_rows(st, k);
        grad_logits(st, y) -= w;
      }
    }
    Mat grad_grounded(f.fused.grounded.rows, d_h);
    decode_teacher_backward(params.dec, f.fused.grounded, labels[b], dec[b], grad_logits,
                            grads->dec, grad_grounded);

    Mat grad_queries(f.prompt.seq.rows, d_h);
    Mat grad_keys(f.keys.rows, d_h);
    fuse_backward(params.fusion, f.prompt.seq, f.keys, f.fused, grad_grounded, grads->fusion,
                  grad_queries, grad_keys);
    encode_text_backward(params.enc, f.prompt_tokens.tokens, f.prompt, grad_queries, {},
                         grads->enc);

    Mat grad_pruned(P + 1, d_h);
    Mat grad_tseq(f.textual.seq.rows, d_h);
    for (std::size_t r = 0; r < P + 1; ++r)
      std::copy(grad_keys.row(r).begin(), grad_keys.row(r).end(), grad_pruned.row(r).begin());
    for (std::size_t r = 0; r < grad_tseq.rows; ++r)
      std::copy(grad_keys.row(P + 1 + r).begin(), grad_keys.row(P + 1 + r).end(),
                grad_tseq.row(r).begin());

    std::span<const double> grad_v_cls;
    std::span<const double> grad_t_cls;
    Mat scaled_v_cls, scaled_t_cls;
    if (toggles.s1) {
      scaled_v_cls = Mat(1, d_h);
      scaled_t_cls = Mat(1, d_h);
      axpy(scale_sc, sc.grad_visual_cls.row(b), scaled_v_cls.row(0));
      axpy(scale_sc, sc.grad_textual_cls.row(b), scaled_t_cls.row(0));
      grad_v_cls = scaled_v_cls.row(0);
      grad_t_cls = scaled_t_cls.row(0);
    }

    if (toggles.s2) {
      Mat grad_vseq(P + 1, d_h);
      std::vector<double> grad_scores(P, 0.0);
      prune_backward(f.visual.seq, f.category.scores, grad_pruned, grad_vseq, grad_scores);
      Mat grad_patches(P, d_h);
      category_backward(params.enc, f.patch_rows, f.category, s.category_id,
                        scale_ct / static_cast<double>(B), grads->enc, grad_patches);
      // gate-score path into the mask head
      for (std::size_t p = 0; p < P; ++p) {
        axpy(grad_scores[p], f.patch_rows.row(p), grads->enc.mask_w.row(0));
        grads->enc.mask_b(0, 0) += grad_scores[p];
        axpy(grad_scores[p], params.enc.mask_w.row(0), grad_patches.row(p));
      }
      for (std::size_t p = 0; p < P; ++p) axpy(1.0, grad_patches.row(p), grad_vseq.row(p + 1));
      encode_image_backward(params.enc, s.patches, f.visual, grad_vseq, grad_v_cls, grads->enc);
    } else {
      encode_image_backward(params.enc, s.patches, f.visual, grad_pruned, grad_v_cls, grads->enc);
    }
    encode_text_backward(params.enc, s.tokens, f.textual, grad_tseq, grad_t_cls, grads->enc);
  }
  return out;
}

// Spec-facing wrapper: loss value and components for a weighted batch.
inline LossComponents total_loss(const std::vector<const Sample*>& batch, const ModelState& state,
                                 const Vocabulary& vocab, const PromptContext& ctx,
                                 const std::vector<double>& weights, const Toggles& toggles,
                                 double tau = 0.07, double alpha = 0.4) {
  return batch_loss(batch, state, vocab, ctx, weights, toggles, tau, alpha, 1.0, 1.0, 1.0, nullptr)
      .components;
}

// ---------------------------------------------------------------------------
// Optimizer: AdamW update equations with decoupled weight decay.

class AdamW {
 public:
  explicit AdamW(const ModelParams& shape) {
    for_each_tensor(shape, [&](const char*, const Mat& m) {
      m_.emplace_back(m.a.size(), 0.0);
      v_.emplace_back(m.a.size(), 0.0);
    });
  }

  void step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    std::vector<const Mat*> g;
    for_each_tensor(grads, [&](const char*, const Mat& m) { g.push_back(&m); });
    std::size_t i = 0;
    for_each_tensor(params, [&](const char*, Mat& p) {
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& gr = g[i]->a;
      for (std::size_t k = 0; k < p.a.size(); ++k) {
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gr[k];
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gr[k] * gr[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        p.a[k] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay * p.a[k]);
      }
      ++i;
    });
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

inline double cosine_lr(double lr0, int step, int total_steps) {
  if (total_steps <= 0) return lr0;
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

// ---------------------------------------------------------------------------

struct StepMetrics {
  int step = 0;
  int epoch = 0;
  double l_sc = 0.0, l_ct = 0.0, l_rmlm = 0.0, total = 0.0, lr = 0.0;
};

struct TrainMetrics {
  std::vector<StepMetrics> steps;
  double wall_seconds = 0.0;
};

struct WeightRecord {
  std::string id;
  int epoch = 0;
  double s_v = 0.0;
  std::optional<double> s_p;
  double s = 0.0;
  std::optional<bool> noise_flag;
};

struct TrainResult {
  ModelState state;
  TrainMetrics metrics;
  std::vector<WeightRecord> weight_history;
};

inline TrainResult train(const Dataset& train_set, const Vocabulary& vocab,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.samples.empty()) throw std::invalid_argument("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  const int N = static_cast<int>(train_set.samples.size());
  const ModelDims dims =
      dims_for(train_set.header, cfg.d_h, static_cast<int>(vocab.tokens.size()));
  const PromptContext ctx = PromptContext::from_vocab(vocab, dims.categories);

  TrainResult result;
  result.state = init_model(dims, cfg.queue_capacity, cfg.seed);
  if (cfg.epochs == 0) return result;
  if (cfg.toggles.s3 && cfg.knn_k >= N)
    throw std::invalid_argument("knn_k must be smaller than the training set");

  std::vector<std::vector<int>> weak_labels(N);
  for (int i = 0; i < N; ++i) {
    weak_labels[i] = train_set.samples[i].weak_label;
    std::sort(weak_labels[i].begin(), weak_labels[i].end());
    weak_labels[i].erase(std::unique(weak_labels[i].begin(), weak_labels[i].end()),
                         weak_labels[i].end());
  }

  int batches_per_epoch = 0;
  for (int start = 0; start < N; start += cfg.batch_size)
    if (N - start >= 2) ++batches_per_epoch;
  const int total_steps = cfg.epochs * batches_per_epoch;

  AdamW optimizer(result.state.online);
  Rng shuffle_rng(substream_seed(cfg.seed, 0xB));
  std::vector<double> weights(N, 1.0);
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.toggles.s3) {
      // frozen per-epoch snapshot: visual features always, last-epoch
      // predictions once the schedule turns them on
      const Mat features = visual_cls_features(result.state.online.enc, train_set.samples);
      std::optional<std::vector<std::vector<int>>> predictions;
      if (epoch >= cfg.regularization_epoch) {
        predictions.emplace();
        predictions->reserve(N);
        for (const auto& s : train_set.samples)
          predictions->push_back(predict_sample(result.state.online, dims, vocab, ctx, s,
                                                cfg.toggles.s2));
      }
      const auto table = compute_reliability(features, weak_labels, predictions, cfg.knn_k,
                                             epoch, cfg.regularization_epoch);
      for (int i = 0; i < N; ++i) {
        weights[i] = table.rows[i].s;
        result.weight_history.push_back(WeightRecord{train_set.samples[i].id, epoch,
                                                     table.rows[i].s_v, table.rows[i].s_p,
                                                     table.rows[i].s,
                                                     train_set.samples[i].noise_flag});
      }
    }

    auto order = shuffle_rng.permutation(N);
    for (int start = 0; start < N; start += cfg.batch_size) {
      const int size = std::min(cfg.batch_size, N - start);
      if (size < 2) continue;
      std::vector<const Sample*> batch(size);
      std::vector<double> batch_weights(size);
      for (int i = 0; i < size; ++i) {
        batch[i] = &train_set.samples[order[start + i]];
        batch_weights[i] = weights[order[start + i]];
      }
      const double lr_t = cosine_lr(cfg.lr, step, total_steps);
      ModelParams grads = zero_params(dims);
      const auto res =
          batch_loss(batch, result.state, vocab, ctx, batch_weights, cfg.toggles, cfg.tau,
                     cfg.alpha, cfg.scale_sc, cfg.scale_ct, cfg.scale_rmlm, &grads);
      if (!std::isfinite(res.components.total))
        throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                 ": non-finite total loss");
      optimizer.step(result.state.online, grads, lr_t, cfg.weight_decay);
      if (cfg.toggles.s1) {
        momentum_update(result.state.online.enc, result.state.momentum, cfg.momentum_coef);
        result.state.queue_visual.enqueue(res.momentum_visual);
        result.state.queue_textual.enqueue(res.momentum_textual);
      }
      result.metrics.steps.push_back(StepMetrics{step, epoch, res.components.sc,
                                                 res.components.ct, res.components.rmlm,
                                                 res.components.total, lr_t});
      ++step;
    }
  }
  result.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---------------------------------------------------------------------------
// CSV emitters (no timestamps, so identical runs emit identical bytes).

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_to_csv(const TrainMetrics& m) {
  std::ostringstream out;
  out << "step,epoch,L_sc,L_ct,L_rmlm,total,lr\n";
  for (const auto& s : m.steps)
    out << s.step << ',' << s.epoch << ',' << format_double(s.l_sc) << ','
        << format_double(s.l_ct) << ',' << format_double(s.l_rmlm) << ','
        << format_double(s.total) << ',' << format_double(s.lr) << '\n';
  return out.str();
}

inline std::string weights_to_csv(const std::vector<WeightRecord>& records) {
  std::ostringstream out;
  out << "id,epoch,s_v,s_p,s,noise_flag\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.epoch << ',' << format_double(r.s_v) << ',';
    if (r.s_p) out << format_double(*r.s_p);
    out << ',' << format_double(r.s) << ',';
    if (r.noise_flag) out << (*r.noise_flag ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

}  // namespace mavex
