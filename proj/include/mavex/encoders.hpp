#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mavex/linalg.hpp"

namespace mavex {

// Online/momentum encoder parameters. The category classifier and the
// per-patch mask head belong to the pruning scheme but live with the visual
// encoder they score.
struct EncoderParams {
  Mat w_img;    // d_h x d_img patch projection
  Mat pos;      // P x d_h visual position embeddings
  Mat cls_img;  // 1 x d_h
  Mat tok;      // vocab x d_h token embedding table
  Mat cls_txt;  // 1 x d_h
  Mat mask_w;   // 1 x d_h mask head
  Mat mask_b;   // 1 x 1
  Mat w_cat;    // C x d_h category classifier
  Mat b_cat;    // 1 x C
};

template <class F>
void for_each_tensor(EncoderParams& p, F&& f) {
  f("enc.w_img", p.w_img);
  f("enc.pos", p.pos);
  f("enc.cls_img", p.cls_img);
  f("enc.tok", p.tok);
  f("enc.cls_txt", p.cls_txt);
  f("enc.mask_w", p.mask_w);
  f("enc.mask_b", p.mask_b);
  f("enc.w_cat", p.w_cat);
  f("enc.b_cat", p.b_cat);
}

template <class F>
void for_each_tensor(const EncoderParams& p, F&& f) {
  for_each_tensor(const_cast<EncoderParams&>(p), [&](const char* n, Mat& m) {
    f(n, static_cast<const Mat&>(m));
  });
}

struct EncodingResult {
  Mat seq;                       // (L+1) x d_h, row 0 is the CLS position
  std::vector<double> cls_norm;  // unit-normalized CLS
};

// Sequence: row 0 = CLS (mean of projected patches plus the CLS bias),
// row 1+p = projected patch p plus its position embedding.
inline EncodingResult encode_image(const EncoderParams& params, const Mat& patches) {
  const std::size_t P = params.pos.rows;
  const std::size_t d_h = params.w_img.rows;
  if (patches.rows != P || patches.cols != params.w_img.cols)
    throw std::invalid_argument("encode_image: patch grid is " + std::to_string(patches.rows) +
                                "x" + std::to_string(patches.cols) + ", expected " +
                                std::to_string(P) + "x" + std::to_string(params.w_img.cols));
  EncodingResult r;
  r.seq = Mat(P + 1, d_h);
  auto cls = r.seq.row(0);
  for (std::size_t p = 0; p < P; ++p) {
    const auto proj = matvec(params.w_img, patches.row(p));
    auto row = r.seq.row(p + 1);
    for (std::size_t j = 0; j < d_h; ++j) {
      row[j] = proj[j] + params.pos(p, j);
      cls[j] += proj[j] / static_cast<double>(P);
    }
  }
  axpy(1.0, params.cls_img.row(0), cls);
  r.cls_norm = unit_normalized(cls);
  return r;
}

inline EncodingResult encode_text(const EncoderParams& params, const std::vector<int>& tokens) {
  const std::size_t d_h = params.tok.cols;
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty token sequence");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= params.tok.rows)
      throw std::invalid_argument("encode_text: token id " + std::to_string(t) +
                                  " outside vocabulary of size " + std::to_string(params.tok.rows));
  EncodingResult r;
  r.seq = Mat(tokens.size() + 1, d_h);
  auto cls = r.seq.row(0);
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto emb = params.tok.row(static_cast<std::size_t>(tokens[t]));
    auto row = r.seq.row(t + 1);
    for (std::size_t j = 0; j < d_h; ++j) {
      row[j] = emb[j];
      cls[j] += emb[j] * inv;
    }
  }
  axpy(1.0, params.cls_txt.row(0), cls);
  r.cls_norm = unit_normalized(cls);
  return r;
}

// Backward through n = c / |c|: dL/dc = (g - (g.n) n) / |c|.
inline std::vector<double> normalize_backward(std::span<const double> cls_raw,
                                              std::span<const double> cls_norm,
                                              std::span<const double> grad_norm) {
  const double norm = norm2(cls_raw);
  const double proj = dot(grad_norm, cls_norm);
  std::vector<double> out(cls_raw.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = (grad_norm[j] - proj * cls_norm[j]) / norm;
  return out;
}

// grad_seq covers every sequence row (CLS included); grad_cls_norm may be
// empty when the normalized CLS is unused downstream.
inline void encode_image_backward(const EncoderParams& params, const Mat& patches,
                                  const EncodingResult& r, const Mat& grad_seq,
                                  std::span<const double> grad_cls_norm, EncoderParams& grads) {
  const std::size_t P = params.pos.rows;
  const std::size_t d_h = params.w_img.rows;
  std::vector<double> grad_cls(grad_seq.row(0).begin(), grad_seq.row(0).end());
  if (!grad_cls_norm.empty()) {
    const auto g = normalize_backward(r.seq.row(0), r.cls_norm, grad_cls_norm);
    axpy(1.0, g, grad_cls);
  }
  axpy(1.0, grad_cls, grads.cls_img.row(0));
  const double inv = 1.0 / static_cast<double>(P);
  std::vector<double> grad_proj(d_h);
  for (std::size_t p = 0; p < P; ++p) {
    const auto gr = grad_seq.row(p + 1);
    for (std::size_t j = 0; j < d_h; ++j) {
      grad_proj[j] = gr[j] + grad_cls[j] * inv;
      grads.pos(p, j) += gr[j];
    }
    add_outer(grads.w_img, grad_proj, patches.row(p));
  }
}

inline void encode_text_backward(const EncoderParams& params, const std::vector<int>& tokens,
                                 const EncodingResult& r, const Mat& grad_seq,
                                 std::span<const double> grad_cls_norm, EncoderParams& grads) {
  (void)params;
  const std::size_t d_h = grads.tok.cols;
  std::vector<double> grad_cls(grad_seq.row(0).begin(), grad_seq.row(0).end());
  if (!grad_cls_norm.empty()) {
    const auto g = normalize_backward(r.seq.row(0), r.cls_norm, grad_cls_norm);
    axpy(1.0, g, grad_cls);
  }
  axpy(1.0, grad_cls, grads.cls_txt.row(0));
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto dst = grads.tok.row(static_cast<std::size_t>(tokens[t]));
    const auto gr = grad_seq.row(t + 1);
    for (std::size_t j = 0; j < d_h; ++j) dst[j] += gr[j] + grad_cls[j] * inv;
  }
}

// theta' <- m * theta' + (1 - m) * theta, for every tensor.
inline void momentum_update(const EncoderParams& online, EncoderParams& momentum, double m) {
  if (!(m >= 0.0 && m <= 1.0))
    throw std::invalid_argument("momentum coefficient must be in [0,1]");
  std::vector<const Mat*> src;
  for_each_tensor(online, [&](const char*, const Mat& t) { src.push_back(&t); });
  std::size_t k = 0;
  for_each_tensor(momentum, [&](const char* name, Mat& target) {
    const Mat& s = *src[k++];
    if (!s.same_shape(target))
      throw std::invalid_argument(std::string("momentum_update: shape mismatch on ") + name);
    for (std::size_t i = 0; i < target.a.size(); ++i)
      target.a[i] = m * target.a[i] + (1.0 - m) * s.a[i];
  });
}

// FIFO ring of unit-norm feature rows; the oldest entry is evicted first.
class MomentumQueue {
 public:
  MomentumQueue() = default;
  MomentumQueue(std::size_t capacity, std::size_t dim)
      : capacity_(capacity), dim_(dim), buf_(capacity, dim) {
    if (capacity == 0) throw std::invalid_argument("queue capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t fill() const { return fill_; }

  void enqueue(const Mat& batch) {
    if (batch.rows == 0) return;
    if (batch.cols != dim_) throw std::invalid_argument("enqueue: feature width mismatch");
    for (std::size_t i = 0; i < batch.rows; ++i) {
      const double n = norm2(batch.row(i));
      if (std::abs(n - 1.0) > 1e-4)
        throw std::invalid_argument("enqueue: vector norm " + std::to_string(n) +
                                    " deviates from 1 by more than 1e-4");
    }
    for (std::size_t i = 0; i < batch.rows; ++i) {
      std::copy(batch.row(i).begin(), batch.row(i).end(), buf_.row(next_).begin());
      next_ = (next_ + 1) % capacity_;
      if (fill_ < capacity_) ++fill_;
    }
  }

  // Arrival order, oldest first.
  Mat contents() const {
    Mat out(fill_, dim_);
    const std::size_t oldest = (next_ + capacity_ - fill_) % capacity_;
    for (std::size_t i = 0; i < fill_; ++i) {
      const std::size_t slot = (oldest + i) % capacity_;
      std::copy(buf_.row(slot).begin(), buf_.row(slot).end(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const MomentumQueue& a, const MomentumQueue& b) {
    return a.capacity_ == b.capacity_ && a.dim_ == b.dim_ && a.contents() == b.contents();
  }

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t next_ = 0;
  std::size_t fill_ = 0;
  Mat buf_;
};

}  // namespace mavex
