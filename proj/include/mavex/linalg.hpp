#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mavex {

// Dense row-major matrix. Vectors are stored as 1xN matrices so the
// parameter visitor, optimizer and serialization all see one tensor shape.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  const double& operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {a.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {a.data() + i * cols, cols}; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline std::vector<double> unit_normalized(std::span<const double> x) {
  const double n = norm2(x);
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v /= n;
  return out;
}

// out = m * x  (m is RxC, x has C entries)
inline std::vector<double> matvec(const Mat& m, std::span<const double> x) {
  if (x.size() != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), x);
  return out;
}

// out = m^T * x  (x has R entries, out has C)
inline std::vector<double> matvec_t(const Mat& m, std::span<const double> x) {
  if (x.size() != m.rows) throw std::invalid_argument("matvec_t: dimension mismatch");
  std::vector<double> out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) axpy(x[i], m.row(i), out);
  return out;
}

// grad += g (outer) x, the rank-1 update dL/dW for y = W x
inline void add_outer(Mat& grad, std::span<const double> g, std::span<const double> x) {
  if (grad.rows != g.size() || grad.cols != x.size())
    throw std::invalid_argument("add_outer: dimension mismatch");
  for (std::size_t i = 0; i < grad.rows; ++i) axpy(g[i], x, grad.row(i));
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

// Backward through p = softmax(z): given dL/dp, returns dL/dz.
inline std::vector<double> softmax_backward(std::span<const double> p,
                                            std::span<const double> grad_p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * grad_p[i];
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (grad_p[i] - s);
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Deterministic RNG. Distributions are hand-rolled on top of the mt19937_64
// bit stream so outputs do not depend on the standard library implementation.

inline std::uint64_t split_mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Decorrelated seed for per-sample substreams.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
  return split_mix(split_mix(seed) ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(split_mix(seed)) {}

  std::uint64_t bits() {
    // xorshift* keeps the generator header-only and platform-stable
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, bound)
  std::uint64_t integer(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::integer: zero bound");
    return bits() % bound;
  }

  // standard normal via Box-Muller
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = integer(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mavex
