#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mavex/linalg.hpp"

namespace mavex {

// The sample itself is excluded from its neighbor and cohort sets so every
// reliability lands in [0,1].

// Indices of the K nearest rows to row n (Euclidean), n excluded, ties broken
// by lower index. Result is sorted ascending.
inline std::vector<int> knn_visual(const Mat& features, int n, int k) {
  const int N = static_cast<int>(features.rows);
  if (k < 1) throw std::invalid_argument("knn_visual: k must be >= 1");
  if (k >= N) throw std::invalid_argument("knn_visual: k must be smaller than the sample count");
  if (n < 0 || n >= N) throw std::invalid_argument("knn_visual: index out of range");
  std::vector<std::pair<double, int>> dist;
  dist.reserve(N - 1);
  for (int j = 0; j < N; ++j) {
    if (j == n) continue;
    double d2 = 0.0;
    for (std::size_t c = 0; c < features.cols; ++c) {
      const double diff = features(j, c) - features(n, c);
      d2 += diff * diff;
    }
    dist.emplace_back(d2, j);
  }
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) out[i] = dist[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

// {j != n : label_j == label_n}; multi-value labels compare as sets, so the
// caller passes sorted-unique vectors.
inline std::vector<int> label_consensus(const std::vector<std::vector<int>>& labels, int n) {
  if (n < 0 || static_cast<std::size_t>(n) >= labels.size())
    throw std::invalid_argument("label_consensus: index out of range");
  std::vector<int> out;
  for (int j = 0; j < static_cast<int>(labels.size()); ++j)
    if (j != n && labels[j] == labels[n]) out.push_back(j);
  return out;
}

inline int intersection_size(std::span<const int> a, std::span<const int> b) {
  // both sorted ascending
  int count = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

// s_v = |N ∩ Y| / K
inline double visual_reliability(std::span<const int> neighbors, std::span<const int> same_label,
                                 int k) {
  if (static_cast<int>(neighbors.size()) != k)
    throw std::invalid_argument("visual_reliability: neighbor set must have exactly K entries");
  return static_cast<double>(intersection_size(neighbors, same_label)) / static_cast<double>(k);
}

// s_p = |Ŷ ∩ Y| / |Ŷ ∪ Y|, defined as 1 when both cohorts are empty.
inline double prediction_reliability(std::span<const int> prediction_cohort,
                                     std::span<const int> label_cohort) {
  const int inter = intersection_size(prediction_cohort, label_cohort);
  const int uni =
      static_cast<int>(prediction_cohort.size()) + static_cast<int>(label_cohort.size()) - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Eq.-15 schedule: visual-only before epoch E, averaged with the prediction
// level from epoch E on.
inline double combine(double s_v, std::optional<double> s_p, int epoch, int regularization_epoch) {
  if (epoch < 0) throw std::invalid_argument("combine: negative epoch");
  if (epoch < regularization_epoch) return s_v;
  if (!s_p)
    throw std::invalid_argument("combine: prediction reliability required from epoch " +
                                std::to_string(regularization_epoch));
  return 0.5 * (s_v + *s_p);
}

struct ReliabilityRow {
  double s_v = 0.0;
  std::optional<double> s_p;
  double s = 0.0;
};

struct ReliabilityTable {
  int epoch = 0;
  std::vector<ReliabilityRow> rows;
};

// One table per epoch from a frozen snapshot: visual CLS features, weak
// labels, and (from epoch E) the previous epoch's predictions.
inline ReliabilityTable compute_reliability(
    const Mat& features, const std::vector<std::vector<int>>& labels,
    const std::optional<std::vector<std::vector<int>>>& predictions, int k, int epoch,
    int regularization_epoch) {
  const int N = static_cast<int>(features.rows);
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("compute_reliability: labels/features size mismatch");
  const bool with_pred = epoch >= regularization_epoch;
  if (with_pred && !predictions)
    throw std::invalid_argument("compute_reliability: predictions required from epoch " +
                                std::to_string(regularization_epoch));
  ReliabilityTable table;
  table.epoch = epoch;
  table.rows.resize(N);
  for (int n = 0; n < N; ++n) {
    const auto neighbors = knn_visual(features, n, k);
    const auto cohort = label_consensus(labels, n);
    auto& row = table.rows[n];
    row.s_v = visual_reliability(neighbors, cohort, k);
    if (with_pred) {
      const auto pred_cohort = label_consensus(*predictions, n);
      row.s_p = prediction_reliability(pred_cohort, cohort);
    }
    row.s = combine(row.s_v, row.s_p, epoch, regularization_epoch);
  }
  return table;
}

}  // namespace mavex
