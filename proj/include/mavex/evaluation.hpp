#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mavex/data.hpp"
#include "mavex/linalg.hpp"
#include "mavex/vocab.hpp"

namespace mavex {

constexpr int kUnknownValue = -1;

// Lowercase, trim, then map through the synonym table. Total function:
// strings outside the table land on the UNKNOWN sentinel.
inline int normalize(std::string value, const Vocabulary& vocab) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  value.erase(value.begin(), std::find_if(value.begin(), value.end(), not_space));
  value.erase(std::find_if(value.rbegin(), value.rend(), not_space).base(), value.end());
  std::transform(value.begin(), value.end(), value.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto it = vocab.synonyms.find(value);
  if (it == vocab.synonyms.end()) return kUnknownValue;
  return vocab.value_id(it->second);
}

// SINGLE: the prediction is exactly the one gold value. MULTIPLE: every gold
// value appears in the prediction.
inline bool match(const std::vector<int>& pred, const std::vector<int>& gold,
                  ValueType value_type) {
  auto contains = [&](int v) { return std::find(pred.begin(), pred.end(), v) != pred.end(); };
  if (value_type == ValueType::kSingle)
    return gold.size() == 1 && pred.size() == 1 && pred[0] == gold[0];
  return std::all_of(gold.begin(), gold.end(), contains);
}

struct EvalRecord {
  std::string id;
  std::vector<int> prediction;  // sorted unique; empty = NONE abstention
  std::vector<int> gold;        // sorted unique, nonempty
  std::optional<GoldSource> gold_source;
  int category_id = 0;
};

struct ClassMetrics {
  int tp = 0, fp = 0, fn = 0;
  int gold_count = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  std::map<int, ClassMetrics> per_class;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  int n_records = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Per-class counting convention: a gold value scores TP only when the sample
// prediction matches for it (SINGLE: prediction == {v}); abstentions add no
// FP, so they lower recall but not precision.
inline MetricsReport macro_prf(std::span<const EvalRecord> records, ValueType value_type) {
  if (records.empty()) throw std::invalid_argument("macro_prf: no records");
  MetricsReport report;
  report.n_records = static_cast<int>(records.size());
  for (const auto& r : records) {
    if (r.gold.empty()) throw std::invalid_argument("macro_prf: record with empty gold set");
    auto in_pred = [&](int v) {
      return std::find(r.prediction.begin(), r.prediction.end(), v) != r.prediction.end();
    };
    auto in_gold = [&](int v) { return std::find(r.gold.begin(), r.gold.end(), v) != r.gold.end(); };
    for (int v : r.gold) {
      auto& c = report.per_class[v];
      ++c.gold_count;
      const bool hit = value_type == ValueType::kSingle
                           ? (r.prediction.size() == 1 && r.prediction[0] == v)
                           : in_pred(v);
      if (hit) ++c.tp;
      if (!in_pred(v)) ++c.fn;
    }
    for (int v : r.prediction)
      if (!in_gold(v)) ++report.per_class[v].fp;
  }
  double sp = 0.0, sr = 0.0, sf = 0.0;
  int classes = 0;
  for (auto& [v, c] : report.per_class) {
    c.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    c.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    c.f1 = c.precision + c.recall > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                                      : 0.0;
    if (c.gold_count > 0) {
      sp += c.precision;
      sr += c.recall;
      sf += c.f1;
      ++classes;
    }
  }
  report.macro_precision = sp / classes;
  report.macro_recall = sr / classes;
  report.macro_f1 = sf / classes;
  return report;
}

struct GapRow {
  double precision = 0.0, recall = 0.0, f1 = 0.0;

  friend bool operator==(const GapRow&, const GapRow&) = default;
};

struct SourceAwareReport {
  MetricsReport overall;
  std::optional<MetricsReport> text;
  std::optional<MetricsReport> image;
  std::optional<GapRow> gap;  // text metric minus image metric

  friend bool operator==(const SourceAwareReport&, const SourceAwareReport&) = default;
};

inline SourceAwareReport source_aware_report(std::span<const EvalRecord> records,
                                             ValueType value_type) {
  for (const auto& r : records)
    if (!r.gold_source)
      throw std::invalid_argument("source_aware_report: record '" + r.id + "' has no gold_source");
  SourceAwareReport rep;
  rep.overall = macro_prf(records, value_type);
  std::vector<EvalRecord> text, image;
  for (const auto& r : records)
    (*r.gold_source == GoldSource::kText ? text : image).push_back(r);
  if (!text.empty()) rep.text = macro_prf(text, value_type);
  if (!image.empty()) rep.image = macro_prf(image, value_type);
  if (rep.text && rep.image) {
    rep.gap = GapRow{rep.text->macro_precision - rep.image->macro_precision,
                     rep.text->macro_recall - rep.image->macro_recall,
                     rep.text->macro_f1 - rep.image->macro_f1};
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Cross-modal retrieval: row i of each matrix is the true pair.

struct RetrievalMetrics {
  double t_at_1 = 0.0;      // text retrieval recall at rank 1 (image query)
  double i_at_1 = 0.0;      // image retrieval recall at rank 1 (text query)
  double t_rank_mean = 0.0; // mean rank of the true text
  double i_rank_mean = 0.0;
  double r_mean = 0.0;      // average of the two rank means
};

inline RetrievalMetrics retrieval_eval(const Mat& image_cls, const Mat& text_cls) {
  if (image_cls.rows != text_cls.rows)
    throw std::invalid_argument("retrieval_eval: image/text counts differ");
  if (image_cls.rows == 0) throw std::invalid_argument("retrieval_eval: no pairs");
  const std::size_t N = image_cls.rows;
  Mat sim(N, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) sim(i, j) = dot(image_cls.row(i), text_cls.row(j));

  RetrievalMetrics m;
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t rank = 1, best = 0;
    for (std::size_t j = 1; j < N; ++j)
      if (sim(i, j) > sim(i, best)) best = j;
    for (std::size_t j = 0; j < N; ++j) {
      if (sim(i, j) > sim(i, i)) ++rank;
      else if (j < i && sim(i, j) == sim(i, i)) ++rank;
    }
    if (best == i) m.t_at_1 += 1.0;
    m.t_rank_mean += static_cast<double>(rank);
  }
  for (std::size_t j = 0; j < N; ++j) {
    std::size_t rank = 1, best = 0;
    for (std::size_t i = 1; i < N; ++i)
      if (sim(i, j) > sim(best, j)) best = i;
    for (std::size_t i = 0; i < N; ++i) {
      if (sim(i, j) > sim(j, j)) ++rank;
      else if (i < j && sim(i, j) == sim(j, j)) ++rank;
    }
    if (best == j) m.i_at_1 += 1.0;
    m.i_rank_mean += static_cast<double>(rank);
  }
  const double n = static_cast<double>(N);
  m.t_at_1 /= n;
  m.i_at_1 /= n;
  m.t_rank_mean /= n;
  m.i_rank_mean /= n;
  m.r_mean = 0.5 * (m.t_rank_mean + m.i_rank_mean);
  return m;
}

// ---------------------------------------------------------------------------
// Report serialization (JSON round-trips; CSV is flat split/class rows with
// GAP as a pseudo-split).

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [v, c] : r.per_class)
    per_class[std::to_string(v)] = {{"tp", c.tp},
                                    {"fp", c.fp},
                                    {"fn", c.fn},
                                    {"gold_count", c.gold_count},
                                    {"precision", c.precision},
                                    {"recall", c.recall},
                                    {"f1", c.f1}};
  return nlohmann::json{{"macro_precision", r.macro_precision},
                        {"macro_recall", r.macro_recall},
                        {"macro_f1", r.macro_f1},
                        {"n_records", r.n_records},
                        {"classes", std::move(per_class)}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.macro_precision = j.at("macro_precision").get<double>();
  r.macro_recall = j.at("macro_recall").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.n_records = j.at("n_records").get<int>();
  for (const auto& [key, val] : j.at("classes").items()) {
    ClassMetrics c;
    c.tp = val.at("tp").get<int>();
    c.fp = val.at("fp").get<int>();
    c.fn = val.at("fn").get<int>();
    c.gold_count = val.at("gold_count").get<int>();
    c.precision = val.at("precision").get<double>();
    c.recall = val.at("recall").get<double>();
    c.f1 = val.at("f1").get<double>();
    r.per_class[std::stoi(key)] = c;
  }
  return r;
}

inline nlohmann::json source_report_to_json(const SourceAwareReport& r) {
  nlohmann::json j;
  j["overall"] = metrics_to_json(r.overall);
  if (r.text) j["text"] = metrics_to_json(*r.text);
  if (r.image) j["image"] = metrics_to_json(*r.image);
  if (r.gap)
    j["gap"] = {{"precision", r.gap->precision},
                {"recall", r.gap->recall},
                {"f1", r.gap->f1}};
  return j;
}

inline SourceAwareReport source_report_from_json(const nlohmann::json& j) {
  SourceAwareReport r;
  r.overall = metrics_from_json(j.at("overall"));
  if (j.contains("text")) r.text = metrics_from_json(j.at("text"));
  if (j.contains("image")) r.image = metrics_from_json(j.at("image"));
  if (j.contains("gap"))
    r.gap = GapRow{j.at("gap").at("precision").get<double>(),
                   j.at("gap").at("recall").get<double>(), j.at("gap").at("f1").get<double>()};
  return r;
}

inline std::string report_to_csv(const SourceAwareReport& r, const Vocabulary& vocab) {
  std::ostringstream out;
  out << "split,class,precision,recall,f1\n";
  auto class_name = [&](int v) {
    return v == kUnknownValue ? std::string("UNKNOWN") : vocab.values.at(v);
  };
  auto emit = [&](const std::string& split, const MetricsReport& m) {
    for (const auto& [v, c] : m.per_class)
      out << split << ',' << class_name(v) << ',' << c.precision << ',' << c.recall << ',' << c.f1
          << '\n';
    out << split << ",MACRO," << m.macro_precision << ',' << m.macro_recall << ',' << m.macro_f1
        << '\n';
  };
  emit("overall", r.overall);
  if (r.text) emit("text", *r.text);
  if (r.image) emit("image", *r.image);
  if (r.gap)
    out << "GAP,MACRO," << r.gap->precision << ',' << r.gap->recall << ',' << r.gap->f1 << '\n';
  return out.str();
}

}  // namespace mavex
