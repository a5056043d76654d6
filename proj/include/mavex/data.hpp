#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mavex/linalg.hpp"
#include "mavex/vocab.hpp"

namespace mavex {

enum class ValueType { kSingle, kMultiple };
enum class GoldSource { kText, kImage };

inline std::string to_string(ValueType t) {
  return t == ValueType::kSingle ? "SINGLE" : "MULTIPLE";
}
inline std::string to_string(GoldSource s) { return s == GoldSource::kText ? "TEXT" : "IMAGE"; }

inline ValueType value_type_from_string(const std::string& s) {
  if (s == "SINGLE") return ValueType::kSingle;
  if (s == "MULTIPLE") return ValueType::kMultiple;
  throw std::invalid_argument("unknown value_type '" + s + "'");
}
inline GoldSource gold_source_from_string(const std::string& s) {
  if (s == "TEXT") return GoldSource::kText;
  if (s == "IMAGE") return GoldSource::kImage;
  throw std::invalid_argument("unknown gold_source '" + s + "'");
}

struct DatasetConfig {
  int n_samples = 1000;
  int n_categories = 4;
  int n_values = 8;
  ValueType value_type = ValueType::kSingle;
  int vocab_size = 128;
  int patches = 16;  // P
  int d_img = 16;
  int t_max = 16;
  double frac_image_source = 0.3;
  double label_noise_rate = 0.0;
  double background_distractor_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    auto rate = [](double r, const char* name) {
      if (!(r >= 0.0 && r <= 1.0))
        throw std::invalid_argument(std::string(name) + " must be in [0,1]");
    };
    rate(frac_image_source, "frac_image_source");
    rate(label_noise_rate, "label_noise_rate");
    rate(background_distractor_rate, "background_distractor_rate");
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    if (n_categories < 1) throw std::invalid_argument("n_categories must be >= 1");
    if (n_values < 2) throw std::invalid_argument("n_values must be >= 2");
    if (frac_image_source == 1.0 && value_type == ValueType::kMultiple && n_values < 2)
      throw std::invalid_argument("n_values: all-image multi-value datasets need n_values >= 2");
    if (patches < 4) throw std::invalid_argument("patches must be >= 4");
    if (d_img < 2) throw std::invalid_argument("d_img must be >= 2");
    if (t_max < 8) throw std::invalid_argument("t_max must be >= 8");
    const int needed = 6 + n_categories + 3 * n_values + 4;
    if (vocab_size < needed)
      throw std::invalid_argument("vocab_size must be >= " + std::to_string(needed) +
                                  " for this category/value count");
  }
};

// First line of every dataset file; sample shapes are validated against it.
struct DatasetHeader {
  int version = 1;
  int patches = 0;
  int d_img = 0;
  int t_max = 0;
  int categories = 0;
  int values = 0;
  ValueType value_type = ValueType::kSingle;

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Sample {
  std::string id;
  Mat patches;  // P x d_img feature grid
  std::vector<int> tokens;
  int category_id = 0;
  std::vector<int> weak_label;  // sorted, nonempty
  std::optional<std::vector<int>> gold_label;
  std::optional<GoldSource> gold_source;
  std::optional<bool> noise_flag;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GeneratorOutput {
  Dataset train;
  Dataset test;
  Vocabulary vocab;
  // Generator-internal truth kept out of the file format: which patch rows
  // carry a true-value signature and what the hidden true values are, per
  // sample. Used by diagnostics and the pruning experiments.
  std::vector<std::vector<int>> train_foreground;
  std::vector<std::vector<int>> test_foreground;
  std::vector<std::vector<int>> train_true_values;
  std::vector<std::vector<int>> test_true_values;
};

namespace detail {

inline Vocabulary build_vocabulary(const DatasetConfig& cfg) {
  Vocabulary v;
  v.tokens = {"what", "is", "the", "of", "?", "attr0"};
  for (int c = 0; c < cfg.n_categories; ++c) v.tokens.push_back("cat" + std::to_string(c));
  for (int i = 0; i < cfg.n_values; ++i) {
    const std::string canonical = "val" + std::to_string(i);
    v.values.push_back(canonical);
    v.tokens.push_back(canonical);
    v.synonyms[canonical] = canonical;
    for (char suffix : {'a', 'b'}) {
      const std::string syn = canonical + "~" + suffix;
      v.tokens.push_back(syn);
      v.synonyms[syn] = canonical;
    }
  }
  int filler = 0;
  while (static_cast<int>(v.tokens.size()) < cfg.vocab_size)
    v.tokens.push_back("w" + std::to_string(filler++));
  v.validate();
  return v;
}

// Signature geometry: each value and category owns a fixed random direction.
// Foreground patches combine value and category signatures; background
// patches carry a foreign value signature or plain noise.
struct SignatureBank {
  Mat value_sig;     // V x d_img, unit rows
  Mat category_sig;  // C x d_img, rows scaled to 0.5
};

inline SignatureBank build_signatures(const DatasetConfig& cfg) {
  Rng rng(substream_seed(cfg.seed, 1));
  SignatureBank bank;
  bank.value_sig = Mat(cfg.n_values, cfg.d_img);
  for (int i = 0; i < cfg.n_values; ++i) {
    std::vector<double> raw(cfg.d_img);
    for (auto& x : raw) x = rng.normal();
    auto u = unit_normalized(raw);
    std::copy(u.begin(), u.end(), bank.value_sig.row(i).begin());
  }
  bank.category_sig = Mat(cfg.n_categories, cfg.d_img);
  for (int c = 0; c < cfg.n_categories; ++c) {
    std::vector<double> raw(cfg.d_img);
    for (auto& x : raw) x = rng.normal();
    auto u = unit_normalized(raw);
    for (int j = 0; j < cfg.d_img; ++j) bank.category_sig(c, j) = 0.5 * u[j];
  }
  return bank;
}

// Exact-count assignment: the first round(rate*n) indices of a seeded
// permutation get the tag.
inline std::vector<bool> tag_fraction(int n, double rate, Rng& rng) {
  const int count = static_cast<int>(std::llround(rate * n));
  auto perm = rng.permutation(n);
  std::vector<bool> tag(n, false);
  for (int i = 0; i < count; ++i) tag[perm[i]] = true;
  return tag;
}

}  // namespace detail

inline GeneratorOutput generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const Vocabulary vocab = detail::build_vocabulary(cfg);
  const auto bank = detail::build_signatures(cfg);

  const int n_test = static_cast<int>(std::llround(0.1 * cfg.n_samples));
  const int n_train = cfg.n_samples - n_test;

  constexpr double kJitter = 0.08;
  const int fg_count = std::max(1, cfg.patches / 4);
  const int max_values =
      cfg.value_type == ValueType::kMultiple ? std::min({3, cfg.n_values - 1, fg_count}) : 1;

  auto cat_token = [&](int c) { return vocab.token_id("cat" + std::to_string(c)); };
  auto value_mention = [&](int v, Rng& rng) {
    const std::string& canonical = vocab.values[v];
    switch (rng.integer(3)) {
      case 0: return vocab.token_id(canonical);
      case 1: return vocab.token_id(canonical + "~a");
      default: return vocab.token_id(canonical + "~b");
    }
  };
  const int filler_base = vocab.token_id("w0");
  const int filler_count = cfg.vocab_size - filler_base;

  GeneratorOutput out;
  out.vocab = vocab;
  DatasetHeader header{1,          cfg.patches,  cfg.d_img,     cfg.t_max,
                       cfg.n_categories, cfg.n_values, cfg.value_type};
  out.train.header = header;
  out.test.header = header;

  auto make_split = [&](int count, bool is_test, std::uint64_t tag, const std::string& prefix,
                        Dataset& split, std::vector<std::vector<int>>& foreground,
                        std::vector<std::vector<int>>& true_values) {
    Rng split_rng(substream_seed(cfg.seed, tag));
    const auto image_source = detail::tag_fraction(count, cfg.frac_image_source, split_rng);
    const auto noisy =
        is_test ? std::vector<bool>(count, false) : detail::tag_fraction(count, cfg.label_noise_rate, split_rng);

    for (int i = 0; i < count; ++i) {
      Rng rng(substream_seed(cfg.seed, tag * 0x1000000ULL + static_cast<std::uint64_t>(i)));
      Sample s;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%06d", prefix.c_str(), i);
      s.id = id;
      s.category_id = static_cast<int>(rng.integer(cfg.n_categories));

      // hidden true values
      const int k = 1 + (max_values > 1 ? static_cast<int>(rng.integer(max_values)) : 0);
      std::vector<int> true_vals;
      while (static_cast<int>(true_vals.size()) < k) {
        int v = static_cast<int>(rng.integer(cfg.n_values));
        if (std::find(true_vals.begin(), true_vals.end(), v) == true_vals.end())
          true_vals.push_back(v);
      }
      std::sort(true_vals.begin(), true_vals.end());

      // distractor values mentioned in the text but not true
      const int want_distractors = std::min(2, cfg.n_values - k);
      std::vector<int> distractors;
      while (static_cast<int>(distractors.size()) < want_distractors) {
        int v = static_cast<int>(rng.integer(cfg.n_values));
        if (std::find(true_vals.begin(), true_vals.end(), v) != true_vals.end()) continue;
        if (std::find(distractors.begin(), distractors.end(), v) != distractors.end()) continue;
        distractors.push_back(v);
      }

      const bool from_image = image_source[i];
      std::vector<int> toks;
      toks.push_back(cat_token(s.category_id));
      if (!from_image)
        for (int v : true_vals) toks.push_back(value_mention(v, rng));
      for (int v : distractors) toks.push_back(value_mention(v, rng));
      const int room = cfg.t_max - static_cast<int>(toks.size());
      const int fillers = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(room)));
      for (int f = 0; f < fillers; ++f)
        toks.push_back(filler_base + static_cast<int>(rng.integer(filler_count)));
      rng.shuffle(toks);
      s.tokens = std::move(toks);

      // patch grid
      s.patches = Mat(cfg.patches, cfg.d_img);
      auto patch_perm = rng.permutation(cfg.patches);
      std::vector<int> fg(patch_perm.begin(), patch_perm.begin() + fg_count);
      std::sort(fg.begin(), fg.end());
      for (int slot = 0; slot < fg_count; ++slot) {
        const int p = fg[slot];
        const int v = true_vals[slot % true_vals.size()];
        for (int j = 0; j < cfg.d_img; ++j)
          s.patches(p, j) = bank.value_sig(v, j) + bank.category_sig(s.category_id, j) +
                            kJitter * rng.normal();
      }
      // Background distractors reuse the text-mentioned foreign values, so a
      // wrong value a biased label points at is visible in both modalities.
      const double noise_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_img));
      for (int p = 0; p < cfg.patches; ++p) {
        if (std::find(fg.begin(), fg.end(), p) != fg.end()) continue;
        if (rng.uniform() < cfg.background_distractor_rate) {
          const int v = distractors[rng.integer(distractors.size())];
          for (int j = 0; j < cfg.d_img; ++j)
            s.patches(p, j) = bank.value_sig(v, j) + kJitter * rng.normal();
        } else {
          for (int j = 0; j < cfg.d_img; ++j) s.patches(p, j) = noise_scale * rng.normal();
        }
      }

      if (is_test) {
        s.weak_label = true_vals;
        s.gold_label = true_vals;
        s.gold_source = from_image ? GoldSource::kImage : GoldSource::kText;
      } else if (noisy[i]) {
        s.weak_label = {distractors[rng.integer(distractors.size())]};
        s.noise_flag = true;
      } else {
        s.weak_label = true_vals;
        s.noise_flag = false;
      }

      foreground.push_back(std::move(fg));
      true_values.push_back(std::move(true_vals));
      split.samples.push_back(std::move(s));
    }
  };

  make_split(n_train, false, 2, "train", out.train, out.train_foreground,
             out.train_true_values);
  make_split(n_test, true, 3, "test", out.test, out.test_foreground, out.test_true_values);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence. Line 1 is the header object, every further line one
// sample object.

namespace detail {

inline nlohmann::json header_to_json(const DatasetHeader& h) {
  return nlohmann::json{{"version", h.version}, {"P", h.patches},   {"d_img", h.d_img},
                        {"T_max", h.t_max},     {"C", h.categories}, {"V", h.values},
                        {"value_type", to_string(h.value_type)}};
}

inline DatasetHeader header_from_json(const nlohmann::json& j) {
  DatasetHeader h;
  h.version = j.at("version").get<int>();
  h.patches = j.at("P").get<int>();
  h.d_img = j.at("d_img").get<int>();
  h.t_max = j.at("T_max").get<int>();
  h.categories = j.at("C").get<int>();
  h.values = j.at("V").get<int>();
  h.value_type = value_type_from_string(j.at("value_type").get<std::string>());
  return h;
}

inline nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["id"] = s.id;
  auto patches = nlohmann::json::array();
  for (std::size_t p = 0; p < s.patches.rows; ++p) {
    auto row = nlohmann::json::array();
    for (std::size_t d = 0; d < s.patches.cols; ++d) row.push_back(s.patches(p, d));
    patches.push_back(std::move(row));
  }
  j["patches"] = std::move(patches);
  j["tokens"] = s.tokens;
  j["category_id"] = s.category_id;
  j["weak_label"] = s.weak_label;
  if (s.gold_label) j["gold_label"] = *s.gold_label;
  if (s.gold_source) j["gold_source"] = to_string(*s.gold_source);
  if (s.noise_flag) j["noise_flag"] = *s.noise_flag;
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j, const DatasetHeader& h, int line_no) {
  auto fail = [line_no](const std::string& msg) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": " + msg);
  };
  Sample s;
  s.id = j.at("id").get<std::string>();
  const auto& patches = j.at("patches");
  if (static_cast<int>(patches.size()) != h.patches)
    fail("patch grid has " + std::to_string(patches.size()) + " rows, header says " +
         std::to_string(h.patches));
  s.patches = Mat(h.patches, h.d_img);
  for (int p = 0; p < h.patches; ++p) {
    const auto& row = patches.at(p);
    if (static_cast<int>(row.size()) != h.d_img)
      fail("patch row has " + std::to_string(row.size()) + " entries, header says " +
           std::to_string(h.d_img));
    for (int d = 0; d < h.d_img; ++d) s.patches(p, d) = row.at(d).get<double>();
  }
  s.tokens = j.at("tokens").get<std::vector<int>>();
  if (s.tokens.empty()) fail("empty token sequence");
  if (static_cast<int>(s.tokens.size()) > h.t_max) fail("token sequence exceeds T_max");
  s.category_id = j.at("category_id").get<int>();
  if (s.category_id < 0 || s.category_id >= h.categories) fail("category_id out of range");
  s.weak_label = j.at("weak_label").get<std::vector<int>>();
  if (s.weak_label.empty()) fail("empty weak_label");
  if (j.contains("gold_label")) s.gold_label = j.at("gold_label").get<std::vector<int>>();
  if (j.contains("gold_source"))
    s.gold_source = gold_source_from_string(j.at("gold_source").get<std::string>());
  if (s.gold_label.has_value() != s.gold_source.has_value())
    fail("gold_source must be present exactly when gold_label is");
  if (j.contains("noise_flag")) s.noise_flag = j.at("noise_flag").get<bool>();
  return s;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << detail::header_to_json(ds.header).dump() << '\n';
  for (const auto& s : ds.samples) out << detail::sample_to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1) {
        ds.header = detail::header_from_json(j);
      } else {
        ds.samples.push_back(detail::sample_from_json(j, ds.header, line_no));
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0) throw std::runtime_error("empty dataset file: " + path.string());
  return ds;
}

}  // namespace mavex
