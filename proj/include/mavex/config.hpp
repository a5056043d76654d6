#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mavex/data.hpp"
#include "mavex/training.hpp"

namespace mavex {

// User-induced failures exit with code 1; everything else is internal (2).
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Flat key=value file; '#' starts a comment.
inline KeyValues parse_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config file " + path.string());
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UserError(path.string() + " line " + std::to_string(line_no) +
                      ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      // dataset
      "n_samples", "n_categories", "n_values", "value_type", "vocab_size", "patches", "d_img",
      "t_max", "frac_image_source", "label_noise_rate", "background_distractor_rate", "seed",
      // training
      "epochs", "batch_size", "lr", "weight_decay", "alpha", "tau", "queue_capacity", "knn_k",
      "regularization_epoch", "momentum_coef", "d_h", "s1", "s2", "s3", "scale_sc", "scale_ct",
      "scale_rmlm",
      // paths
      "data_dir", "out_dir"};
  return keys;
}

// Environment overrides: PV2_<KEY> in upper case, e.g. PV2_LABEL_NOISE_RATE.
inline void apply_env_overrides(KeyValues& kv) {
  for (const auto& key : known_config_keys()) {
    std::string env = "PV2_";
    for (char c : key) env += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* value = std::getenv(env.c_str())) kv[key] = value;
  }
}

struct RunConfig {
  DatasetConfig data;
  TrainConfig train;
  std::string data_dir = "data";
  std::string out_dir = "out";
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text);

template <>
inline int parse_number<int>(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UserError(key + ": '" + text + "' is not an integer");
  }
}

template <>
inline double parse_number<double>(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UserError(key + ": '" + text + "' is not a number");
  }
}

template <>
inline std::uint64_t parse_number<std::uint64_t>(const std::string& key,
                                                 const std::string& text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UserError(key + ": '" + text + "' is not a non-negative integer");
  }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw UserError(key + ": '" + text + "' is not a boolean");
}

}  // namespace detail

inline RunConfig make_run_config(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    (void)value;
    bool known = false;
    for (const auto& k : known_config_keys()) known |= k == key;
    if (!known) throw UserError("unknown config key '" + key + "'");
  }
  RunConfig rc;
  auto geti = [&](const char* key, int& slot) {
    if (auto it = kv.find(key); it != kv.end()) slot = detail::parse_number<int>(key, it->second);
  };
  auto getd = [&](const char* key, double& slot) {
    if (auto it = kv.find(key); it != kv.end())
      slot = detail::parse_number<double>(key, it->second);
  };
  auto getb = [&](const char* key, bool& slot) {
    if (auto it = kv.find(key); it != kv.end()) slot = detail::parse_bool(key, it->second);
  };
  geti("n_samples", rc.data.n_samples);
  geti("n_categories", rc.data.n_categories);
  geti("n_values", rc.data.n_values);
  if (auto it = kv.find("value_type"); it != kv.end()) {
    try {
      rc.data.value_type = value_type_from_string(it->second);
    } catch (const std::invalid_argument&) {
      throw UserError("value_type: expected SINGLE or MULTIPLE, got '" + it->second + "'");
    }
  }
  geti("vocab_size", rc.data.vocab_size);
  geti("patches", rc.data.patches);
  geti("d_img", rc.data.d_img);
  geti("t_max", rc.data.t_max);
  getd("frac_image_source", rc.data.frac_image_source);
  getd("label_noise_rate", rc.data.label_noise_rate);
  getd("background_distractor_rate", rc.data.background_distractor_rate);
  if (auto it = kv.find("seed"); it != kv.end()) {
    rc.data.seed = detail::parse_number<std::uint64_t>("seed", it->second);
    rc.train.seed = rc.data.seed;
  }
  geti("epochs", rc.train.epochs);
  geti("batch_size", rc.train.batch_size);
  getd("lr", rc.train.lr);
  getd("weight_decay", rc.train.weight_decay);
  getd("alpha", rc.train.alpha);
  getd("tau", rc.train.tau);
  geti("queue_capacity", rc.train.queue_capacity);
  geti("knn_k", rc.train.knn_k);
  geti("regularization_epoch", rc.train.regularization_epoch);
  getd("momentum_coef", rc.train.momentum_coef);
  geti("d_h", rc.train.d_h);
  getb("s1", rc.train.toggles.s1);
  getb("s2", rc.train.toggles.s2);
  getb("s3", rc.train.toggles.s3);
  getd("scale_sc", rc.train.scale_sc);
  getd("scale_ct", rc.train.scale_ct);
  getd("scale_rmlm", rc.train.scale_rmlm);
  if (auto it = kv.find("data_dir"); it != kv.end()) rc.data_dir = it->second;
  if (auto it = kv.find("out_dir"); it != kv.end()) rc.out_dir = it->second;
  return rc;
}

// Every resolved key in a fixed order; written into the run directory and
// hashed for its name.
inline std::string canonical_text(const RunConfig& rc) {
  std::ostringstream out;
  out << "alpha=" << format_double(rc.train.alpha) << '\n'
      << "background_distractor_rate=" << format_double(rc.data.background_distractor_rate)
      << '\n'
      << "batch_size=" << rc.train.batch_size << '\n'
      << "d_h=" << rc.train.d_h << '\n'
      << "d_img=" << rc.data.d_img << '\n'
      << "data_dir=" << rc.data_dir << '\n'
      << "epochs=" << rc.train.epochs << '\n'
      << "frac_image_source=" << format_double(rc.data.frac_image_source) << '\n'
      << "knn_k=" << rc.train.knn_k << '\n'
      << "label_noise_rate=" << format_double(rc.data.label_noise_rate) << '\n'
      << "lr=" << format_double(rc.train.lr) << '\n'
      << "momentum_coef=" << format_double(rc.train.momentum_coef) << '\n'
      << "n_categories=" << rc.data.n_categories << '\n'
      << "n_samples=" << rc.data.n_samples << '\n'
      << "n_values=" << rc.data.n_values << '\n'
      << "out_dir=" << rc.out_dir << '\n'
      << "patches=" << rc.data.patches << '\n'
      << "queue_capacity=" << rc.train.queue_capacity << '\n'
      << "regularization_epoch=" << rc.train.regularization_epoch << '\n'
      << "s1=" << (rc.train.toggles.s1 ? 1 : 0) << '\n'
      << "s2=" << (rc.train.toggles.s2 ? 1 : 0) << '\n'
      << "s3=" << (rc.train.toggles.s3 ? 1 : 0) << '\n'
      << "scale_ct=" << format_double(rc.train.scale_ct) << '\n'
      << "scale_rmlm=" << format_double(rc.train.scale_rmlm) << '\n'
      << "scale_sc=" << format_double(rc.train.scale_sc) << '\n'
      << "seed=" << rc.data.seed << '\n'
      << "t_max=" << rc.data.t_max << '\n'
      << "tau=" << format_double(rc.train.tau) << '\n'
      << "value_type=" << to_string(rc.data.value_type) << '\n'
      << "vocab_size=" << rc.data.vocab_size << '\n'
      << "weight_decay=" << format_double(rc.train.weight_decay) << '\n';
  return out.str();
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& rc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx",
                static_cast<unsigned long long>(fnv1a64(canonical_text(rc)) & 0xffffffffULL));
  return buf;
}

}  // namespace mavex
