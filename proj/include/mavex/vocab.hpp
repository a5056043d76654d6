#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mavex {

// Token table, canonical value table and the surface->canonical synonym map.
// The synonym map is functional (one canonical per surface) and every
// canonical value maps to itself.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<std::string> values;
  std::map<std::string, std::string> synonyms;

  int token_id(const std::string& surface) const {
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] == surface) return static_cast<int>(i);
    return -1;
  }

  const std::string& token_surface(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size())
      throw std::out_of_range("unknown token id " + std::to_string(id));
    return tokens[static_cast<std::size_t>(id)];
  }

  int value_id(const std::string& canonical) const {
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] == canonical) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    for (const auto& v : values) {
      auto it = synonyms.find(v);
      if (it == synonyms.end() || it->second != v)
        throw std::invalid_argument("vocabulary: canonical value '" + v +
                                    "' must map to itself in the synonym map");
    }
    for (const auto& [surface, canonical] : synonyms) {
      if (value_id(canonical) < 0)
        throw std::invalid_argument("vocabulary: synonym '" + surface +
                                    "' maps to unknown value '" + canonical + "'");
    }
  }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

inline nlohmann::json vocabulary_to_json(const Vocabulary& v) {
  return nlohmann::json{{"tokens", v.tokens}, {"values", v.values}, {"synonyms", v.synonyms}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.tokens = j.at("tokens").get<std::vector<std::string>>();
  v.values = j.at("values").get<std::vector<std::string>>();
  v.synonyms = j.at("synonyms").get<std::map<std::string, std::string>>();
  v.validate();
  return v;
}

inline void save_vocabulary(const Vocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << vocabulary_to_json(v).dump() << '\n';
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  return vocabulary_from_json(j);
}

}  // namespace mavex
