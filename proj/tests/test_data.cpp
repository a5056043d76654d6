#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "mavex/data.hpp"

using namespace mavex;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mavex_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every value id a token sequence mentions, resolved through the synonym map.
std::set<int> mentioned_values(const Sample& s, const Vocabulary& vocab) {
  std::set<int> out;
  for (int t : s.tokens) {
    const auto it = vocab.synonyms.find(vocab.token_surface(t));
    if (it != vocab.synonyms.end()) out.insert(vocab.value_id(it->second));
  }
  return out;
}

}  // namespace

TEST_CASE("zero noise rate marks every train sample clean") {
  auto cfg = fixtures::small_config(7);
  cfg.n_samples = 100;
  cfg.label_noise_rate = 0.0;
  const auto gen = generate_dataset(cfg);
  REQUIRE(gen.train.samples.size() == 90);
  for (const auto& s : gen.train.samples) {
    REQUIRE(s.noise_flag.has_value());
    CHECK_FALSE(*s.noise_flag);
  }
}

TEST_CASE("image-source count is exactly round(frac * n_test)") {
  DatasetConfig cfg = fixtures::small_config(11);
  cfg.n_samples = 1000;
  cfg.frac_image_source = 0.3;
  const auto gen = generate_dataset(cfg);
  REQUIRE(gen.test.samples.size() == 100);

  int tagged = 0;
  int visible = 0;  // independent scan of the emitted samples
  for (const auto& s : gen.test.samples) {
    REQUIRE(s.gold_source.has_value());
    if (*s.gold_source == GoldSource::kImage) ++tagged;
    const auto mentioned = mentioned_values(s, gen.vocab);
    bool all_present = true;
    for (int v : *s.gold_label)
      if (!mentioned.count(v)) all_present = false;
    if (!all_present) ++visible;
  }
  CHECK(tagged == 30);
  CHECK(visible == 30);
}

TEST_CASE("identical config and seed produce byte-identical files") {
  const auto cfg = fixtures::small_config(3, true);
  const auto a = generate_dataset(cfg);
  const auto b = generate_dataset(cfg);
  const auto pa = temp_file("det_a.jsonl");
  const auto pb = temp_file("det_b.jsonl");
  save_dataset(a.train, pa);
  save_dataset(b.train, pb);
  CHECK(read_bytes(pa) == read_bytes(pb));
  CHECK(a.test == b.test);
}

TEST_CASE("source bookkeeping holds for every test sample") {
  for (std::uint64_t seed : {1ull, 2ull}) {
    for (bool multiple : {false, true}) {
      auto cfg = fixtures::small_config(seed, multiple);
      cfg.n_samples = 300;
      const auto gen = generate_dataset(cfg);
      for (const auto& s : gen.test.samples) {
        const auto mentioned = mentioned_values(s, gen.vocab);
        if (*s.gold_source == GoldSource::kText) {
          for (int v : *s.gold_label) CHECK(mentioned.count(v) == 1);
        } else {
          for (int v : *s.gold_label) CHECK(mentioned.count(v) == 0);
        }
      }
    }
  }
}

TEST_CASE("noise bookkeeping: flag set exactly when weak label differs from truth") {
  auto cfg = fixtures::small_config(5);
  cfg.n_samples = 400;
  cfg.label_noise_rate = 0.25;
  const auto gen = generate_dataset(cfg);
  REQUIRE(gen.train_true_values.size() == gen.train.samples.size());
  int noisy = 0;
  for (std::size_t i = 0; i < gen.train.samples.size(); ++i) {
    const auto& s = gen.train.samples[i];
    const bool differs = s.weak_label != gen.train_true_values[i];
    REQUIRE(s.noise_flag.has_value());
    CHECK(*s.noise_flag == differs);
    if (differs) {
      ++noisy;
      // textual-bias mechanism: the wrong label is mentioned in the text
      const auto mentioned = mentioned_values(s, gen.vocab);
      for (int v : s.weak_label) CHECK(mentioned.count(v) == 1);
    }
  }
  CHECK(noisy == std::llround(0.25 * gen.train.samples.size()));
}

TEST_CASE("round-trip identity") {
  const auto gen = generate_dataset(fixtures::small_config(9, true));
  const auto path = temp_file("roundtrip.jsonl");
  save_dataset(gen.test, path);
  const auto loaded = load_dataset(path);
  CHECK(loaded == gen.test);

  SECTION("single sample") {
    Dataset one{gen.train.header, {gen.train.samples[0]}};
    save_dataset(one, path);
    CHECK(load_dataset(path) == one);
  }
}

TEST_CASE("empty dataset writes a header-only file and loads back empty") {
  Dataset empty;
  empty.header = DatasetHeader{1, 4, 3, 8, 2, 2, ValueType::kSingle};
  const auto path = temp_file("empty.jsonl");
  save_dataset(empty, path);
  const auto text = read_bytes(path);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  const auto loaded = load_dataset(path);
  CHECK(loaded.samples.empty());
  CHECK(loaded.header == empty.header);
}

TEST_CASE("truncated JSON is reported with its line number") {
  const auto gen = generate_dataset(fixtures::small_config(4));
  const auto path = temp_file("truncated.jsonl");
  save_dataset(Dataset{gen.train.header, {gen.train.samples[0], gen.train.samples[1]}}, path);
  auto text = read_bytes(path);
  // chop the third line (second sample) in half
  const auto second_line = text.find('\n', text.find('\n') + 1);
  text = text.substr(0, second_line + 20);
  std::ofstream(path, std::ios::binary) << text;
  CHECK_THROWS_WITH(load_dataset(path), Catch::Matchers::ContainsSubstring("line 3"));
}

TEST_CASE("patch dimension mismatch against the header is rejected") {
  const auto gen = generate_dataset(fixtures::small_config(4));
  Dataset ds{gen.train.header, {gen.train.samples[0]}};
  ds.header.d_img += 1;
  const auto path = temp_file("mismatch.jsonl");
  save_dataset(ds, path);
  CHECK_THROWS_WITH(load_dataset(path), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("config validation names the offending field") {
  auto cfg = fixtures::small_config(1);
  cfg.label_noise_rate = 1.5;
  CHECK_THROWS_WITH(generate_dataset(cfg),
                    Catch::Matchers::ContainsSubstring("label_noise_rate"));
  cfg = fixtures::small_config(1);
  cfg.n_values = 1;
  CHECK_THROWS_WITH(generate_dataset(cfg), Catch::Matchers::ContainsSubstring("n_values"));
  cfg = fixtures::small_config(1);
  cfg.patches = 3;
  CHECK_THROWS_WITH(generate_dataset(cfg), Catch::Matchers::ContainsSubstring("patches"));
}

TEST_CASE("structural invariants across seeds and value types") {
  for (std::uint64_t seed : {0ull, 13ull}) {
    for (bool multiple : {false, true}) {
      const auto gen = generate_dataset(fixtures::small_config(seed, multiple));
      gen.vocab.validate();
      auto check_split = [&](const Dataset& split, bool is_test) {
        for (const auto& s : split.samples) {
          CHECK(!s.weak_label.empty());
          CHECK(!s.tokens.empty());
          CHECK(static_cast<int>(s.tokens.size()) <= split.header.t_max);
          CHECK(s.gold_label.has_value() == s.gold_source.has_value());
          CHECK(s.gold_label.has_value() == is_test);
          CHECK(s.patches.rows == static_cast<std::size_t>(split.header.patches));
          CHECK(s.patches.cols == static_cast<std::size_t>(split.header.d_img));
          if (multiple) {
            CHECK(s.weak_label.size() <= 3);
          } else if (is_test || !*s.noise_flag) {
            CHECK(s.weak_label.size() == 1);
          }
        }
      };
      check_split(gen.train, false);
      check_split(gen.test, true);
    }
  }
}

TEST_CASE("vocabulary round-trips through its JSON file") {
  const auto gen = generate_dataset(fixtures::small_config(2));
  const auto path = temp_file("vocab.json");
  save_vocabulary(gen.vocab, path);
  CHECK(load_vocabulary(path) == gen.vocab);
}
