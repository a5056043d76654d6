// Shared fixtures for the suites: a tiny generated corpus plus a small model
// state whose queue is already warm.
#pragma once

#include <vector>

#include "mavex/data.hpp"
#include "mavex/pipeline.hpp"
#include "mavex/training.hpp"

namespace fixtures {

inline mavex::DatasetConfig small_config(std::uint64_t seed, bool multiple = false) {
  mavex::DatasetConfig cfg;
  cfg.n_samples = 40;
  cfg.n_categories = 3;
  cfg.n_values = 5;
  cfg.value_type = multiple ? mavex::ValueType::kMultiple : mavex::ValueType::kSingle;
  cfg.vocab_size = 30;
  cfg.patches = 6;
  cfg.d_img = 6;
  cfg.t_max = 10;
  cfg.frac_image_source = 0.3;
  cfg.label_noise_rate = 0.2;
  cfg.background_distractor_rate = 0.2;
  cfg.seed = seed;
  return cfg;
}

struct SmallInstance {
  mavex::GeneratorOutput gen;
  mavex::ModelState state;
  mavex::PromptContext ctx;
  std::vector<const mavex::Sample*> batch;
  std::vector<double> weights;
};

inline SmallInstance make_instance(std::uint64_t seed, bool multiple = false,
                                   bool warm_queue = true, int batch_size = 4) {
  SmallInstance inst;
  inst.gen = mavex::generate_dataset(small_config(seed, multiple));
  const auto dims = mavex::dims_for(inst.gen.train.header, 8,
                                    static_cast<int>(inst.gen.vocab.tokens.size()));
  inst.state = mavex::init_model(dims, 16, seed + 1);
  inst.ctx = mavex::PromptContext::from_vocab(inst.gen.vocab, dims.categories);
  if (warm_queue) {
    mavex::Mat v(3, dims.d_h), t(3, dims.d_h);
    for (int i = 0; i < 3; ++i) {
      const auto& s = inst.gen.train.samples[static_cast<std::size_t>(batch_size + i)];
      const auto mv = mavex::encode_image(inst.state.momentum, s.patches);
      const auto mt = mavex::encode_text(inst.state.momentum, s.tokens);
      std::copy(mv.cls_norm.begin(), mv.cls_norm.end(), v.row(i).begin());
      std::copy(mt.cls_norm.begin(), mt.cls_norm.end(), t.row(i).begin());
    }
    inst.state.queue_visual.enqueue(v);
    inst.state.queue_textual.enqueue(t);
  }
  for (int i = 0; i < batch_size; ++i)
    inst.batch.push_back(&inst.gen.train.samples[static_cast<std::size_t>(i)]);
  inst.weights.assign(inst.batch.size(), 1.0);
  if (inst.weights.size() >= 3) {
    inst.weights[1] = 0.7;
    inst.weights[2] = 0.4;
  }
  return inst;
}

inline mavex::Mat random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  mavex::Rng rng(seed);
  mavex::Mat out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> raw(d);
    for (auto& x : raw) x = rng.normal();
    const auto u = mavex::unit_normalized(raw);
    std::copy(u.begin(), u.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace fixtures
