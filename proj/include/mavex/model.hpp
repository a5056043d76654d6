#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mavex/data.hpp"
#include "mavex/encoders.hpp"
#include "mavex/linalg.hpp"

namespace mavex {

struct ModelDims {
  int d_h = 32;
  int d_img = 16;
  int patches = 16;
  int vocab = 128;
  int categories = 4;
  int values = 8;

  // decoder symbol ids
  int none_symbol() const { return values; }
  int end_symbol() const { return values + 1; }
  int bos_symbol() const { return values + 2; }
  int decoder_symbols() const { return values + 2; }  // output head: values + NONE + END

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

inline ModelDims dims_for(const DatasetHeader& h, int d_h, int vocab) {
  return ModelDims{d_h, h.d_img, h.patches, vocab, h.categories, h.values};
}

struct FusionParams {
  Mat w_q, w_k, w_v;  // d_h x d_h
};

struct DecoderParams {
  Mat emb;                          // (symbols+1) x d_h, last row is BOS
  Mat w_sq, w_sk, w_sv;             // causal self-attention
  Mat w_cq, w_ck, w_cv;             // cross-attention over the grounded sequence
  Mat w_out;                        // symbols x d_h
  Mat b_out;                        // 1 x symbols
};

struct ModelParams {
  EncoderParams enc;
  FusionParams fusion;
  DecoderParams dec;
};

template <class F>
void for_each_tensor(ModelParams& p, F&& f) {
  for_each_tensor(p.enc, f);
  f("fusion.w_q", p.fusion.w_q);
  f("fusion.w_k", p.fusion.w_k);
  f("fusion.w_v", p.fusion.w_v);
  f("dec.emb", p.dec.emb);
  f("dec.w_sq", p.dec.w_sq);
  f("dec.w_sk", p.dec.w_sk);
  f("dec.w_sv", p.dec.w_sv);
  f("dec.w_cq", p.dec.w_cq);
  f("dec.w_ck", p.dec.w_ck);
  f("dec.w_cv", p.dec.w_cv);
  f("dec.w_out", p.dec.w_out);
  f("dec.b_out", p.dec.b_out);
}

template <class F>
void for_each_tensor(const ModelParams& p, F&& f) {
  for_each_tensor(const_cast<ModelParams&>(p), [&](const char* n, Mat& m) {
    f(n, static_cast<const Mat&>(m));
  });
}

inline ModelParams zero_params(const ModelDims& d) {
  ModelParams p;
  const auto h = static_cast<std::size_t>(d.d_h);
  p.enc.w_img = Mat(h, d.d_img);
  p.enc.pos = Mat(d.patches, h);
  p.enc.cls_img = Mat(1, h);
  p.enc.tok = Mat(d.vocab, h);
  p.enc.cls_txt = Mat(1, h);
  p.enc.mask_w = Mat(1, h);
  p.enc.mask_b = Mat(1, 1);
  p.enc.w_cat = Mat(d.categories, h);
  p.enc.b_cat = Mat(1, d.categories);
  p.fusion.w_q = Mat(h, h);
  p.fusion.w_k = Mat(h, h);
  p.fusion.w_v = Mat(h, h);
  p.dec.emb = Mat(d.decoder_symbols() + 1, h);
  p.dec.w_sq = Mat(h, h);
  p.dec.w_sk = Mat(h, h);
  p.dec.w_sv = Mat(h, h);
  p.dec.w_cq = Mat(h, h);
  p.dec.w_ck = Mat(h, h);
  p.dec.w_cv = Mat(h, h);
  p.dec.w_out = Mat(d.decoder_symbols(), h);
  p.dec.b_out = Mat(1, d.decoder_symbols());
  return p;
}

// Fan-in scaled gaussian init for projections, smaller scales for embeddings;
// biases start at zero.
inline ModelParams init_params(const ModelDims& d, std::uint64_t seed) {
  ModelParams p = zero_params(d);
  Rng rng(substream_seed(seed, 0x11));
  for_each_tensor(p, [&](const char* name, Mat& m) {
    const std::string n(name);
    double scale;
    if (n == "enc.b_cat" || n == "enc.mask_b" || n == "dec.b_out") {
      scale = 0.0;
    } else if (n == "enc.pos") {
      scale = 0.05;
    } else if (n == "enc.tok" || n == "dec.emb" || n == "enc.cls_img" || n == "enc.cls_txt") {
      scale = 0.1;
    } else {
      scale = 1.0 / std::sqrt(static_cast<double>(m.cols));
    }
    for (double& x : m.a) x = scale * rng.normal();
  });
  return p;
}

struct ModelState {
  ModelDims dims;
  ModelParams online;
  EncoderParams momentum;
  MomentumQueue queue_visual;
  MomentumQueue queue_textual;
};

inline ModelState init_model(const ModelDims& dims, std::size_t queue_capacity,
                             std::uint64_t seed) {
  ModelState s;
  s.dims = dims;
  s.online = init_params(dims, seed);
  s.momentum = s.online.enc;
  s.queue_visual = MomentumQueue(queue_capacity, dims.d_h);
  s.queue_textual = MomentumQueue(queue_capacity, dims.d_h);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one JSON file, every tensor keyed by its canonical name.

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.a}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
  Mat m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.a = j.at("data").get<std::vector<double>>();
  if (m.a.size() != m.rows * m.cols)
    throw std::runtime_error("checkpoint tensor data length does not match its shape");
  return m;
}

inline nlohmann::json queue_to_json(const MomentumQueue& q) {
  return nlohmann::json{{"capacity", q.capacity()}, {"dim", q.dim()},
                        {"entries", mat_to_json(q.contents())}};
}

inline MomentumQueue queue_from_json(const nlohmann::json& j) {
  MomentumQueue q(j.at("capacity").get<std::size_t>(), j.at("dim").get<std::size_t>());
  q.enqueue(mat_from_json(j.at("entries")));
  return q;
}

}  // namespace detail

struct Checkpoint {
  int version = 1;
  ModelState state;
  DatasetHeader dataset_header;  // what the model was trained against
  bool s1 = true, s2 = true, s3 = true;
  int epochs_trained = 0;
};

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  nlohmann::json j;
  j["version"] = c.version;
  j["dims"] = {{"d_h", c.state.dims.d_h},     {"d_img", c.state.dims.d_img},
               {"patches", c.state.dims.patches}, {"vocab", c.state.dims.vocab},
               {"categories", c.state.dims.categories}, {"values", c.state.dims.values}};
  j["dataset_header"] = detail::header_to_json(c.dataset_header);
  j["toggles"] = {{"s1", c.s1}, {"s2", c.s2}, {"s3", c.s3}};
  j["epochs_trained"] = c.epochs_trained;
  nlohmann::json online;
  for_each_tensor(c.state.online,
                  [&](const char* name, const Mat& m) { online[name] = detail::mat_to_json(m); });
  j["online"] = std::move(online);
  nlohmann::json momentum;
  for_each_tensor(c.state.momentum,
                  [&](const char* name, const Mat& m) { momentum[name] = detail::mat_to_json(m); });
  j["momentum"] = std::move(momentum);
  j["queue_visual"] = detail::queue_to_json(c.state.queue_visual);
  j["queue_textual"] = detail::queue_to_json(c.state.queue_textual);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  Checkpoint c;
  c.version = j.at("version").get<int>();
  if (c.version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(c.version));
  const auto& d = j.at("dims");
  c.state.dims = ModelDims{d.at("d_h").get<int>(),       d.at("d_img").get<int>(),
                           d.at("patches").get<int>(),   d.at("vocab").get<int>(),
                           d.at("categories").get<int>(), d.at("values").get<int>()};
  c.dataset_header = detail::header_from_json(j.at("dataset_header"));
  c.s1 = j.at("toggles").at("s1").get<bool>();
  c.s2 = j.at("toggles").at("s2").get<bool>();
  c.s3 = j.at("toggles").at("s3").get<bool>();
  c.epochs_trained = j.at("epochs_trained").get<int>();
  c.state.online = zero_params(c.state.dims);
  for_each_tensor(c.state.online, [&](const char* name, Mat& m) {
    Mat loaded = detail::mat_from_json(j.at("online").at(name));
    if (!loaded.same_shape(m))
      throw std::runtime_error(std::string("checkpoint tensor ") + name + " has wrong shape");
    m = std::move(loaded);
  });
  c.state.momentum = c.state.online.enc;
  for_each_tensor(c.state.momentum, [&](const char* name, Mat& m) {
    m = detail::mat_from_json(j.at("momentum").at(name));
  });
  c.state.queue_visual = detail::queue_from_json(j.at("queue_visual"));
  c.state.queue_textual = detail::queue_from_json(j.at("queue_textual"));
  return c;
}

}  // namespace mavex
