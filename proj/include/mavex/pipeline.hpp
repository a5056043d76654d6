#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mavex/data.hpp"
#include "mavex/encoders.hpp"
#include "mavex/fusion_generation.hpp"
#include "mavex/linalg.hpp"
#include "mavex/model.hpp"
#include "mavex/pruning.hpp"
#include "mavex/vocab.hpp"

namespace mavex {

struct Toggles {
  bool s1 = true;
  bool s2 = true;
  bool s3 = true;
};

// Token ids the question prompt needs, resolved once per vocabulary.
struct PromptContext {
  int attribute_token = -1;
  std::vector<int> category_tokens;

  static PromptContext from_vocab(const Vocabulary& vocab, int n_categories,
                                  const std::string& attribute = "attr0") {
    PromptContext ctx;
    ctx.attribute_token = vocab.token_id(attribute);
    if (ctx.attribute_token < 0)
      throw std::invalid_argument("vocabulary lacks attribute token '" + attribute + "'");
    for (int c = 0; c < n_categories; ++c) {
      const int id = vocab.token_id("cat" + std::to_string(c));
      if (id < 0)
        throw std::invalid_argument("vocabulary lacks category token cat" + std::to_string(c));
      ctx.category_tokens.push_back(id);
    }
    return ctx;
  }
};

// Everything the backward pass needs for one sample.
struct SampleForward {
  EncodingResult visual;
  EncodingResult textual;
  Mat patch_rows;            // visual sequence without its CLS row
  CategoryForward category;  // only populated when pruning is active
  Mat pruned;                // visual sequence after gating (or a copy when S2 is off)
  Mat keys;                  // pruned visual ++ textual
  EncodingResult prompt;
  Prompt prompt_tokens;
  FuseResult fused;
};

inline Mat vstack(const Mat& top, const Mat& bottom) {
  Mat out(top.rows + bottom.rows, top.cols);
  std::copy(top.a.begin(), top.a.end(), out.a.begin());
  std::copy(bottom.a.begin(), bottom.a.end(), out.a.begin() + static_cast<long>(top.a.size()));
  return out;
}

inline SampleForward forward_sample(const ModelParams& params, const Vocabulary& vocab,
                                    const PromptContext& ctx, const Sample& sample, bool s2) {
  SampleForward f;
  f.visual = encode_image(params.enc, sample.patches);
  f.textual = encode_text(params.enc, sample.tokens);
  const std::size_t P = sample.patches.rows;
  f.patch_rows = Mat(P, f.visual.seq.cols);
  for (std::size_t p = 0; p < P; ++p)
    std::copy(f.visual.seq.row(p + 1).begin(), f.visual.seq.row(p + 1).end(),
              f.patch_rows.row(p).begin());
  if (s2) {
    f.category = category_forward(params.enc, f.patch_rows);
    f.pruned = prune(f.visual.seq, f.category.scores);
  } else {
    f.pruned = f.visual.seq;
  }
  f.keys = vstack(f.pruned, f.textual.seq);
  f.prompt_tokens =
      build_prompt(ctx.attribute_token, ctx.category_tokens.at(sample.category_id), vocab);
  f.prompt = encode_text(params.enc, f.prompt_tokens.tokens);
  f.fused = fuse(params.fusion, f.prompt.seq, f.keys);
  return f;
}

// Teacher-forcing target: the weak label's value ids in canonical sorted
// order, then END.
inline std::vector<int> label_sequence(const Sample& sample, const ModelDims& dims) {
  std::vector<int> seq = sample.weak_label;
  std::sort(seq.begin(), seq.end());
  seq.erase(std::unique(seq.begin(), seq.end()), seq.end());
  seq.push_back(dims.end_symbol());
  return seq;
}

inline Generation predict_generation(const ModelParams& params, const ModelDims& dims,
                                     const Vocabulary& vocab, const PromptContext& ctx,
                                     const Sample& sample, bool s2) {
  const auto f = forward_sample(params, vocab, ctx, sample, s2);
  return decode(params.dec, f.fused.grounded, dims);
}

inline std::vector<int> predict_sample(const ModelParams& params, const ModelDims& dims,
                                       const Vocabulary& vocab, const PromptContext& ctx,
                                       const Sample& sample, bool s2) {
  return prediction_set(predict_generation(params, dims, vocab, ctx, sample, s2));
}

// Unit-normalized visual CLS rows for a whole split (the S3 feature snapshot
// and the retrieval features).
inline Mat visual_cls_features(const EncoderParams& enc, const std::vector<Sample>& samples) {
  if (samples.empty()) return {};
  Mat out(samples.size(), enc.w_img.rows);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = encode_image(enc, samples[i].patches);
    std::copy(r.cls_norm.begin(), r.cls_norm.end(), out.row(i).begin());
  }
  return out;
}

inline Mat textual_cls_features(const EncoderParams& enc, const std::vector<Sample>& samples) {
  if (samples.empty()) return {};
  Mat out(samples.size(), enc.tok.cols);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = encode_text(enc, samples[i].tokens);
    std::copy(r.cls_norm.begin(), r.cls_norm.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace mavex
