// Acceptance suite: one test case per criterion, one printed pass/fail line
// each. The desk-scale experiments (criteria 6-9) share two trained runs per
// seed.
#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "mavex/config.hpp"
#include "mavex/evaluation.hpp"
#include "mavex/training.hpp"
#include "oracles.hpp"

using namespace mavex;

namespace {

void report_line(int id, const std::string& text, bool ok) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, text.c_str());
  std::fflush(stdout);
  CHECK(ok);
}

// ---------------------------------------------------------------------------
// Desk-scale experiment runs shared by criteria 6-9.

struct SeedRuns {
  GeneratorOutput gen;
  TrainResult full;
  TrainResult backbone;
  ModelDims dims;
};

DatasetConfig experiment_dataset(std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.n_samples = 2000;
  cfg.n_categories = 4;
  cfg.n_values = 8;
  cfg.value_type = ValueType::kSingle;
  cfg.vocab_size = 128;
  cfg.patches = 16;
  cfg.d_img = 16;
  cfg.t_max = 16;
  cfg.frac_image_source = 0.3;
  cfg.label_noise_rate = 0.2;
  cfg.background_distractor_rate = 0.5;
  cfg.seed = seed;
  return cfg;
}

TrainConfig experiment_train(std::uint64_t seed, Toggles toggles) {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.lr = 5e-3;
  cfg.weight_decay = 0.05;
  cfg.alpha = 0.4;
  cfg.tau = 0.07;
  cfg.queue_capacity = 512;
  cfg.knn_k = 10;
  cfg.regularization_epoch = 2;
  cfg.momentum_coef = 0.995;
  cfg.seed = seed;
  cfg.toggles = toggles;
  cfg.d_h = 32;
  return cfg;
}

const SeedRuns& experiment(std::uint64_t seed) {
  static std::map<std::uint64_t, SeedRuns> cache;
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  SeedRuns runs;
  runs.gen = generate_dataset(experiment_dataset(seed));
  runs.dims = dims_for(runs.gen.train.header, 32,
                       static_cast<int>(runs.gen.vocab.tokens.size()));
  runs.full = train(runs.gen.train, runs.gen.vocab,
                    experiment_train(seed, Toggles{true, true, true}));
  runs.backbone = train(runs.gen.train, runs.gen.vocab,
                        experiment_train(seed, Toggles{false, false, false}));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("  [seed %llu] trained full + backbone in %.1fs\n",
              static_cast<unsigned long long>(seed), secs);
  std::fflush(stdout);
  return cache.emplace(seed, std::move(runs)).first->second;
}

std::vector<EvalRecord> eval_records(const GeneratorOutput& gen, const TrainResult& run,
                                     const ModelDims& dims, bool s2) {
  const auto ctx = PromptContext::from_vocab(gen.vocab, dims.categories);
  std::vector<EvalRecord> records;
  for (const auto& s : gen.test.samples) {
    EvalRecord r;
    r.id = s.id;
    r.prediction = predict_sample(run.state.online, dims, gen.vocab, ctx, s, s2);
    r.gold = *s.gold_label;
    std::sort(r.gold.begin(), r.gold.end());
    r.gold_source = s.gold_source;
    r.category_id = s.category_id;
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("criterion 1: gradient fidelity") {
  const auto t0 = std::chrono::steady_clock::now();
  // scale triples isolate each term of the composite objective over the same
  // all-on architecture
  const struct {
    const char* name;
    double sc, ct, rmlm;
  } parts[] = {{"L_sc", 1, 0, 0}, {"L_ct", 0, 1, 0}, {"L_rmlm", 0, 0, 1}, {"total", 1, 1, 1}};
  bool ok = true;
  double worst = 0.0;
  for (const auto& part : parts) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto inst = fixtures::make_instance(seed, seed % 2 == 1);
      const Toggles all{true, true, true};
      ModelParams analytic = zero_params(inst.state.dims);
      batch_loss(inst.batch, inst.state, inst.gen.vocab, inst.ctx, inst.weights, all, 0.07,
                 0.4, part.sc, part.ct, part.rmlm, &analytic);
      auto loss = [&]() {
        return batch_loss(inst.batch, inst.state, inst.gen.vocab, inst.ctx, inst.weights, all,
                          0.07, 0.4, part.sc, part.ct, part.rmlm, nullptr)
            .components.total;
      };
      const double err = oracles::max_fd_error(inst.state.online, analytic, loss, 1e-5);
      worst = std::max(worst, err);
      ok = ok && err < 1e-4;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = ok && secs < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "gradients match central differences (worst rel err %.2e, %.1fs)", worst, secs);
  report_line(1, buf, ok);
}

TEST_CASE("criterion 2: distribution invariants and the InfoNCE reduction") {
  bool ok = true;
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t B = 2 + rng.integer(5);
    const std::size_t fill = rng.integer(7);
    const std::size_t d_h = 2 + rng.integer(7);
    const auto r = sc_loss(fixtures::random_unit_rows(B, d_h, 10000 + trial),
                           fixtures::random_unit_rows(B, d_h, 20000 + trial),
                           fixtures::random_unit_rows(B, d_h, 30000 + trial),
                           fixtures::random_unit_rows(B, d_h, 40000 + trial),
                           fixtures::random_unit_rows(fill, d_h, 50000 + trial),
                           fixtures::random_unit_rows(fill, d_h, 60000 + trial),
                           0.03 + rng.uniform(), rng.uniform(), false);
    for (const Mat* m : {&r.targets.pt_i2t, &r.targets.pt_t2i, &r.targets.d_i2t,
                         &r.targets.d_t2i}) {
      for (std::size_t row = 0; row < m->rows; ++row) {
        double sum = 0.0;
        for (std::size_t k = 0; k < m->cols; ++k) sum += (*m)(row, k);
        ok = ok && std::abs(sum - 1.0) < 1e-9;
      }
    }
  }
  double worst_gap = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t B = 2 + trial % 7;
    const std::size_t d_h = 4 + trial % 9;
    const auto ov = fixtures::random_unit_rows(B, d_h, 700 + trial);
    const auto ot = fixtures::random_unit_rows(B, d_h, 800 + trial);
    const auto mv = fixtures::random_unit_rows(B, d_h, 900 + trial);
    const auto mt = fixtures::random_unit_rows(B, d_h, 950 + trial);
    const Mat empty(0, d_h);
    const auto r = sc_loss(ov, ot, mv, mt, empty, empty, 0.07, 0.0, false);
    worst_gap = std::max(worst_gap, std::abs(r.loss - oracles::infonce(ov, ot, mv, mt, 0.07)));
  }
  ok = ok && worst_gap < 1e-9;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "1000-instance row-sum fuzz and alpha=0 InfoNCE match (gap %.2e)", worst_gap);
  report_line(2, buf, ok);
}

TEST_CASE("criterion 3: neighborhood oracle equivalence") {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 20 + static_cast<int>(rng.integer(181));  // up to 200
    const int k = std::vector<int>{1, 5, 10}[trial % 3];
    Mat features(N, 6);
    for (auto& x : features.a) x = rng.normal();
    std::vector<std::vector<int>> labels(N), predictions(N);
    for (int i = 0; i < N; ++i) {
      labels[i] = {static_cast<int>(rng.integer(5))};
      predictions[i] = {static_cast<int>(rng.integer(5))};
      if (rng.uniform() < 0.3) {
        labels[i].push_back(static_cast<int>(rng.integer(5)));
        std::sort(labels[i].begin(), labels[i].end());
        labels[i].erase(std::unique(labels[i].begin(), labels[i].end()), labels[i].end());
      }
    }
    const int epoch = static_cast<int>(rng.integer(5));
    const auto table = compute_reliability(features, labels, predictions, k, epoch, 2);
    for (int n = 0; n < N; ++n) {
      const auto neighbors = oracles::knn_naive(features, n, k);
      ok = ok && knn_visual(features, n, k) == neighbors;
      const auto cohort = label_consensus(labels, n);
      const double sv = double(intersection_size(neighbors, cohort)) / k;
      ok = ok && table.rows[n].s_v == sv;
      if (epoch >= 2) {
        const auto pred_cohort = label_consensus(predictions, n);
        const int inter = intersection_size(pred_cohort, cohort);
        const int uni = int(pred_cohort.size() + cohort.size()) - inter;
        const double sp = uni == 0 ? 1.0 : double(inter) / uni;
        ok = ok && table.rows[n].s_p && *table.rows[n].s_p == sp;
        ok = ok && table.rows[n].s == 0.5 * (sv + sp);
      } else {
        ok = ok && !table.rows[n].s_p && table.rows[n].s == sv;
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = ok && secs < 30.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "50 random instances agree exactly with the O(N^2) oracle (%.1fs)",
                secs);
  report_line(3, buf, ok);
}

TEST_CASE("criterion 4: queue semantics against the replay oracle") {
  bool ok = true;
  for (std::size_t capacity : {4ul, 512ul}) {
    MomentumQueue q(capacity, 6);
    oracles::ReplayQueue oracle(capacity);
    Rng rng(1000 + capacity);
    std::size_t total = 0;
    int round = 0;
    while (total < 10000) {
      const std::size_t rows = rng.integer(17);
      const auto batch = fixtures::random_unit_rows(rows, 6, 5000 * capacity + round++);
      q.enqueue(batch);
      oracle.enqueue(batch);
      total += rows;
      ok = ok && q.contents() == oracle.contents(6) && q.fill() == oracle.items.size();
    }
  }
  report_line(4, "randomized enqueue sequences match the replay list exactly", ok);
}

TEST_CASE("criterion 5: evaluation harness against the confusion oracle") {
  bool ok = true;
  // hand-derived fixture
  {
    std::vector<EvalRecord> records(3);
    records[0].prediction = {0};
    records[0].gold = {0};
    records[1].prediction = {0};
    records[1].gold = {1};
    records[2].prediction = {1};
    records[2].gold = {1};
    const auto rep = macro_prf(records, ValueType::kSingle);
    ok = ok && std::abs(rep.macro_precision - 0.75) < 1e-12 &&
         std::abs(rep.macro_recall - 0.75) < 1e-12 &&
         std::abs(rep.macro_f1 - 2.0 / 3.0) < 1e-12;
  }
  // randomized fixtures
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const ValueType vt = trial % 2 == 0 ? ValueType::kSingle : ValueType::kMultiple;
    std::vector<EvalRecord> records;
    const int n = 10 + static_cast<int>(rng.integer(100));
    for (int i = 0; i < n; ++i) {
      EvalRecord r;
      r.gold = {static_cast<int>(rng.integer(7))};
      if (vt == ValueType::kMultiple && rng.uniform() < 0.5)
        r.gold.push_back(static_cast<int>(rng.integer(7)));
      std::sort(r.gold.begin(), r.gold.end());
      r.gold.erase(std::unique(r.gold.begin(), r.gold.end()), r.gold.end());
      for (std::uint64_t p = rng.integer(3); p > 0; --p)
        r.prediction.push_back(static_cast<int>(rng.integer(7)));
      std::sort(r.prediction.begin(), r.prediction.end());
      r.prediction.erase(std::unique(r.prediction.begin(), r.prediction.end()),
                         r.prediction.end());
      r.gold_source = rng.uniform() < 0.5 ? GoldSource::kText : GoldSource::kImage;
      records.push_back(std::move(r));
    }
    const auto a = macro_prf(records, vt);
    const auto b = oracles::macro_oracle(records, vt);
    ok = ok && a.macro_precision == b.macro_precision && a.macro_recall == b.macro_recall &&
         a.macro_f1 == b.macro_f1;
    for (const auto& [v, c] : a.per_class)
      ok = ok && c.tp == b.per_class.at(v).tp && c.fp == b.per_class.at(v).fp &&
           c.fn == b.per_class.at(v).fn;
    // GAP row correctness on the same split
    const auto sr = source_aware_report(records, vt);
    if (sr.text && sr.image) {
      ok = ok && sr.gap &&
           sr.gap->f1 == sr.text->macro_f1 - sr.image->macro_f1 &&
           sr.gap->precision == sr.text->macro_precision - sr.image->macro_precision &&
           sr.gap->recall == sr.text->macro_recall - sr.image->macro_recall;
    } else {
      ok = ok && !sr.gap;
    }
  }
  report_line(5, "hand fixture, 20 randomized fixtures and GAP rows all agree", ok);
}

TEST_CASE("criterion 6: noise downweighting separates clean from noisy") {
  int hits = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto& runs = experiment(seed);
    const int last_epoch = experiment_train(seed, Toggles{}).epochs - 1;  // >= E+2
    double clean = 0.0, noisy = 0.0;
    int n_clean = 0, n_noisy = 0;
    for (const auto& r : runs.full.weight_history) {
      if (r.epoch != last_epoch) continue;
      if (r.noise_flag && *r.noise_flag) {
        noisy += r.s;
        ++n_noisy;
      } else {
        clean += r.s;
        ++n_clean;
      }
    }
    const double margin = clean / n_clean - noisy / n_noisy;
    detail << " seed" << seed << "=" << std::fixed << std::setprecision(3) << margin;
    if (margin >= 0.10) ++hits;
  }
  report_line(6, "mean reliability margin clean-noisy >= 0.10 (" + detail.str() + " )",
              hits >= 2);
}

TEST_CASE("criterion 7: the full model shrinks the source gap") {
  int hits = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto& runs = experiment(seed);
    const auto full_records = eval_records(runs.gen, runs.full, runs.dims, true);
    const auto base_records = eval_records(runs.gen, runs.backbone, runs.dims, false);
    const auto full_rep = source_aware_report(full_records, runs.gen.test.header.value_type);
    const auto base_rep = source_aware_report(base_records, runs.gen.test.header.value_type);
    const double full_gap = full_rep.gap ? full_rep.gap->f1 : 0.0;
    const double base_gap = base_rep.gap ? base_rep.gap->f1 : 0.0;
    detail << " seed" << seed << ": full=" << std::fixed << std::setprecision(3) << full_gap
           << " backbone=" << base_gap;
    if (full_gap < base_gap) ++hits;
  }
  report_line(7, "source-gap F1 strictly smaller than the bare backbone (" + detail.str() + " )",
              hits >= 2);
}

TEST_CASE("criterion 8: learned gates favor foreground patches") {
  int hits = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto& runs = experiment(seed);
    double fg = 0.0, bg = 0.0;
    int n_fg = 0, n_bg = 0;
    for (std::size_t i = 0; i < runs.gen.test.samples.size(); ++i) {
      const auto& s = runs.gen.test.samples[i];
      const auto enc = encode_image(runs.full.state.online.enc, s.patches);
      Mat patch_rows(s.patches.rows, enc.seq.cols);
      for (std::size_t p = 0; p < s.patches.rows; ++p)
        std::copy(enc.seq.row(p + 1).begin(), enc.seq.row(p + 1).end(),
                  patch_rows.row(p).begin());
      const auto f = category_forward(runs.full.state.online.enc, patch_rows);
      const auto& fg_idx = runs.gen.test_foreground[i];
      for (std::size_t p = 0; p < s.patches.rows; ++p) {
        const bool is_fg =
            std::find(fg_idx.begin(), fg_idx.end(), static_cast<int>(p)) != fg_idx.end();
        (is_fg ? fg : bg) += sigmoid(f.scores[p]);
        (is_fg ? n_fg : n_bg) += 1;
      }
    }
    const double diff = fg / n_fg - bg / n_bg;
    detail << " seed" << seed << "=" << std::fixed << std::setprecision(3) << diff;
    if (diff > 0.0) ++hits;
  }
  report_line(8, "mean gate on foreground exceeds background (" + detail.str() + " )",
              hits >= 2);
}

TEST_CASE("criterion 9: trained retrieval beats five times chance") {
  int hits = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto& runs = experiment(seed);
    const auto& test = runs.gen.test.samples;
    const Mat img = visual_cls_features(runs.full.state.online.enc, test);
    const Mat txt = textual_cls_features(runs.full.state.online.enc, test);
    const auto m = retrieval_eval(img, txt);
    const double bound = 5.0 / static_cast<double>(test.size());
    detail << " seed" << seed << ": T@1=" << std::fixed << std::setprecision(3) << m.t_at_1
           << " I@1=" << m.i_at_1;
    if (m.t_at_1 > bound && m.i_at_1 > bound) ++hits;
  }
  report_line(9, "T@1 and I@1 above 5/N on held-out pairs (" + detail.str() + " )", hits >= 2);
}

TEST_CASE("criterion 10: byte-identical reruns") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "mavex_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto run_once = [&](const fs::path& tag) {
    auto dcfg = fixtures::small_config(17);
    dcfg.n_samples = 100;
    const auto gen = generate_dataset(dcfg);
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 4;
    tcfg.lr = 5e-3;
    tcfg.queue_capacity = 16;
    tcfg.knn_k = 5;
    tcfg.regularization_epoch = 2;
    tcfg.seed = 17;
    tcfg.d_h = 8;
    const auto result = train(gen.train, gen.vocab, tcfg);
    Checkpoint ckpt;
    ckpt.state = result.state;
    ckpt.dataset_header = gen.train.header;
    save_checkpoint(ckpt, tag.string() + "_checkpoint.json");
    const auto dims = result.state.dims;
    const auto ctx = PromptContext::from_vocab(gen.vocab, dims.categories);
    std::vector<EvalRecord> records;
    for (const auto& s : gen.test.samples) {
      EvalRecord r;
      r.id = s.id;
      r.prediction = predict_sample(result.state.online, dims, gen.vocab, ctx, s, true);
      r.gold = *s.gold_label;
      r.gold_source = s.gold_source;
      records.push_back(std::move(r));
    }
    const auto rep = source_aware_report(records, gen.test.header.value_type);
    std::ofstream(tag.string() + "_report.json")
        << source_report_to_json(rep).dump(2) << "\n";
    std::ofstream(tag.string() + "_report.csv") << report_to_csv(rep, gen.vocab);
    std::ofstream(tag.string() + "_metrics.csv") << metrics_to_csv(result.metrics);
  };
  run_once(dir / "a");
  run_once(dir / "b");

  auto bytes = [&](const std::string& name) {
    std::ifstream in(dir / name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  bool ok = true;
  for (const char* suffix :
       {"_checkpoint.json", "_report.json", "_report.csv", "_metrics.csv"}) {
    const auto a = bytes(std::string("a") + suffix);
    ok = ok && !a.empty() && a == bytes(std::string("b") + suffix);
  }
  report_line(10, "identical config and seed reproduce checkpoints and reports byte-for-byte",
              ok);
}
