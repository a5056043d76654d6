// Command-line front end: generate-data, train, evaluate, ablate, report.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mavex/config.hpp"
#include "mavex/evaluation.hpp"
#include "mavex/model.hpp"
#include "mavex/pipeline.hpp"
#include "mavex/training.hpp"

namespace fs = std::filesystem;
using namespace mavex;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool no_s1 = false, no_s2 = false, no_s3 = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--set", o.sets, "override a config key, e.g. --set lr=0.01");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--data", o.data_dir, "dataset directory");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_flag("--no-s1", o.no_s1, "disable the contrastive alignment scheme");
  cmd->add_flag("--no-s2", o.no_s2, "disable attention pruning");
  cmd->add_flag("--no-s3", o.no_s3, "disable neighborhood sample weighting");
}

RunConfig resolve_config(const CommonOpts& o) {
  KeyValues kv;
  if (!o.config_path.empty()) kv = parse_key_values(o.config_path);
  apply_env_overrides(kv);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UserError("--set expects key=value, got '" + s + "'");
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  RunConfig rc = make_run_config(kv);
  if (o.seed) {
    rc.data.seed = *o.seed;
    rc.train.seed = *o.seed;
  }
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.no_s1) rc.train.toggles.s1 = false;
  if (o.no_s2) rc.train.toggles.s2 = false;
  if (o.no_s3) rc.train.toggles.s3 = false;
  if (!o.out_dir.empty()) rc.out_dir = o.out_dir;
  if (!o.data_dir.empty()) rc.data_dir = o.data_dir;
  return rc;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

int cmd_generate(const CommonOpts& opts) {
  const RunConfig rc = resolve_config(opts);
  try {
    rc.data.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  const auto gen = generate_dataset(rc.data);
  fs::create_directories(rc.out_dir);
  save_dataset(gen.train, fs::path(rc.out_dir) / "train.jsonl");
  save_dataset(gen.test, fs::path(rc.out_dir) / "test.jsonl");
  save_vocabulary(gen.vocab, fs::path(rc.out_dir) / "vocab.json");
  int image_source = 0;
  for (const auto& s : gen.test.samples)
    if (s.gold_source && *s.gold_source == GoldSource::kImage) ++image_source;
  int noisy = 0;
  for (const auto& s : gen.train.samples)
    if (s.noise_flag && *s.noise_flag) ++noisy;
  std::cout << "wrote " << gen.train.samples.size() << " train / " << gen.test.samples.size()
            << " test samples to " << rc.out_dir << "\n"
            << "  image-source test samples: " << image_source << "\n"
            << "  noisy train labels:        " << noisy << "\n";
  return 0;
}

struct Corpus {
  Dataset train;
  Dataset test;
  Vocabulary vocab;
  std::uint64_t file_hash = 0;
};

Corpus load_corpus(const std::string& data_dir, bool need_test) {
  const fs::path dir(data_dir);
  Corpus c;
  try {
    c.train = load_dataset(dir / "train.jsonl");
    if (need_test) c.test = load_dataset(dir / "test.jsonl");
    c.vocab = load_vocabulary(dir / "vocab.json");
  } catch (const std::runtime_error& e) {
    throw UserError(e.what());
  }
  c.file_hash = fnv1a64(read_file(dir / "train.jsonl"));
  return c;
}

fs::path run_directory(const RunConfig& rc) {
  return fs::path(rc.out_dir) /
         ("run-" + config_hash(rc) + "-s" + std::to_string(rc.train.seed));
}

struct TrainedRun {
  TrainResult result;
  fs::path dir;
};

TrainedRun run_training(const RunConfig& rc, const Corpus& corpus, bool dump_weights) {
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  TrainedRun run;
  run.result = train(corpus.train, corpus.vocab, rc.train);
  run.dir = run_directory(rc);
  fs::create_directories(run.dir);
  write_file(run.dir / "resolved_config.txt", canonical_text(rc));
  write_file(run.dir / "metrics.csv", metrics_to_csv(run.result.metrics));
  if (dump_weights)
    write_file(run.dir / "weights.csv", weights_to_csv(run.result.weight_history));
  Checkpoint ckpt;
  ckpt.state = run.result.state;
  ckpt.dataset_header = corpus.train.header;
  ckpt.s1 = rc.train.toggles.s1;
  ckpt.s2 = rc.train.toggles.s2;
  ckpt.s3 = rc.train.toggles.s3;
  ckpt.epochs_trained = rc.train.epochs;
  save_checkpoint(ckpt, run.dir / "checkpoint.json");
  return run;
}

int cmd_train(const CommonOpts& opts, bool dump_weights) {
  const RunConfig rc = resolve_config(opts);
  const Corpus corpus = load_corpus(rc.data_dir, false);
  const auto run = run_training(rc, corpus, dump_weights);
  const auto& steps = run.result.metrics.steps;
  std::cout << "run dir: " << run.dir.string() << "\n"
            << "steps:   " << steps.size() << "\n";
  if (!steps.empty())
    std::cout << "final total loss: " << format_double(steps.back().total) << "\n";
  std::cout << "wall seconds: " << run.result.metrics.wall_seconds << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<EvalRecord> predict_records(const Checkpoint& ckpt, const Corpus& corpus) {
  if (corpus.test.samples.empty()) throw UserError("test set is empty");
  const auto& dims = ckpt.state.dims;
  const auto ctx = PromptContext::from_vocab(corpus.vocab, dims.categories);
  std::vector<EvalRecord> records;
  records.reserve(corpus.test.samples.size());
  for (const auto& s : corpus.test.samples) {
    if (!s.gold_label) throw UserError("test sample '" + s.id + "' has no gold label");
    EvalRecord r;
    r.id = s.id;
    r.prediction = predict_sample(ckpt.state.online, dims, corpus.vocab, ctx, s, ckpt.s2);
    r.gold = *s.gold_label;
    std::sort(r.gold.begin(), r.gold.end());
    r.gold_source = s.gold_source;
    r.category_id = s.category_id;
    records.push_back(std::move(r));
  }
  return records;
}

void check_compatibility(const Checkpoint& ckpt, const Dataset& test,
                         const Vocabulary& vocab) {
  const auto& h = ckpt.dataset_header;
  const auto& t = test.header;
  if (h.version != t.version || h.patches != t.patches || h.d_img != t.d_img ||
      h.categories != t.categories || h.values != t.values || h.value_type != t.value_type)
    throw UserError("checkpoint was trained against a different dataset layout");
  if (static_cast<int>(vocab.tokens.size()) != ckpt.state.dims.vocab)
    throw UserError("vocabulary size does not match the checkpoint");
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                 const std::string& out_dir, bool source_aware, bool retrieval,
                 bool dump_masks) {
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(checkpoint_path);
  } catch (const std::runtime_error& e) {
    throw UserError(e.what());
  }
  const Corpus corpus = load_corpus(data_dir, true);
  check_compatibility(ckpt, corpus.test, corpus.vocab);
  const auto records = predict_records(ckpt, corpus);
  const ValueType vt = corpus.test.header.value_type;

  SourceAwareReport report;
  if (source_aware) {
    report = source_aware_report(records, vt);
  } else {
    report.overall = macro_prf(records, vt);
  }
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_file(out / "report.json", source_report_to_json(report).dump(2) + "\n");
  write_file(out / "report.csv", report_to_csv(report, corpus.vocab));
  std::cout << "macro P/R/F1: " << report.overall.macro_precision << " / "
            << report.overall.macro_recall << " / " << report.overall.macro_f1 << "\n";
  if (report.gap)
    std::cout << "source gap (text - image) F1: " << report.gap->f1 << "\n";

  if (retrieval) {
    const Mat img = visual_cls_features(ckpt.state.online.enc, corpus.test.samples);
    const Mat txt = textual_cls_features(ckpt.state.online.enc, corpus.test.samples);
    const auto m = retrieval_eval(img, txt);
    nlohmann::json j{{"t_at_1", m.t_at_1},
                     {"i_at_1", m.i_at_1},
                     {"t_rank_mean", m.t_rank_mean},
                     {"i_rank_mean", m.i_rank_mean},
                     {"r_mean", m.r_mean}};
    write_file(out / "retrieval.json", j.dump(2) + "\n");
    std::cout << "retrieval T@1 " << m.t_at_1 << "  I@1 " << m.i_at_1 << "  R@Mean " << m.r_mean
              << "\n";
  }
  if (dump_masks) {
    std::ostringstream lines;
    for (const auto& s : corpus.test.samples) {
      const auto enc = encode_image(ckpt.state.online.enc, s.patches);
      Mat patch_rows(s.patches.rows, enc.seq.cols);
      for (std::size_t p = 0; p < s.patches.rows; ++p)
        std::copy(enc.seq.row(p + 1).begin(), enc.seq.row(p + 1).end(),
                  patch_rows.row(p).begin());
      const auto f = category_forward(ckpt.state.online.enc, patch_rows);
      nlohmann::json gates = nlohmann::json::array();
      for (double sc : f.scores) gates.push_back(sigmoid(sc));
      lines << nlohmann::json{{"id", s.id}, {"gates", gates}}.dump() << '\n';
    }
    write_file(out / "masks.jsonl", lines.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_ablate(const CommonOpts& opts, const std::vector<std::uint64_t>& seeds,
               bool dump_weights) {
  const RunConfig base = resolve_config(opts);
  const Corpus corpus = load_corpus(base.data_dir, true);
  const ValueType vt = corpus.test.header.value_type;
  const std::vector<std::pair<std::string, Toggles>> variants = {
      {"full", Toggles{true, true, true}},
      {"no-s1", Toggles{false, true, true}},
      {"no-s2", Toggles{true, false, true}},
      {"no-s3", Toggles{true, true, false}}};

  std::ostringstream csv;
  csv << "seed,variant,precision,recall,f1\n";
  nlohmann::json details = nlohmann::json::array();
  std::map<std::string, std::array<double, 3>> sums;
  for (const auto seed : seeds) {
    for (const auto& [name, toggles] : variants) {
      RunConfig rc = base;
      rc.data.seed = seed;
      rc.train.seed = seed;
      rc.train.toggles = toggles;
      const auto run = run_training(rc, corpus, dump_weights);
      Checkpoint ckpt;
      ckpt.state = run.result.state;
      ckpt.dataset_header = corpus.train.header;
      ckpt.s1 = toggles.s1;
      ckpt.s2 = toggles.s2;
      ckpt.s3 = toggles.s3;
      const auto records = predict_records(ckpt, corpus);
      const auto rep = macro_prf(records, vt);
      csv << seed << ',' << name << ',' << format_double(rep.macro_precision) << ','
          << format_double(rep.macro_recall) << ',' << format_double(rep.macro_f1) << '\n';
      details.push_back({{"seed", seed},
                         {"variant", name},
                         {"precision", rep.macro_precision},
                         {"recall", rep.macro_recall},
                         {"f1", rep.macro_f1},
                         {"run_dir", run.dir.string()}});
      auto& s = sums[name];
      s[0] += rep.macro_precision;
      s[1] += rep.macro_recall;
      s[2] += rep.macro_f1;
      std::cout << "seed " << seed << "  " << name << "  F1 " << rep.macro_f1 << "\n";
    }
  }
  const double n = static_cast<double>(seeds.size());
  for (const auto& [name, toggles] : variants) {
    (void)toggles;
    const auto& s = sums[name];
    csv << "avg," << name << ',' << format_double(s[0] / n) << ',' << format_double(s[1] / n)
        << ',' << format_double(s[2] / n) << '\n';
  }
  fs::create_directories(base.out_dir);
  write_file(fs::path(base.out_dir) / "ablation.csv", csv.str());
  nlohmann::json j{{"dataset_hash", corpus.file_hash},
                   {"seeds", seeds},
                   {"rows", std::move(details)}};
  write_file(fs::path(base.out_dir) / "ablation.json", j.dump(2) + "\n");
  std::cout << "dataset hash: " << corpus.file_hash << "\n"
            << "wrote " << (fs::path(base.out_dir) / "ablation.csv").string() << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  bool printed = false;
  if (fs::exists(dir / "report.json")) {
    const auto rep = source_report_from_json(nlohmann::json::parse(read_file(dir / "report.json")));
    auto line = [&](const std::string& name, const MetricsReport& m) {
      std::cout << name << ": P " << m.macro_precision << "  R " << m.macro_recall << "  F1 "
                << m.macro_f1 << "  (" << m.n_records << " records)\n";
    };
    line("overall", rep.overall);
    if (rep.text) line("text   ", *rep.text);
    if (rep.image) line("image  ", *rep.image);
    if (rep.gap)
      std::cout << "GAP    : P " << rep.gap->precision << "  R " << rep.gap->recall << "  F1 "
                << rep.gap->f1 << "\n";
    printed = true;
  }
  if (fs::exists(dir / "ablation.csv")) {
    std::cout << read_file(dir / "ablation.csv");
    printed = true;
  }
  if (fs::exists(dir / "metrics.csv")) {
    const auto text = read_file(dir / "metrics.csv");
    const auto lines = std::count(text.begin(), text.end(), '\n');
    std::cout << "metrics.csv: " << (lines > 0 ? lines - 1 : 0) << " logged steps\n";
    printed = true;
  }
  if (!printed) throw UserError("no report artifacts found under " + run_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy multimodal attribute-value extraction workbench"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  auto* gen = app.add_subcommand("generate-data", "generate a synthetic dataset");
  add_common(gen, gen_opts);

  CommonOpts train_opts;
  bool train_dump_weights = true;
  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(tr, train_opts);
  tr->add_flag("--dump-weights,!--no-dump-weights", train_dump_weights,
               "write per-epoch reliability tables (default on)");

  std::string eval_checkpoint, eval_data = "data", eval_out = "out";
  bool eval_source_aware = false, eval_retrieval = false, eval_masks = false;
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory");
  ev->add_option("--out", eval_out, "report directory");
  ev->add_flag("--source-aware", eval_source_aware, "split metrics by gold source and emit GAP");
  ev->add_flag("--retrieval", eval_retrieval, "emit cross-modal retrieval metrics");
  ev->add_flag("--dump-masks", eval_masks, "write per-sample gate vectors");

  CommonOpts ablate_opts;
  std::vector<std::uint64_t> ablate_seeds{0};
  bool ablate_dump_weights = false;
  auto* ab = app.add_subcommand("ablate", "train and compare the scheme ablations");
  add_common(ab, ablate_opts);
  ab->add_option("--seeds", ablate_seeds, "seeds to train each variant under");
  ab->add_flag("--dump-weights", ablate_dump_weights, "write reliability tables per run");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "print the reports found in a run directory");
  rep->add_option("--run", report_dir, "run or report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_opts);
    if (tr->parsed()) return cmd_train(train_opts, train_dump_weights);
    if (ev->parsed())
      return cmd_evaluate(eval_checkpoint, eval_data, eval_out, eval_source_aware,
                          eval_retrieval, eval_masks);
    if (ab->parsed()) return cmd_ablate(ablate_opts, ablate_seeds, ablate_dump_weights);
    if (rep->parsed()) return cmd_report(report_dir);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
