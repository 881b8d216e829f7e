// Copyright 2026 The polarlayout Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// polarlayout: command-line entry points for corpus generation, pre-training,
// fine-tuning, ablation and attention inspection.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "polar/batch.hpp"
#include "polar/checkpoint.hpp"
#include "polar/document.hpp"
#include "polar/errors.hpp"
#include "polar/kernels.hpp"
#include "polar/keyvalue.hpp"
#include "polar/manifest.hpp"
#include "polar/model.hpp"
#include "polar/rng.hpp"
#include "polar/synthetic.hpp"
#include "polar/training.hpp"
#include "polar/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string config_path;
  std::string out = "out";
};

// Effective configuration: the config file with command-line overrides applied.
struct Setup {
  polar::KeyValueDoc doc;
  polar::training::RunConfig run;
  std::string preset;
};

Setup load_setup(const Globals& g) {
  Setup s;
  try {
    if (!g.config_path.empty()) s.doc = polar::KeyValueDoc::load(g.config_path);
    s.run = polar::training::RunConfig::read(s.doc);
    // Validates model.* keys early; the vocabulary size is not known yet.
    polar::model::ModelConfig::read(s.doc, polar::data::Vocab::kNumSpecial + 1);
  } catch (const polar::ParseError& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const polar::ContractError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (g.seed) s.run.seed = *g.seed;
  if (g.threads) s.run.threads = *g.threads;
  if (s.run.threads < 1) throw UsageError("--threads must be >= 1");
  s.preset = s.doc.get_string("model.preset", "desk");
  return s;
}

polar::model::ModelConfig model_config(const Setup& s, int vocab_size) {
  try {
    return polar::model::ModelConfig::read(s.doc, vocab_size);
  } catch (const polar::ParseError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

std::string config_hash(const polar::model::ModelConfig* model, const polar::training::RunConfig& run) {
  polar::KeyValueDoc doc;
  if (model) model->write(doc);
  run.write(doc);
  return polar::hex64(doc.hash());
}

class Output {
 public:
  Output(fs::path dir, polar::RunManifest manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

  void begin() {
    fs::create_directories(dir_);
    manifest_.started_at = polar::utc_timestamp();
    flush_manifest();
  }
  void finish() {
    manifest_.finished_at = polar::utc_timestamp();
    flush_manifest();
  }
  fs::path path(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void write(const std::string& name, const std::string& contents) { polar::write_file_atomic(path(name), contents); }
  std::string fingerprint() const { return manifest_.fingerprint(); }
  polar::RunManifest& manifest() { return manifest_; }

 private:
  void flush_manifest() {
    manifest_.extra["outputs"] = files_;
    polar::write_manifest(dir_ / "manifest.json", manifest_);
  }

  fs::path dir_;
  polar::RunManifest manifest_;
  std::vector<std::string> files_;
};

polar::RunManifest base_manifest(const std::string& command, const Setup& s, const std::string& hash) {
  polar::RunManifest m;
  m.command = command;
  m.config_hash = hash;
  m.seed = s.run.seed;
  m.preset = s.preset;
  m.version = POLAR_VERSION;
  m.threads = s.run.threads;
  return m;
}

std::string json_line(ordered_json j) { return j.dump() + "\n"; }

std::vector<polar::data::Document> read_docs(const std::string& path) {
  return polar::data::parse_documents(fs::path(path));
}

std::string documents_text(const std::vector<polar::data::Document>& docs) {
  std::ostringstream out;
  polar::data::write_documents(out, docs);
  return out.str();
}

std::string format_f1(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string kind;
  long docs = 64;
  double eval_fraction = 0.25;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const Setup s = load_setup(g);
  polar::data::CorpusKind kind;
  try {
    kind = polar::data::parse_corpus_kind(a.kind);
  } catch (const polar::Error& e) {
    throw UsageError(e.what());
  }
  if (a.docs < 1) throw UsageError("--docs must be >= 1");
  if (a.eval_fraction < 0.0 || a.eval_fraction >= 1.0) throw UsageError("--eval-fraction must lie in [0, 1)");

  const auto corpus = polar::data::generate_synthetic_corpus(kind, static_cast<std::size_t>(a.docs), s.run.seed,
                                                             a.eval_fraction);
  polar::RunManifest m = base_manifest("synth", s, config_hash(nullptr, s.run));
  m.extra["kind"] = a.kind;
  m.extra["docs"] = a.docs;
  m.extra["eval_fraction"] = a.eval_fraction;
  Output out(g.out, m);
  out.begin();
  out.write("corpus.jsonl", documents_text(corpus.all()));
  out.write("train.jsonl", documents_text(corpus.train));
  out.write("eval.jsonl", documents_text(corpus.eval));
  out.finish();
  std::cout << "wrote " << corpus.train.size() << " train and " << corpus.eval.size() << " eval documents to "
            << g.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string corpus;
  bool resume = false;
  int min_freq = 1;
};

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  long best_step = -1;
  const std::regex pattern("step-([0-9]+)\\.ckpt");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch match;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, match, pattern)) continue;
    const long step = std::stol(match[1]);
    if (step > best_step) {
      best_step = step;
      best = entry.path();
    }
  }
  return best;
}

int cmd_pretrain(const Globals& g, const PretrainArgs& a) {
  const Setup s = load_setup(g);
  if (a.min_freq < 1) throw UsageError("--min-freq must be >= 1");
  const fs::path ckpt_dir = fs::path(g.out) / "checkpoints";
  std::optional<polar::Checkpoint> resume;
  if (a.resume) {
    const auto latest = latest_checkpoint(ckpt_dir);
    if (!latest) throw UsageError("--resume: no checkpoint under " + ckpt_dir.string());
    resume = polar::load_checkpoint(*latest);
  }

  const auto docs = read_docs(a.corpus);
  const polar::data::Vocab vocab =
      resume ? polar::training::vocab_from_checkpoint(*resume) : polar::data::build_vocab(docs, a.min_freq);
  const polar::model::ModelConfig cfg = model_config(s, vocab.size());
  polar::kernels::set_num_threads(s.run.threads);

  polar::RunManifest m = base_manifest("pretrain", s, config_hash(&cfg, s.run));
  m.extra["corpus"] = a.corpus;
  m.extra["documents"] = docs.size();
  m.extra["vocab_size"] = vocab.size();
  m.extra["parameters"] = polar::model::count_parameters(cfg);
  m.extra["rng"] = polar::CounterRng::kAlgorithm;
  Output out(g.out, m);
  out.begin();
  const std::string fp = out.fingerprint();

  const fs::path log_path = out.path("metrics.jsonl");
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw polar::IoError("cannot open " + log_path.string());
  polar::training::PretrainHooks hooks;
  hooks.checkpoint_dir = ckpt_dir;
  hooks.resume = resume ? &*resume : nullptr;
  hooks.on_step = [&](const polar::training::StepMetrics& sm) {
    log << json_line({{"manifest", fp}, {"step", sm.step}, {"loss", sm.loss}, {"mlm", sm.mlm}, {"lop", sm.lop},
                      {"lr", sm.lr}, {"grad_norm", sm.grad_norm}});
    log.flush();
    std::ostringstream line;
    line << "step " << sm.step + 1 << " loss " << sm.loss << " mlm " << sm.mlm << " lop " << sm.lop << " ("
         << std::fixed << std::setprecision(1) << sm.wall_seconds << "s)\n";
    std::cerr << line.str();
  };
  const auto result = polar::training::run_pretraining(docs, vocab, cfg, s.run, hooks);
  log.close();

  polar::Checkpoint ck =
      polar::training::make_checkpoint(result.encoder, vocab, s.run, &result.optimizer, result.steps_done);
  ck.manifest["run_manifest"] = fp;
  polar::save_checkpoint(out.path("model.ckpt"), ck);
  out.write("eval.json", ordered_json{{"manifest", fp},
                                      {"steps", result.steps_done},
                                      {"mlm_loss", result.eval.mlm_loss},
                                      {"mlm_accuracy", result.eval.mlm_accuracy},
                                      {"lop_loss", result.eval.lop_loss},
                                      {"lop_accuracy", result.eval.lop_accuracy}}
                                         .dump(2) +
                             "\n");
  out.finish();
  std::cout << "steps " << result.steps_done << "/" << result.total_steps << "  mlm loss " << result.eval.mlm_loss
            << "  mlm acc " << result.eval.mlm_accuracy << "  lop acc " << result.eval.lop_accuracy << "\n";
  return 0;
}

// ---------------------------------------------------------------- finetune

struct FinetuneArgs {
  std::string checkpoint;
  std::string train;
  std::string eval;
  std::optional<int> seeds;
};

int cmd_finetune(const Globals& g, const FinetuneArgs& a) {
  Setup s = load_setup(g);
  if (a.seeds) {
    if (*a.seeds < 1) throw UsageError("--seeds must be >= 1");
    s.run.finetune.seeds = *a.seeds;
  }
  const auto train = read_docs(a.train);
  const auto eval = read_docs(a.eval);
  std::optional<polar::model::Encoder> initial;
  std::optional<polar::data::Vocab> vocab;
  if (!a.checkpoint.empty()) {
    const polar::Checkpoint ck = polar::load_checkpoint(a.checkpoint);
    vocab = polar::training::vocab_from_checkpoint(ck);
    initial = polar::training::encoder_from_checkpoint(ck);
  } else {
    vocab = polar::data::build_vocab(train, 1);
    initial.emplace(model_config(s, vocab->size()), polar::derive_seed(s.run.seed, {0x1417}));
  }
  const polar::data::LabelSet labels = polar::data::LabelSet::from_documents(train);
  polar::kernels::set_num_threads(s.run.threads);

  polar::RunManifest m = base_manifest("finetune", s, config_hash(&initial->config(), s.run));
  m.preset = initial->config().preset;
  m.extra["checkpoint"] = a.checkpoint;
  m.extra["train"] = a.train;
  m.extra["eval"] = a.eval;
  Output out(g.out, m);
  out.begin();
  const std::string fp = out.fingerprint();

  ordered_json report{{"manifest", fp}, {"labels", labels.tags()}, {"runs", ordered_json::array()}};
  std::vector<std::uint64_t> seeds;
  std::vector<double> scores;
  std::optional<polar::model::Encoder> first_model;
  for (int k = 0; k < s.run.finetune.seeds; ++k) {
    const std::uint64_t seed = polar::derive_seed(s.run.seed, {static_cast<std::uint64_t>(k)});
    auto result = polar::training::run_finetuning(train, eval, *vocab, labels, *initial, s.run, seed);
    ordered_json epochs = ordered_json::array();
    for (const auto& e : result.epochs) {
      epochs.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"precision", e.eval.precision},
                        {"recall", e.eval.recall},
                        {"f1", e.eval.f1}});
    }
    report["runs"].push_back({{"seed", seed}, {"f1", result.final_eval.f1}, {"epochs", epochs}});
    std::cerr << "seed " << k << " f1 " << format_f1(result.final_eval.f1) << "\n";
    seeds.push_back(seed);
    scores.push_back(result.final_eval.f1);
    if (!first_model) first_model = std::move(result.encoder);
  }
  const auto summary = polar::training::summarize_seeds(seeds, scores);
  report["mean_f1"] = summary.mean;
  if (summary.stdev) report["stdev_f1"] = *summary.stdev;

  std::ostringstream text;
  text << "seed,f1\n";
  for (std::size_t i = 0; i < scores.size(); ++i) text << seeds[i] << ',' << format_f1(scores[i]) << '\n';
  text << "mean," << format_f1(summary.mean) << '\n';
  if (summary.stdev) text << "stdev," << format_f1(*summary.stdev) << '\n';

  polar::Checkpoint ck = polar::training::make_checkpoint(*first_model, *vocab, s.run, nullptr, 0, &labels);
  ck.manifest["run_manifest"] = fp;
  polar::save_checkpoint(out.path("model.ckpt"), ck);
  out.write("finetune.json", report.dump(2) + "\n");
  out.write("finetune.csv", text.str());
  out.finish();
  std::cout << text.str();
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::vector<std::string> datasets;
  bool sweep = false;
  std::optional<int> seeds;
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  Setup s = load_setup(g);
  if (a.seeds) {
    if (*a.seeds < 1) throw UsageError("--seeds must be >= 1");
    s.run.finetune.seeds = *a.seeds;
  }
  std::vector<std::array<std::string, 3>> specs;
  const std::regex pattern("([^=]+)=([^,]+),(.+)");
  for (const std::string& d : a.datasets) {
    std::smatch match;
    if (!std::regex_match(d, match, pattern)) throw UsageError("--dataset expects NAME=TRAIN,EVAL, got '" + d + "'");
    for (int i : {2, 3}) {
      if (!fs::is_regular_file(match[i].str())) throw UsageError("no such file: " + match[i].str());
    }
    specs.push_back({match[1], match[2], match[3]});
  }

  std::vector<polar::training::AblationDataset> datasets;
  std::vector<polar::data::Document> pooled;
  for (const auto& [name, train, eval] : specs) {
    datasets.push_back({name, read_docs(train), read_docs(eval)});
    pooled.insert(pooled.end(), datasets.back().train.begin(), datasets.back().train.end());
  }
  const polar::data::Vocab vocab = polar::data::build_vocab(pooled, 1);
  const polar::model::ModelConfig cfg = model_config(s, vocab.size());
  polar::kernels::set_num_threads(s.run.threads);

  polar::RunManifest m = base_manifest("ablate", s, config_hash(&cfg, s.run));
  m.extra["datasets"] = a.datasets;
  m.extra["sweep"] = a.sweep;
  Output out(g.out, m);
  out.begin();
  const auto table = polar::training::run_ablation(datasets, vocab, cfg, s.run, a.sweep);
  ordered_json j{{"manifest", out.fingerprint()}, {"columns", table.columns}, {"rows", table.rows}, {"f1", table.f1}};
  out.write("ablation.txt", table.to_text());
  out.write("ablation.csv", table.to_csv());
  out.write("ablation.json", j.dump(2) + "\n");
  out.finish();
  std::cout << table.to_text();
  return 0;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string checkpoint;
  std::string document;
  int index = 0;
  int layer = 0;
  int head = 0;
};

std::string grid(std::size_t n, const std::function<std::string(std::size_t, std::size_t)>& cell) {
  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << cell(i, j);
    out << '\n';
  }
  return out.str();
}

std::string number(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

int cmd_inspect(const Globals& g, const InspectArgs& a) {
  const Setup s = load_setup(g);
  const polar::Checkpoint ck = polar::load_checkpoint(a.checkpoint);
  const polar::model::Encoder encoder = polar::training::encoder_from_checkpoint(ck);
  const polar::data::Vocab vocab = polar::training::vocab_from_checkpoint(ck);
  const auto& cfg = encoder.config();
  if (a.layer < 0 || a.layer >= cfg.n_layers) {
    throw UsageError("--layer " + std::to_string(a.layer) + " out of range [0, " + std::to_string(cfg.n_layers) + ")");
  }
  if (a.head < 0 || a.head >= cfg.n_heads) {
    throw UsageError("--head " + std::to_string(a.head) + " out of range [0, " + std::to_string(cfg.n_heads) + ")");
  }
  const auto docs = read_docs(a.document);
  if (a.index < 0 || static_cast<std::size_t>(a.index) >= docs.size()) {
    throw UsageError("--index " + std::to_string(a.index) + " out of range; file holds " +
                     std::to_string(docs.size()) + " documents");
  }
  if (docs[a.index].tokens.empty()) throw UsageError("document '" + docs[a.index].id + "' has no tokens");
  polar::kernels::set_num_threads(s.run.threads);

  polar::data::EncodeOptions options{cfg.max_seq_len, cfg.binning, nullptr, false};
  const polar::data::EncodedDoc encoded = polar::data::encode(docs[a.index], vocab, options);
  const polar::data::Batch batch = polar::data::collate(encoded);
  polar::model::AttentionCapture capture;
  capture.layer = a.layer;
  polar::Tape tape = polar::Tape::inference();
  encoder.forward(tape, batch, {}, &capture);

  polar::RunManifest m = base_manifest("inspect", s, config_hash(&cfg, s.run));
  m.preset = cfg.preset;
  m.extra["checkpoint"] = a.checkpoint;
  m.extra["document"] = docs[a.index].id;
  m.extra["layer"] = a.layer;
  m.extra["head"] = a.head;
  m.extra["tokens"] = encoded.token_ids.size();
  Output out(g.out, m);
  out.begin();

  const std::size_t n = encoded.length();
  const std::size_t base = static_cast<std::size_t>(a.head) * n * n;  // batch of one
  auto at = [&](const std::vector<double>& v) {
    return [&v, base, n](std::size_t i, std::size_t j) { return number(v[base + i * n + j]); };
  };
  out.write("dist_bins.csv", grid(n, [&](std::size_t i, std::size_t j) {
              return std::to_string(encoded.polar_bins(i, j).dist_bin);
            }));
  out.write("angle_bins.csv", grid(n, [&](std::size_t i, std::size_t j) {
              return std::to_string(encoded.polar_bins(i, j).angle_bin);
            }));
  const bool cartesian = cfg.bias_mode == polar::model::BiasMode::kCartesian;
  out.write(cartesian ? "bias_dx.csv" : "bias_distance.csv", grid(n, at(capture.first_bias)));
  out.write(cartesian ? "bias_dy.csv" : "bias_angle.csv", grid(n, at(capture.second_bias)));
  out.write("attention.csv", grid(n, at(capture.probs)));
  out.finish();
  std::cout << "wrote " << n << "x" << n << " grids for layer " << a.layer << " head " << a.head << " to " << g.out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polarlayout: layout-aware document encoder with polar relative attention"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  int threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides run.seed)");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads for the kernels (overrides run.threads)");
  app.add_option("--config", g.config_path, "Key-value run config")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a labeled synthetic corpus with train/eval splits");
  synth_cmd->add_option("--kind", synth.kind, "tables or forms")->required();
  synth_cmd->add_option("--docs", synth.docs, "Number of documents")->capture_default_str();
  synth_cmd->add_option("--eval-fraction", synth.eval_fraction, "Share of documents held out")->capture_default_str();

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Pre-train with masked language modeling and 1D position recovery");
  pre_cmd->add_option("--corpus", pre.corpus, "Document file (JSONL)")->required()->check(CLI::ExistingFile);
  pre_cmd->add_flag("--resume", pre.resume, "Continue from the latest checkpoint under OUT/checkpoints");
  pre_cmd->add_option("--min-freq", pre.min_freq, "Minimum word count for the vocabulary")->capture_default_str();

  FinetuneArgs ft;
  std::optional<int> ft_seeds;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune for token labeling over several seeds");
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "Pre-trained checkpoint (random init when absent)")
      ->check(CLI::ExistingFile);
  ft_cmd->add_option("--train", ft.train, "Labeled training documents")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--eval", ft.eval, "Labeled evaluation documents")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--seeds", ft.seeds, "Number of fine-tuning seeds (overrides finetune.seeds)");

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Compare runs with and without absolute 2D position embeddings");
  ab_cmd->add_option("--dataset", ab.datasets, "NAME=TRAIN,EVAL (repeatable)")->required();
  ab_cmd->add_flag("--sweep", ab.sweep, "Add polar, cartesian and none bias columns");
  ab_cmd->add_option("--seeds", ab.seeds, "Number of fine-tuning seeds per cell (overrides finetune.seeds)");

  InspectArgs in;
  auto* in_cmd = app.add_subcommand("inspect", "Dump bin matrices, bias terms and attention weights as CSV grids");
  in_cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  in_cmd->add_option("--document", in.document, "Document file (JSONL)")->required()->check(CLI::ExistingFile);
  in_cmd->add_option("--index", in.index, "Document index within the file")->capture_default_str();
  in_cmd->add_option("--layer", in.layer, "Layer")->capture_default_str();
  in_cmd->add_option("--head", in.head, "Head")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  if (*seed_opt) g.seed = seed;
  if (*threads_opt) g.threads = threads;

  try {
    if (*synth_cmd) return cmd_synth(g, synth);
    if (*pre_cmd) return cmd_pretrain(g, pre);
    if (*ft_cmd) return cmd_finetune(g, ft);
    if (*ab_cmd) return cmd_ablate(g, ab);
    if (*in_cmd) return cmd_inspect(g, in);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const polar::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
