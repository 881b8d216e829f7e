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

#include "polar/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <iomanip>

#include "polar/errors.hpp"
#include "polar/ops.hpp"
#include "polar/rng.hpp"

namespace polar::training {
namespace {

enum Stream : std::uint64_t {
  kOrderStream = 1,
  kMaskStream = 2,
  kDropoutStream = 3,
  kHeadStream = 4,
  kInitStream = 5,
};

bool decays(const std::string& name) { return !name.ends_with(".bias") && !name.ends_with(".gain"); }

std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t count, CounterRng& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, long epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(derive_seed(seed, {kOrderStream, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<bool> special_flags(const data::EncodedDoc& doc) {
  std::vector<bool> out(doc.length());
  for (std::size_t p = 0; p < doc.length(); ++p) out[p] = doc.is_special(p);
  return out;
}

std::uint64_t plan_seed(const RunConfig& run, std::size_t doc, long epoch) {
  const std::uint64_t e = run.pretrain.static_masking ? 0 : static_cast<std::uint64_t>(epoch);
  return derive_seed(run.seed, {kMaskStream, doc, e});
}

// Writes masked inputs and targets for document `doc` into row block `slot`.
void apply_plan(data::Batch& batch, std::size_t slot, const data::EncodedDoc& encoded, std::uint64_t seed,
                const RunConfig& run, const model::ModelConfig& cfg) {
  const MaskingPlan plan = make_masking_plan(encoded.length(), special_flags(encoded), seed, run.pretrain.rates);
  const std::size_t base = slot * batch.length, n = encoded.length();
  const Corruption mlm = apply_mlm_corruption(std::span(batch.token_ids).subspan(base, n), plan, cfg.vocab_size, seed);
  const Corruption lop =
      apply_lop_masking(std::span(batch.pos_ids).subspan(base, n), plan, cfg.masked_position_index());
  std::copy(mlm.inputs.begin(), mlm.inputs.end(), batch.token_ids.begin() + base);
  std::copy(mlm.targets.begin(), mlm.targets.end(), batch.mlm_targets.begin() + base);
  std::copy(lop.inputs.begin(), lop.inputs.end(), batch.pos_ids.begin() + base);
  std::copy(lop.targets.begin(), lop.targets.end(), batch.lop_targets.begin() + base);
}

data::Batch pretrain_batch(std::span<const data::EncodedDoc> docs, std::span<const std::size_t> members, long epoch,
                           const RunConfig& run, const model::ModelConfig& cfg) {
  std::vector<const data::EncodedDoc*> ptrs;
  for (std::size_t m : members) ptrs.push_back(&docs[m]);
  data::Batch batch = data::collate(ptrs);
  for (std::size_t s = 0; s < members.size(); ++s) {
    apply_plan(batch, s, docs[members[s]], plan_seed(run, members[s], epoch), run, cfg);
  }
  return batch;
}

std::size_t argmax_row(std::span<const double> values, std::size_t row, std::size_t width) {
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(row * width);
  return static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(width)) - first);
}

struct Accumulator {
  double loss_sum = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;

  void add(const Tensor& loss, const Tensor& logits, std::span<const int> targets) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] == data::kIgnoreIndex) continue;
      ++n;
      if (argmax_row(logits.values(), r, logits.cols()) == static_cast<std::size_t>(targets[r])) ++correct;
    }
    loss_sum += loss.item() * static_cast<double>(n);
    count += n;
  }
  double mean_loss() const { return count ? loss_sum / static_cast<double>(count) : 0.0; }
  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

std::vector<data::EncodedDoc> encode_all(std::span<const data::Document> docs, const data::Vocab& vocab,
                                         const model::ModelConfig& cfg, const data::LabelSet* labels) {
  data::EncodeOptions options{cfg.max_seq_len, cfg.binning, labels};
  std::vector<data::EncodedDoc> out;
  out.reserve(docs.size());
  for (const data::Document& d : docs) out.push_back(data::encode(d, vocab, options));
  return out;
}

void check_vocab(const data::Vocab& vocab, const model::ModelConfig& cfg) {
  if (vocab.size() != cfg.vocab_size) {
    throw ContractError("vocabulary has " + std::to_string(vocab.size()) + " entries but the model expects " +
                        std::to_string(cfg.vocab_size));
  }
}

nlohmann::json config_text(const KeyValueDoc& doc) { return doc.serialize(); }

}  // namespace

// ---------------------------------------------------------------- masking

MaskingPlan make_masking_plan(std::size_t token_count, const std::vector<bool>& special, std::uint64_t seed,
                              const MaskingRates& rates) {
  if (special.size() != token_count) {
    throw DimensionError("make_masking_plan: " + std::to_string(special.size()) + " flags for " +
                         std::to_string(token_count) + " tokens");
  }
  std::vector<std::size_t> real;
  for (std::size_t p = 0; p < token_count; ++p) {
    if (!special[p]) real.push_back(p);
  }
  const double n = static_cast<double>(real.size());
  MaskingPlan plan;
  CounterRng mlm_rng(seed, 1);
  plan.mlm_positions = choose(real, static_cast<std::size_t>(std::llround(rates.mlm * n)), mlm_rng);
  for (std::size_t i = 0; i < plan.mlm_positions.size(); ++i) {
    const double u = mlm_rng.uniform();
    plan.mlm_replacement.push_back(u < rates.mask_share                        ? Replacement::kMask
                                   : u < rates.mask_share + rates.random_share ? Replacement::kRandom
                                                                               : Replacement::kKeep);
  }
  CounterRng lop_rng(seed, 2);
  plan.lop_positions = choose(real, static_cast<std::size_t>(std::llround(rates.lop * n)), lop_rng);
  return plan;
}

Corruption apply_mlm_corruption(std::span<const int> token_ids, const MaskingPlan& plan, int vocab_size,
                                std::uint64_t seed) {
  Corruption out{{token_ids.begin(), token_ids.end()}, std::vector<int>(token_ids.size(), data::kIgnoreIndex)};
  CounterRng rng(seed, 3);
  const int n_words = vocab_size - data::Vocab::kNumSpecial;
  for (std::size_t i = 0; i < plan.mlm_positions.size(); ++i) {
    const std::size_t p = plan.mlm_positions[i];
    if (p >= token_ids.size()) throw IndexError("masking plan position " + std::to_string(p) + " out of range");
    out.targets[p] = token_ids[p];
    switch (plan.mlm_replacement[i]) {
      case Replacement::kMask:
        out.inputs[p] = data::Vocab::kMask;
        break;
      case Replacement::kRandom:
        out.inputs[p] = n_words > 0 ? data::Vocab::kNumSpecial + static_cast<int>(rng.below(n_words))
                                    : data::Vocab::kMask;
        break;
      case Replacement::kKeep:
        break;
    }
  }
  return out;
}

Corruption apply_lop_masking(std::span<const int> position_ids, const MaskingPlan& plan, int masked_position_index) {
  Corruption out{{position_ids.begin(), position_ids.end()},
                 std::vector<int>(position_ids.size(), data::kIgnoreIndex)};
  for (std::size_t p : plan.lop_positions) {
    if (p >= position_ids.size()) throw IndexError("masking plan position " + std::to_string(p) + " out of range");
    out.targets[p] = position_ids[p];
    out.inputs[p] = masked_position_index;
  }
  return out;
}

// ---------------------------------------------------------------- losses

PretrainLoss pretrain_loss(Tape& tape, const model::Encoder& encoder, const data::Batch& batch,
                           const model::ForwardOptions& options) {
  const Tensor hidden = encoder.forward(tape, batch, options);
  PretrainLoss out;
  out.mlm_logits = encoder.mlm_head(tape, hidden);
  out.lop_logits = encoder.lop_head(tape, hidden);
  const Tensor mlm = cross_entropy(tape, out.mlm_logits, batch.mlm_targets, data::kIgnoreIndex);
  const Tensor lop = cross_entropy(tape, out.lop_logits, batch.lop_targets, data::kIgnoreIndex);
  out.mlm = mlm.item();
  out.lop = lop.item();
  out.total = add(tape, mlm, lop);
  return out;
}

// ---------------------------------------------------------------- optimization

double lr_at(double step, const Schedule& schedule) {
  const double total = static_cast<double>(schedule.total_steps);
  const double warmup = schedule.warmup_fraction * total;
  if (step <= 0.0) return 0.0;
  if (step >= total) return 0.0;
  if (step < warmup) return schedule.target_lr * step / warmup;
  const double progress = (step - warmup) / (total - warmup);
  return schedule.target_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState make_optimizer_state(std::span<const NamedTensor> params) {
  OptimizerState state;
  for (const auto& [name, t] : params) {
    state.m.emplace_back(t.numel(), 0.0);
    state.v.emplace_back(t.numel(), 0.0);
  }
  return state;
}

double clip_grad_norm(std::span<const NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      Tensor handle = t;
      for (double& g : handle.grad()) g *= factor;
    }
  }
  return norm;
}

void adamw_step(std::span<const NamedTensor> params, OptimizerState& state, double lr, const AdamWConfig& cfg) {
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + name + "'");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    if (!t.has_grad()) continue;
    const bool decay = decays(params[i].first);
    auto w = t.mutable_values();
    const auto g = t.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      if (decay) w[k] -= lr * cfg.weight_decay * w[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------- run configuration

void RunConfig::write(KeyValueDoc& doc) const {
  doc.set("run.seed", std::to_string(seed));
  doc.set_int("run.threads", threads);
  doc.set_double("run.grad_clip", grad_clip);
  doc.set_double("adamw.beta1", adamw.beta1);
  doc.set_double("adamw.beta2", adamw.beta2);
  doc.set_double("adamw.eps", adamw.eps);
  doc.set_double("adamw.weight_decay", adamw.weight_decay);
  doc.set_int("pretrain.epochs", pretrain.epochs);
  doc.set_int("pretrain.batch_size", pretrain.batch_size);
  doc.set_double("pretrain.lr", pretrain.lr);
  doc.set_int("pretrain.steps", pretrain.steps);
  doc.set_double("pretrain.warmup_fraction", pretrain.warmup_fraction);
  doc.set("pretrain.masking", pretrain.static_masking ? "static" : "dynamic");
  doc.set_double("pretrain.mlm_rate", pretrain.rates.mlm);
  doc.set_double("pretrain.lop_rate", pretrain.rates.lop);
  doc.set_int("pretrain.checkpoint_every", pretrain.checkpoint_every);
  doc.set_int("finetune.epochs", finetune.epochs);
  doc.set_int("finetune.batch_size", finetune.batch_size);
  doc.set_double("finetune.lr", finetune.lr);
  doc.set_int("finetune.seeds", finetune.seeds);
  doc.set_bool("ablation.pretrain", ablation_pretrain);
}

RunConfig RunConfig::read(const KeyValueDoc& doc) {
  RunConfig c;
  const std::string seed_text = doc.get_string("run.seed", "0");
  try {
    std::size_t used = 0;
    c.seed = std::stoull(seed_text, &used);
    if (used != seed_text.size() || seed_text.find('-') != std::string::npos) throw std::invalid_argument(seed_text);
  } catch (const std::exception&) {
    throw ParseError("key 'run.seed': '" + seed_text + "' is not an unsigned integer");
  }
  c.threads = static_cast<int>(doc.get_int("run.threads", c.threads));
  c.grad_clip = doc.get_double("run.grad_clip", c.grad_clip);
  c.adamw.beta1 = doc.get_double("adamw.beta1", c.adamw.beta1);
  c.adamw.beta2 = doc.get_double("adamw.beta2", c.adamw.beta2);
  c.adamw.eps = doc.get_double("adamw.eps", c.adamw.eps);
  c.adamw.weight_decay = doc.get_double("adamw.weight_decay", c.adamw.weight_decay);
  c.pretrain.epochs = static_cast<int>(doc.get_int("pretrain.epochs", c.pretrain.epochs));
  c.pretrain.batch_size = static_cast<int>(doc.get_int("pretrain.batch_size", c.pretrain.batch_size));
  c.pretrain.lr = doc.get_double("pretrain.lr", c.pretrain.lr);
  c.pretrain.steps = static_cast<long>(doc.get_int("pretrain.steps", c.pretrain.steps));
  c.pretrain.warmup_fraction = doc.get_double("pretrain.warmup_fraction", c.pretrain.warmup_fraction);
  const std::string masking = doc.get_string("pretrain.masking", "static");
  if (masking != "static" && masking != "dynamic") {
    throw ParseError("key 'pretrain.masking': expected static or dynamic, got '" + masking + "'");
  }
  c.pretrain.static_masking = masking == "static";
  c.pretrain.rates.mlm = doc.get_double("pretrain.mlm_rate", c.pretrain.rates.mlm);
  c.pretrain.rates.lop = doc.get_double("pretrain.lop_rate", c.pretrain.rates.lop);
  c.pretrain.checkpoint_every = static_cast<long>(doc.get_int("pretrain.checkpoint_every", 0));
  c.finetune.epochs = static_cast<int>(doc.get_int("finetune.epochs", c.finetune.epochs));
  c.finetune.batch_size = static_cast<int>(doc.get_int("finetune.batch_size", c.finetune.batch_size));
  c.finetune.lr = doc.get_double("finetune.lr", c.finetune.lr);
  c.finetune.seeds = static_cast<int>(doc.get_int("finetune.seeds", c.finetune.seeds));
  c.ablation_pretrain = doc.get_bool("ablation.pretrain", c.ablation_pretrain);

  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ParseError(std::string("key '") + key + "': " + what);
  };
  require(c.threads >= 1, "run.threads", "must be >= 1");
  require(c.grad_clip >= 0.0, "run.grad_clip", "must be >= 0");
  require(c.pretrain.epochs >= 1, "pretrain.epochs", "must be >= 1");
  require(c.pretrain.batch_size >= 1, "pretrain.batch_size", "must be >= 1");
  require(c.pretrain.lr > 0.0, "pretrain.lr", "must be > 0");
  require(c.pretrain.steps >= 0, "pretrain.steps", "must be >= 0");
  require(c.pretrain.warmup_fraction >= 0.0 && c.pretrain.warmup_fraction < 1.0, "pretrain.warmup_fraction",
          "must lie in [0, 1)");
  require(c.pretrain.rates.mlm >= 0.0 && c.pretrain.rates.mlm <= 1.0, "pretrain.mlm_rate", "must lie in [0, 1]");
  require(c.pretrain.rates.lop >= 0.0 && c.pretrain.rates.lop <= 1.0, "pretrain.lop_rate", "must lie in [0, 1]");
  require(c.pretrain.checkpoint_every >= 0, "pretrain.checkpoint_every", "must be >= 0");
  require(c.finetune.epochs >= 1, "finetune.epochs", "must be >= 1");
  require(c.finetune.batch_size >= 1, "finetune.batch_size", "must be >= 1");
  require(c.finetune.lr > 0.0, "finetune.lr", "must be > 0");
  require(c.finetune.seeds >= 1, "finetune.seeds", "must be >= 1");
  return c;
}

// ---------------------------------------------------------------- checkpoints

Checkpoint make_checkpoint(const model::Encoder& encoder, const data::Vocab& vocab, const RunConfig& run,
                           const OptimizerState* optimizer, long step, const data::LabelSet* labels) {
  KeyValueDoc model_doc, run_doc;
  encoder.config().write(model_doc);
  run.write(run_doc);
  KeyValueDoc both = model_doc;
  for (const auto& [k, v] : run_doc.entries()) both.set(k, v);

  Checkpoint ck;
  ck.manifest["model_config"] = config_text(model_doc);
  ck.manifest["run_config"] = config_text(run_doc);
  ck.manifest["config_hash"] = hex64(both.hash());
  ck.manifest["seed"] = run.seed;
  ck.manifest["step"] = step;
  ck.manifest["rng"] = CounterRng::kAlgorithm;
  ck.manifest["vocab"] = vocab.words();
  ck.manifest["has_optimizer"] = optimizer != nullptr;
  if (labels) ck.manifest["entity_types"] = labels->entity_types();
  const auto params = encoder.parameters().entries();
  for (const auto& [name, t] : params) ck.entries.emplace_back(name, t);
  if (optimizer) {
    ck.manifest["optimizer_step"] = optimizer->step;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Shape& shape = params[i].second.shape();
      ck.entries.emplace_back("optimizer.m/" + params[i].first, Tensor(shape, optimizer->m[i]));
      ck.entries.emplace_back("optimizer.v/" + params[i].first, Tensor(shape, optimizer->v[i]));
    }
  }
  return ck;
}

data::Vocab vocab_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.manifest.contains("vocab")) throw ContractError("checkpoint manifest lacks a vocabulary");
  return data::Vocab(checkpoint.manifest.at("vocab").get<std::vector<std::string>>());
}

model::Encoder encoder_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.manifest.contains("model_config")) throw ContractError("checkpoint manifest lacks a model config");
  const data::Vocab vocab = vocab_from_checkpoint(checkpoint);
  const KeyValueDoc doc = KeyValueDoc::parse(checkpoint.manifest.at("model_config").get<std::string>());
  const model::ModelConfig cfg = model::ModelConfig::read(doc, vocab.size());
  model::ParameterStore params;
  for (const auto& [name, shape] : model::parameter_layout(cfg)) params.add(name, checkpoint.at(name).detached_copy());
  return model::Encoder(cfg, std::move(params));
}

std::optional<OptimizerState> optimizer_from_checkpoint(const Checkpoint& checkpoint, const model::Encoder& encoder) {
  if (!checkpoint.manifest.value("has_optimizer", false)) return std::nullopt;
  OptimizerState state;
  state.step = checkpoint.manifest.at("optimizer_step").get<std::int64_t>();
  for (const auto& [name, t] : encoder.parameters().entries()) {
    const Tensor& m = checkpoint.at("optimizer.m/" + name);
    const Tensor& v = checkpoint.at("optimizer.v/" + name);
    if (m.numel() != t.numel() || v.numel() != t.numel()) {
      throw ContractError("optimizer moments for '" + name + "' do not match the parameter");
    }
    state.m.emplace_back(m.values().begin(), m.values().end());
    state.v.emplace_back(v.values().begin(), v.values().end());
  }
  return state;
}

// ---------------------------------------------------------------- pre-training

PretrainEval evaluate_pretraining(const model::Encoder& encoder, std::span<const data::EncodedDoc> docs,
                                  const RunConfig& run) {
  Accumulator mlm, lop;
  const std::size_t bs = static_cast<std::size_t>(run.pretrain.batch_size);
  for (std::size_t start = 0; start < docs.size(); start += bs) {
    std::vector<std::size_t> members;
    for (std::size_t i = start; i < std::min(docs.size(), start + bs); ++i) members.push_back(i);
    const data::Batch batch = pretrain_batch(docs, members, 0, run, encoder.config());
    Tape tape = Tape::inference();
    const PretrainLoss loss = pretrain_loss(tape, encoder, batch, {});
    mlm.add(Tensor::scalar(loss.mlm), loss.mlm_logits, batch.mlm_targets);
    lop.add(Tensor::scalar(loss.lop), loss.lop_logits, batch.lop_targets);
  }
  return {mlm.mean_loss(), mlm.accuracy(), lop.mean_loss(), lop.accuracy()};
}

PretrainResult run_pretraining(std::span<const data::Document> corpus, const data::Vocab& vocab,
                               const model::ModelConfig& model_cfg, const RunConfig& run,
                               const PretrainHooks& hooks) {
  if (corpus.empty()) throw ContractError("pre-training corpus is empty");
  check_vocab(vocab, model_cfg);
  const std::vector<data::EncodedDoc> docs = encode_all(corpus, vocab, model_cfg, nullptr);
  const std::size_t bs = static_cast<std::size_t>(run.pretrain.batch_size);
  const long per_epoch = static_cast<long>((docs.size() + bs - 1) / bs);
  const long total = run.pretrain.steps > 0 ? run.pretrain.steps : per_epoch * run.pretrain.epochs;
  const Schedule schedule{run.pretrain.lr, static_cast<std::size_t>(total), run.pretrain.warmup_fraction};

  PretrainResult result{model::Encoder(model_cfg, derive_seed(run.seed, {kInitStream})), {}, 0, total, {}, {}};
  if (hooks.resume) {
    KeyValueDoc run_doc;
    run.write(run_doc);
    if (hooks.resume->manifest.value("run_config", std::string()) != run_doc.serialize()) {
      throw ContractError("resume checkpoint was written under a different run config");
    }
    result.encoder = encoder_from_checkpoint(*hooks.resume);
    if (!(result.encoder.config() == model_cfg)) {
      throw ContractError("resume checkpoint was written under a different model config");
    }
    auto opt = optimizer_from_checkpoint(*hooks.resume, result.encoder);
    if (!opt) throw ContractError("resume checkpoint carries no optimizer state");
    result.optimizer = std::move(*opt);
    result.steps_done = hooks.resume->manifest.at("step").get<long>();
  } else {
    result.optimizer = make_optimizer_state(result.encoder.parameters().entries());
  }

  const auto started = std::chrono::steady_clock::now();
  long cached_epoch = -1;
  std::vector<std::size_t> order;
  for (long step = result.steps_done; step < total; ++step) {
    if (hooks.stop_after >= 0 && step >= hooks.stop_after) break;
    const long epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(docs.size(), run.seed, epoch);
      cached_epoch = epoch;
    }
    const std::size_t first = static_cast<std::size_t>(step % per_epoch) * bs;
    const std::span<const std::size_t> members =
        std::span<const std::size_t>(order).subspan(first, std::min(bs, docs.size() - first));
    const data::Batch batch = pretrain_batch(docs, members, epoch, run, model_cfg);

    auto& params = result.encoder.parameters();
    params.zero_grad();
    Tape tape;
    model::ForwardOptions options{true, derive_seed(run.seed, {kDropoutStream, static_cast<std::uint64_t>(step)})};
    const PretrainLoss loss = pretrain_loss(tape, result.encoder, batch, options);
    if (!std::isfinite(loss.total.item())) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss.total);
    const double norm = clip_grad_norm(params.entries(), run.grad_clip);
    const double lr = lr_at(static_cast<double>(step), schedule);
    adamw_step(params.entries(), result.optimizer, lr, run.adamw);
    result.steps_done = step + 1;

    StepMetrics m{step, loss.total.item(), loss.mlm, loss.lop, lr, norm,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()};
    result.log.push_back(m);
    if (hooks.on_step) hooks.on_step(m);
    if (!hooks.checkpoint_dir.empty() && run.pretrain.checkpoint_every > 0 &&
        result.steps_done % run.pretrain.checkpoint_every == 0) {
      std::filesystem::create_directories(hooks.checkpoint_dir);
      save_checkpoint(hooks.checkpoint_dir / ("step-" + std::to_string(result.steps_done) + ".ckpt"),
                      make_checkpoint(result.encoder, vocab, run, &result.optimizer, result.steps_done));
    }
  }
  result.eval = evaluate_pretraining(result.encoder, docs, run);
  return result;
}

// ---------------------------------------------------------------- fine-tuning

std::vector<std::vector<std::string>> predict_tags(const model::Encoder& encoder,
                                                   std::span<const data::EncodedDoc> docs,
                                                   const data::LabelSet& labels) {
  if (encoder.config().n_labels != labels.size()) {
    throw ContractError("NER head has " + std::to_string(encoder.config().n_labels) + " outputs for " +
                        std::to_string(labels.size()) + " labels");
  }
  std::vector<std::vector<std::string>> out;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < docs.size(); start += kChunk) {
    std::vector<const data::EncodedDoc*> ptrs;
    for (std::size_t i = start; i < std::min(docs.size(), start + kChunk); ++i) ptrs.push_back(&docs[i]);
    const data::Batch batch = data::collate(ptrs);
    Tape tape = Tape::inference();
    const Tensor hidden = encoder.forward(tape, batch, {});
    const Tensor logits = encoder.ner_head(tape, hidden, {});
    for (std::size_t d = 0; d < ptrs.size(); ++d) {
      const data::EncodedDoc& doc = *ptrs[d];
      std::vector<std::string> tags(doc.n_source_tokens, "O");
      for (std::size_t p = 0; p < doc.length(); ++p) {
        if (doc.is_special(p) || !doc.first_piece[p]) continue;
        const std::size_t label = argmax_row(logits.values(), d * batch.length + p, logits.cols());
        tags[static_cast<std::size_t>(doc.source_token[p])] = labels.tag(static_cast<int>(label));
      }
      out.push_back(std::move(tags));
    }
  }
  return out;
}

data::F1Report evaluate_ner(const model::Encoder& encoder, std::span<const data::Document> docs,
                            const data::Vocab& vocab, const data::LabelSet& labels) {
  const std::vector<data::EncodedDoc> encoded = encode_all(docs, vocab, encoder.config(), nullptr);
  const auto predicted = predict_tags(encoder, encoded, labels);
  std::vector<std::vector<std::string>> gold;
  for (const data::Document& d : docs) {
    if (!d.labels) throw ContractError("document '" + d.id + "' has no labels to score against");
    gold.push_back(*d.labels);
  }
  return data::entity_f1(predicted, gold);
}

FinetuneResult run_finetuning(std::span<const data::Document> train, std::span<const data::Document> eval,
                              const data::Vocab& vocab, const data::LabelSet& labels,
                              const model::Encoder& initial, const RunConfig& run, std::uint64_t seed) {
  if (train.empty()) throw ContractError("fine-tuning train split is empty");
  check_vocab(vocab, initial.config());
  for (auto split : {train, eval}) {
    for (const data::Document& d : split) {
      if (!d.labels) throw ContractError("document '" + d.id + "' has no labels");
      for (const std::string& tag : *d.labels) {
        if (!labels.contains(tag)) {
          throw ContractError("document '" + d.id + "' uses label '" + tag + "' that is not in the label set");
        }
      }
    }
  }

  FinetuneResult result{initial.clone(), {}, {}};
  result.encoder.reset_ner_head(labels.size(), derive_seed(seed, {kHeadStream}));
  const std::vector<data::EncodedDoc> docs = encode_all(train, vocab, result.encoder.config(), &labels);
  const std::size_t bs = static_cast<std::size_t>(run.finetune.batch_size);
  OptimizerState optimizer = make_optimizer_state(result.encoder.parameters().entries());
  long step = 0;
  for (int epoch = 0; epoch < run.finetune.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(docs.size(), seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < docs.size(); first += bs, ++step) {
      std::vector<const data::EncodedDoc*> ptrs;
      for (std::size_t i = first; i < std::min(docs.size(), first + bs); ++i) ptrs.push_back(&docs[order[i]]);
      const data::Batch batch = data::collate(ptrs);
      auto& params = result.encoder.parameters();
      params.zero_grad();
      Tape tape;
      model::ForwardOptions options{true, derive_seed(seed, {kDropoutStream, static_cast<std::uint64_t>(step)})};
      const Tensor hidden = result.encoder.forward(tape, batch, options);
      const Tensor logits = result.encoder.ner_head(tape, hidden, options);
      const Tensor loss = cross_entropy(tape, logits, batch.ner_targets, data::kIgnoreIndex);
      tape.backward(loss);
      clip_grad_norm(params.entries(), run.grad_clip);
      adamw_step(params.entries(), optimizer, run.finetune.lr, run.adamw);
      loss_sum += loss.item();
      ++batches;
    }
    FinetuneEpoch record{epoch, loss_sum / static_cast<double>(batches), {}};
    if (!eval.empty()) record.eval = evaluate_ner(result.encoder, eval, vocab, labels);
    result.epochs.push_back(record);
  }
  result.final_eval = result.epochs.back().eval;
  return result;
}

SeedSummary summarize_seeds(std::vector<std::uint64_t> seeds, std::vector<double> f1) {
  if (f1.empty() || seeds.size() != f1.size()) throw ContractError("summarize_seeds needs one score per seed");
  SeedSummary s{std::move(seeds), std::move(f1), 0.0, std::nullopt};
  const double n = static_cast<double>(s.f1.size());
  s.mean = std::accumulate(s.f1.begin(), s.f1.end(), 0.0) / n;
  if (s.f1.size() > 1) {
    double sq = 0.0;
    for (double v : s.f1) sq += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(sq / (n - 1.0));
  }
  return s;
}

// ---------------------------------------------------------------- ablation

double AblationTable::at(const std::string& row, const std::string& column) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (r == rows.end() || c == columns.end()) throw IndexError("ablation table has no cell (" + row + ", " + column + ")");
  return f1[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - columns.begin())];
}

std::string AblationTable::to_text() const {
  std::size_t first = 7;
  for (const auto& r : rows) first = std::max(first, r.size());
  std::vector<std::size_t> widths;
  for (const auto& c : columns) widths.push_back(std::max<std::size_t>(c.size(), 6));
  std::ostringstream out;
  auto rule = [&] {
    out << std::string(first, '-');
    for (std::size_t w : widths) out << "-+-" << std::string(w, '-');
    out << '\n';
  };
  out << std::left << std::setw(static_cast<int>(first)) << "Dataset";
  for (std::size_t c = 0; c < columns.size(); ++c) out << " | " << std::right << std::setw(static_cast<int>(widths[c])) << columns[c];
  out << '\n';
  rule();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r + 1 == rows.size()) rule();
    out << std::left << std::setw(static_cast<int>(first)) << rows[r];
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out << " | " << std::right << std::setw(static_cast<int>(widths[c])) << std::fixed << std::setprecision(2)
          << f1[r][c];
    }
    out << '\n';
  }
  return out.str();
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "dataset";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << rows[r];
    for (double v : f1[r]) out << ',' << std::fixed << std::setprecision(4) << v;
    out << '\n';
  }
  return out.str();
}

AblationTable run_ablation(std::span<const AblationDataset> datasets, const data::Vocab& vocab,
                           const model::ModelConfig& base, const RunConfig& run, bool sweep_bias_modes) {
  if (datasets.empty()) throw ContractError("ablation needs at least one dataset");
  std::vector<std::pair<std::string, model::ModelConfig>> variants;
  auto variant = [&](std::string name, bool abs_2d, model::BiasMode mode) {
    model::ModelConfig cfg = base;
    cfg.use_abs_2d = abs_2d;
    cfg.bias_mode = mode;
    variants.emplace_back(std::move(name), cfg);
  };
  variant("w 2D-Pos", true, base.bias_mode);
  variant("w/o 2D-Pos", false, base.bias_mode);
  if (sweep_bias_modes) {
    variant("polar", false, model::BiasMode::kPolar);
    variant("cartesian", false, model::BiasMode::kCartesian);
    variant("none", false, model::BiasMode::kNone);
  }

  AblationTable table;
  for (const auto& [name, cfg] : variants) table.columns.push_back(name);
  for (const AblationDataset& ds : datasets) {
    table.rows.push_back(ds.name);
    const data::LabelSet labels = data::LabelSet::from_documents(ds.train);
    std::vector<double> row;
    std::vector<std::pair<model::ModelConfig, double>> done;
    for (const auto& [name, cfg] : variants) {
      const auto hit = std::find_if(done.begin(), done.end(), [&](const auto& d) { return d.first == cfg; });
      if (hit != done.end()) {
        row.push_back(hit->second);
        continue;
      }
      std::vector<std::uint64_t> seeds;
      std::vector<double> scores;
      for (int s = 0; s < run.finetune.seeds; ++s) {
        const std::uint64_t seed = derive_seed(run.seed, {static_cast<std::uint64_t>(s)});
        model::Encoder initial(cfg, seed);
        if (run.ablation_pretrain) {
          RunConfig pre = run;
          pre.seed = seed;
          initial = run_pretraining(ds.train, vocab, cfg, pre).encoder;
        }
        seeds.push_back(seed);
        scores.push_back(run_finetuning(ds.train, ds.eval, vocab, labels, initial, run, seed).final_eval.f1);
      }
      const double value = 100.0 * summarize_seeds(seeds, scores).mean;
      done.emplace_back(cfg, value);
      row.push_back(value);
    }
    table.f1.push_back(std::move(row));
  }
  table.rows.push_back("Avg");
  std::vector<double> avg(table.columns.size(), 0.0);
  for (const auto& row : table.f1) {
    for (std::size_t c = 0; c < row.size(); ++c) avg[c] += row[c] / static_cast<double>(datasets.size());
  }
  table.f1.push_back(std::move(avg));
  return table;
}

}  // namespace polar::training
