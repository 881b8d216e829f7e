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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polar/batch.hpp"
#include "polar/checkpoint.hpp"
#include "polar/document.hpp"
#include "polar/keyvalue.hpp"
#include "polar/model.hpp"
#include "polar/ner_metrics.hpp"
#include "polar/vocab.hpp"

namespace polar::training {

// ---------------------------------------------------------------- masking

enum class Replacement : std::uint8_t { kMask, kRandom, kKeep };

struct MaskingRates {
  double mlm = 0.30;
  double lop = 0.30;
  double mask_share = 0.8;
  double random_share = 0.1;  // the remainder keeps the original token
};

struct MaskingPlan {
  std::vector<std::size_t> mlm_positions;  // ascending
  std::vector<Replacement> mlm_replacement;
  std::vector<std::size_t> lop_positions;  // ascending
};

/// Picks round(rate * n_real) positions for each objective among the
/// positions whose `special` flag is false, independently per objective.
MaskingPlan make_masking_plan(std::size_t token_count, const std::vector<bool>& special, std::uint64_t seed,
                              const MaskingRates& rates = {});

struct Corruption {
  std::vector<int> inputs;
  std::vector<int> targets;  // kIgnoreIndex outside the plan
};

/// Random replacements draw uniformly from the non-special vocabulary.
Corruption apply_mlm_corruption(std::span<const int> token_ids, const MaskingPlan& plan, int vocab_size,
                                std::uint64_t seed);

/// Planned positions look up `masked_position_index` instead of their own row;
/// their targets are their true positions.
Corruption apply_lop_masking(std::span<const int> position_ids, const MaskingPlan& plan, int masked_position_index);

// ---------------------------------------------------------------- losses

struct PretrainLoss {
  Tensor total;  // mlm + lop
  double mlm = 0.0;
  double lop = 0.0;
  Tensor mlm_logits;
  Tensor lop_logits;
};

PretrainLoss pretrain_loss(Tape& tape, const model::Encoder& encoder, const data::Batch& batch,
                           const model::ForwardOptions& options);

// ---------------------------------------------------------------- optimization

struct Schedule {
  double target_lr = 1e-4;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.05;
};

/// Linear warmup to target_lr over warmup_fraction * total_steps, then cosine
/// decay to zero at total_steps. Accepts fractional steps.
double lr_at(double step, const Schedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

OptimizerState make_optimizer_state(std::span<const NamedTensor> params);

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(std::span<const NamedTensor> params, double max_norm);

/// Bias-corrected adaptive-moment update with decoupled weight decay. Biases
/// and layer-norm gains are not decayed. Throws NumericError naming the
/// parameter when a gradient is not finite.
void adamw_step(std::span<const NamedTensor> params, OptimizerState& state, double lr, const AdamWConfig& cfg);

// ---------------------------------------------------------------- run configuration

struct PretrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-4;
  long steps = 0;  // 0: epochs * batches per epoch
  double warmup_fraction = 0.05;
  bool static_masking = true;  // one plan per document for the whole run
  MaskingRates rates;
  long checkpoint_every = 0;
};

struct FinetuneConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 5e-5;
  int seeds = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  double grad_clip = 1.0;
  AdamWConfig adamw;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  bool ablation_pretrain = false;

  void write(KeyValueDoc& doc) const;
  static RunConfig read(const KeyValueDoc& doc);
};

// ---------------------------------------------------------------- pre-training

struct StepMetrics {
  long step = 0;
  double loss = 0.0;
  double mlm = 0.0;
  double lop = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

struct PretrainEval {
  double mlm_loss = 0.0;
  double mlm_accuracy = 0.0;
  double lop_loss = 0.0;
  double lop_accuracy = 0.0;
};

struct PretrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints
  const Checkpoint* resume = nullptr;
  long stop_after = -1;  // stop once this many steps are done (testing resume)
};

struct PretrainResult {
  model::Encoder encoder;
  OptimizerState optimizer;
  long steps_done = 0;
  long total_steps = 0;
  std::vector<StepMetrics> log;
  PretrainEval eval;
};

/// Deterministic for a fixed (seed, config); batch order and masking plans
/// are pure functions of the seed and step. Throws NumericError on a
/// non-finite loss.
PretrainResult run_pretraining(std::span<const data::Document> corpus, const data::Vocab& vocab,
                               const model::ModelConfig& model_cfg, const RunConfig& run,
                               const PretrainHooks& hooks = {});

/// Objective losses and accuracies over a corpus under the run's masking plans
/// (epoch 0 plans when masking is dynamic), in inference mode.
PretrainEval evaluate_pretraining(const model::Encoder& encoder, std::span<const data::EncodedDoc> docs,
                                  const RunConfig& run);

// ---------------------------------------------------------------- checkpoints

/// Parameters plus optional optimizer moments; the manifest carries the
/// serialized configs, their hash, the seed, the step and the vocabulary.
Checkpoint make_checkpoint(const model::Encoder& encoder, const data::Vocab& vocab, const RunConfig& run,
                           const OptimizerState* optimizer, long step, const data::LabelSet* labels = nullptr);

model::Encoder encoder_from_checkpoint(const Checkpoint& checkpoint);
data::Vocab vocab_from_checkpoint(const Checkpoint& checkpoint);
/// Optimizer moments and step; nullopt when the checkpoint carries none.
std::optional<OptimizerState> optimizer_from_checkpoint(const Checkpoint& checkpoint, const model::Encoder& encoder);

// ---------------------------------------------------------------- fine-tuning

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  data::F1Report eval;
};

struct FinetuneResult {
  model::Encoder encoder;
  std::vector<FinetuneEpoch> epochs;
  data::F1Report final_eval;
};

/// Per OCR token tags from the first word of each token; tokens lost to
/// truncation are tagged "O".
std::vector<std::vector<std::string>> predict_tags(const model::Encoder& encoder,
                                                   std::span<const data::EncodedDoc> docs,
                                                   const data::LabelSet& labels);

/// Entity-level micro F1 of the encoder's predictions against gold labels.
data::F1Report evaluate_ner(const model::Encoder& encoder, std::span<const data::Document> docs,
                            const data::Vocab& vocab, const data::LabelSet& labels);

/// Fixed-rate training of encoder + fresh NER head; reports eval F1 after
/// every epoch. `initial` is copied, never mutated. Throws ContractError when
/// eval carries a tag absent from `labels`.
FinetuneResult run_finetuning(std::span<const data::Document> train, std::span<const data::Document> eval,
                              const data::Vocab& vocab, const data::LabelSet& labels,
                              const model::Encoder& initial, const RunConfig& run, std::uint64_t seed);

struct SeedSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<double> f1;
  double mean = 0.0;
  std::optional<double> stdev;  // sample deviation; absent for one seed
};

SeedSummary summarize_seeds(std::vector<std::uint64_t> seeds, std::vector<double> f1);

// ---------------------------------------------------------------- ablation

struct AblationDataset {
  std::string name;
  std::vector<data::Document> train;
  std::vector<data::Document> eval;
};

/// F1 scores (percent) with one row per dataset plus "Avg".
struct AblationTable {
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::vector<std::vector<double>> f1;  // rows x columns

  double at(const std::string& row, const std::string& column) const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Trains "w 2D-Pos" and "w/o 2D-Pos" variants of `base` from identical
/// seeds; with sweep_bias_modes also "polar", "cartesian" and "none" columns
/// (all without absolute 2D embeddings). Identical variants train once.
AblationTable run_ablation(std::span<const AblationDataset> datasets, const data::Vocab& vocab,
                           const model::ModelConfig& base, const RunConfig& run, bool sweep_bias_modes);

}  // namespace polar::training
