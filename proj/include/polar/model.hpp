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
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "polar/batch.hpp"
#include "polar/geometry.hpp"
#include "polar/grad_check.hpp"
#include "polar/keyvalue.hpp"
#include "polar/ops.hpp"
#include "polar/tensor.hpp"

namespace polar::model {

/// Which relative term biases the attention scores.
enum class BiasMode { kPolar, kCartesian, kNone };

BiasMode parse_bias_mode(const std::string& name);
std::string bias_mode_name(BiasMode mode);

struct ModelConfig {
  std::string preset = "desk";
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 128;
  int vocab_size = 64;
  int max_seq_len = 128;
  geometry::BinningConfig binning;
  bool use_abs_2d = false;
  BiasMode bias_mode = BiasMode::kPolar;
  double dropout = 0.0;
  // Off: the considered token supplies the key and context tokens supply the
  // queries, score(i, j) = q_j . (k_i + bias). On: score(i, j) = q_i . (k_j + bias).
  bool standard_qk = false;
  GeluMode gelu = GeluMode::kExact;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;
  int n_labels = 0;  // width of the NER head; 0 means no head

  int d_head() const { return d_model / n_heads; }
  /// Row of the 1D position table used for positions hidden from 1-LOP.
  int masked_position_index() const { return max_seq_len; }

  void validate() const;
  /// Writes every field under "model.*".
  void write(KeyValueDoc& doc) const;
  /// Starts from the preset named by "model.preset" (default desk) and
  /// applies any "model.*" overrides.
  static ModelConfig read(const KeyValueDoc& doc, int vocab_size);

  /// 12 layers, 12 heads, width 768, feed-forward 3072, 512 positions.
  static ModelConfig paper_preset(int vocab_size = 50265);
  /// 2 layers, 4 heads, width 64, feed-forward 128, 128 positions.
  static ModelConfig desk_preset(int vocab_size);
  static ModelConfig named_preset(const std::string& name, int vocab_size);

  bool operator==(const ModelConfig&) const = default;
};

/// Learned scalars implied by a config, from the closed-form layout.
std::size_t count_parameters(const ModelConfig& cfg);

/// Named tensors in creation order; names are stable checkpoint keys.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  /// Throws IndexError naming the missing parameter.
  const Tensor& get(const std::string& name) const;
  std::span<const NamedTensor> entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Expected name and shape of every parameter for a config, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// Filled by a forward pass for one layer: post-softmax weights and the three
/// pre-scale score terms, each batch x heads x length x length.
struct AttentionCapture {
  int layer = 0;
  std::size_t batch = 0, heads = 0, length = 0;
  std::vector<double> probs, content, first_bias, second_bias;
};

/// Fused multi-head relative attention over a padded batch. q, k, v are
/// (batch*length) x d_model; `first`/`second` are the relative tables
/// (undefined tensors when absent) indexed by the batch's bin matrices.
/// Throws ContractError when a document has no unmasked position.
Tensor relative_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, const data::Batch& batch,
                          const Tensor& first, std::span<const std::int32_t> first_bins, const Tensor& second,
                          std::span<const std::int32_t> second_bins, int n_heads, bool standard_qk,
                          AttentionCapture* capture = nullptr);

class Encoder {
 public:
  /// Random initialization; each tensor draws from its own seeded stream.
  Encoder(ModelConfig cfg, std::uint64_t seed);
  /// Adopts existing parameters; throws ContractError on a missing or misshaped entry.
  Encoder(ModelConfig cfg, ParameterStore params);

  /// Deep copy; the clone shares no storage with this encoder.
  Encoder clone() const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  /// Replaces the NER head with a freshly initialized one of `n_labels` outputs.
  void reset_ner_head(int n_labels, std::uint64_t seed);

  /// Token + 1D position (+ four absolute box lookups when use_abs_2d),
  /// then layer norm and dropout. Rows are (batch*length) x d_model.
  Tensor embed_inputs(Tape& tape, const data::Batch& batch, const ForwardOptions& options) const;

  /// Projections, relative attention and output projection for one layer.
  Tensor polar_attention(Tape& tape, const Tensor& hidden, const data::Batch& batch, int layer,
                         AttentionCapture* capture = nullptr) const;

  Tensor forward(Tape& tape, const data::Batch& batch, const ForwardOptions& options,
                 AttentionCapture* capture = nullptr) const;

  /// dense + GELU + layer norm, decoded with the token table (tied weights).
  Tensor mlm_head(Tape& tape, const Tensor& hidden) const;
  /// Logits over the max_seq_len absolute positions.
  Tensor lop_head(Tape& tape, const Tensor& hidden) const;
  Tensor ner_head(Tape& tape, const Tensor& hidden, const ForwardOptions& options) const;

 private:
  const Tensor& p(const std::string& name) const { return params_.get(name); }

  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace polar::model
