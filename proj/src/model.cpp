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

#include "polar/model.hpp"

#include <cmath>

#include "polar/errors.hpp"
#include "polar/kernels.hpp"
#include "polar/rng.hpp"

namespace polar::model {
namespace {

std::string layer_key(int layer, const char* rest) { return "layers." + std::to_string(layer) + "." + rest; }

bool is_gain(const std::string& name) { return name.ends_with(".gain"); }
bool is_bias(const std::string& name) { return name.ends_with(".bias"); }

GeluMode parse_gelu(const std::string& s) {
  if (s == "exact") return GeluMode::kExact;
  if (s == "tanh") return GeluMode::kTanh;
  throw ParseError("unknown gelu mode '" + s + "' (expected exact or tanh)");
}

std::size_t relative_rows(const ModelConfig& cfg) {
  switch (cfg.bias_mode) {
    case BiasMode::kPolar:
      return static_cast<std::size_t>(cfg.binning.n_dist_bins + cfg.binning.n_angle_bins);
    case BiasMode::kCartesian:
      return static_cast<std::size_t>(4 * cfg.binning.n_dist_bins);
    case BiasMode::kNone:
      return 0;
  }
  return 0;
}

}  // namespace

BiasMode parse_bias_mode(const std::string& name) {
  if (name == "polar") return BiasMode::kPolar;
  if (name == "cartesian") return BiasMode::kCartesian;
  if (name == "none") return BiasMode::kNone;
  throw ParseError("unknown bias mode '" + name + "' (expected polar, cartesian or none)");
}

std::string bias_mode_name(BiasMode mode) {
  switch (mode) {
    case BiasMode::kPolar:
      return "polar";
    case BiasMode::kCartesian:
      return "cartesian";
    case BiasMode::kNone:
      return "none";
  }
  return "none";
}

void ModelConfig::validate() const {
  if (n_layers < 0 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 || max_seq_len < 2) {
    throw ContractError("ModelConfig: sizes must be positive (n_layers may be 0)");
  }
  if (d_model % n_heads != 0) {
    throw ContractError("ModelConfig: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("ModelConfig: dropout must lie in [0, 1)");
  if (n_labels < 0) throw ContractError("ModelConfig: n_labels must be >= 0");
  if (!(layer_norm_eps > 0.0)) throw ContractError("ModelConfig: layer_norm_eps must be positive");
  binning.validate();
}

void ModelConfig::write(KeyValueDoc& doc) const {
  doc.set("model.preset", preset);
  doc.set_int("model.n_layers", n_layers);
  doc.set_int("model.n_heads", n_heads);
  doc.set_int("model.d_model", d_model);
  doc.set_int("model.d_ff", d_ff);
  doc.set_int("model.vocab_size", vocab_size);
  doc.set_int("model.max_seq_len", max_seq_len);
  doc.set_double("model.rho_max", binning.rho_max);
  doc.set_int("model.n_dist_bins", binning.n_dist_bins);
  doc.set_int("model.n_angle_bins", binning.n_angle_bins);
  doc.set_bool("model.use_abs_2d", use_abs_2d);
  doc.set("model.bias_mode", bias_mode_name(bias_mode));
  doc.set_double("model.dropout", dropout);
  doc.set_bool("model.standard_qk", standard_qk);
  doc.set("model.gelu", gelu == GeluMode::kExact ? "exact" : "tanh");
  doc.set_double("model.layer_norm_eps", layer_norm_eps);
  doc.set_double("model.init_std", init_std);
  doc.set_int("model.n_labels", n_labels);
}

ModelConfig ModelConfig::read(const KeyValueDoc& doc, int vocab_size) {
  ModelConfig c = named_preset(doc.get_string("model.preset", "desk"),
                               static_cast<int>(doc.get_int("model.vocab_size", vocab_size)));
  c.n_layers = static_cast<int>(doc.get_int("model.n_layers", c.n_layers));
  c.n_heads = static_cast<int>(doc.get_int("model.n_heads", c.n_heads));
  c.d_model = static_cast<int>(doc.get_int("model.d_model", c.d_model));
  c.d_ff = static_cast<int>(doc.get_int("model.d_ff", c.d_ff));
  c.max_seq_len = static_cast<int>(doc.get_int("model.max_seq_len", c.max_seq_len));
  c.binning.rho_max = doc.get_double("model.rho_max", c.binning.rho_max);
  c.binning.n_dist_bins = static_cast<int>(doc.get_int("model.n_dist_bins", c.binning.n_dist_bins));
  c.binning.n_angle_bins = static_cast<int>(doc.get_int("model.n_angle_bins", c.binning.n_angle_bins));
  c.use_abs_2d = doc.get_bool("model.use_abs_2d", c.use_abs_2d);
  c.bias_mode = parse_bias_mode(doc.get_string("model.bias_mode", bias_mode_name(c.bias_mode)));
  c.dropout = doc.get_double("model.dropout", c.dropout);
  c.standard_qk = doc.get_bool("model.standard_qk", c.standard_qk);
  c.gelu = parse_gelu(doc.get_string("model.gelu", c.gelu == GeluMode::kExact ? "exact" : "tanh"));
  c.layer_norm_eps = doc.get_double("model.layer_norm_eps", c.layer_norm_eps);
  c.init_std = doc.get_double("model.init_std", c.init_std);
  c.n_labels = static_cast<int>(doc.get_int("model.n_labels", c.n_labels));
  c.validate();
  return c;
}

ModelConfig ModelConfig::paper_preset(int vocab_size) {
  ModelConfig c;
  c.preset = "paper";
  c.n_layers = 12;
  c.n_heads = 12;
  c.d_model = 768;
  c.d_ff = 3072;
  c.vocab_size = vocab_size;
  c.max_seq_len = 512;
  c.dropout = 0.1;
  return c;
}

ModelConfig ModelConfig::desk_preset(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::named_preset(const std::string& name, int vocab_size) {
  if (name == "paper") return paper_preset(vocab_size);
  if (name == "desk") return desk_preset(vocab_size);
  throw ParseError("unknown model preset '" + name + "' (expected paper or desk)");
}

std::size_t count_parameters(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t f = static_cast<std::size_t>(cfg.d_ff);
  const std::size_t vocab = static_cast<std::size_t>(cfg.vocab_size);
  const std::size_t seq = static_cast<std::size_t>(cfg.max_seq_len);
  const std::size_t dh = static_cast<std::size_t>(cfg.d_head());

  std::size_t embeddings = vocab * d + (seq + 1) * d + 2 * d;
  if (cfg.use_abs_2d) embeddings += 4 * 1001 * d;
  const std::size_t attention = 4 * (d * d + d) + relative_rows(cfg) * dh + 2 * d;
  const std::size_t feed_forward = d * f + f + f * d + d + 2 * d;
  const std::size_t mlm = d * d + d + 2 * d + vocab;
  const std::size_t lop = d * seq + seq;
  const std::size_t labels = static_cast<std::size_t>(cfg.n_labels);
  const std::size_t ner = labels ? d * labels + labels : 0;
  return embeddings + static_cast<std::size_t>(cfg.n_layers) * (attention + feed_forward) + mlm + lop + ner;
}

Tensor& ParameterStore::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  tensor.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t f = static_cast<std::size_t>(cfg.d_ff);
  const std::size_t dh = static_cast<std::size_t>(cfg.d_head());
  const std::size_t seq = static_cast<std::size_t>(cfg.max_seq_len);
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"embeddings.token", {static_cast<std::size_t>(cfg.vocab_size), d}});
  out.push_back({"embeddings.position", {seq + 1, d}});
  if (cfg.use_abs_2d) {
    for (const char* axis : {"x0", "y0", "x1", "y1"}) out.push_back({std::string("embeddings.") + axis, {1001, d}});
  }
  out.push_back({"embeddings.norm.gain", {d}});
  out.push_back({"embeddings.norm.bias", {d}});
  for (int l = 0; l < cfg.n_layers; ++l) {
    for (const char* proj : {"query", "key", "value", "output"}) {
      out.push_back({layer_key(l, "attention.") + proj + ".weight", {d, d}});
      out.push_back({layer_key(l, "attention.") + proj + ".bias", {d}});
    }
    const std::size_t nd = static_cast<std::size_t>(cfg.binning.n_dist_bins);
    const std::size_t na = static_cast<std::size_t>(cfg.binning.n_angle_bins);
    if (cfg.bias_mode == BiasMode::kPolar) {
      out.push_back({layer_key(l, "relative.distance"), {nd, dh}});
      out.push_back({layer_key(l, "relative.angle"), {na, dh}});
    } else if (cfg.bias_mode == BiasMode::kCartesian) {
      out.push_back({layer_key(l, "relative.dx"), {2 * nd, dh}});
      out.push_back({layer_key(l, "relative.dy"), {2 * nd, dh}});
    }
    out.push_back({layer_key(l, "attention.norm.gain"), {d}});
    out.push_back({layer_key(l, "attention.norm.bias"), {d}});
    out.push_back({layer_key(l, "ffn.in.weight"), {d, f}});
    out.push_back({layer_key(l, "ffn.in.bias"), {f}});
    out.push_back({layer_key(l, "ffn.out.weight"), {f, d}});
    out.push_back({layer_key(l, "ffn.out.bias"), {d}});
    out.push_back({layer_key(l, "ffn.norm.gain"), {d}});
    out.push_back({layer_key(l, "ffn.norm.bias"), {d}});
  }
  out.push_back({"mlm.transform.weight", {d, d}});
  out.push_back({"mlm.transform.bias", {d}});
  out.push_back({"mlm.norm.gain", {d}});
  out.push_back({"mlm.norm.bias", {d}});
  out.push_back({"mlm.bias", {static_cast<std::size_t>(cfg.vocab_size)}});
  out.push_back({"lop.weight", {d, seq}});
  out.push_back({"lop.bias", {seq}});
  if (cfg.n_labels > 0) {
    out.push_back({"ner.weight", {d, static_cast<std::size_t>(cfg.n_labels)}});
    out.push_back({"ner.bias", {static_cast<std::size_t>(cfg.n_labels)}});
  }
  return out;
}

namespace {

Tensor init_tensor(const std::string& name, const Shape& shape, double stddev, std::uint64_t seed) {
  if (is_gain(name)) return Tensor::filled(shape, 1.0);
  if (is_bias(name)) return Tensor::zeros(shape);
  CounterRng rng(seed, fnv1a64(name));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = stddev * rng.normal();
  return Tensor(shape, std::move(values));
}

}  // namespace

Encoder::Encoder(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& [name, shape] : parameter_layout(cfg_)) params_.add(name, init_tensor(name, shape, cfg_.init_std, seed));
}

Encoder::Encoder(ModelConfig cfg, ParameterStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  for (const auto& [name, shape] : parameter_layout(cfg_)) {
    if (!params_.contains(name)) throw ContractError("parameters lack '" + name + "'");
    if (params_.get(name).shape() != shape) {
      throw ContractError("parameter '" + name + "' has shape " + shape_string(params_.get(name).shape()) +
                          ", expected " + shape_string(shape));
    }
  }
}

Encoder Encoder::clone() const {
  ParameterStore copy;
  for (const auto& [name, t] : params_.entries()) copy.add(name, t.detached_copy());
  return Encoder(cfg_, std::move(copy));
}

void Encoder::reset_ner_head(int n_labels, std::uint64_t seed) {
  if (n_labels < 1) throw ContractError("reset_ner_head: n_labels must be >= 1");
  cfg_.n_labels = n_labels;
  ParameterStore rebuilt;
  for (const auto& [name, t] : params_.entries()) {
    if (!name.starts_with("ner.")) rebuilt.add(name, t);
  }
  const Shape w{static_cast<std::size_t>(cfg_.d_model), static_cast<std::size_t>(n_labels)};
  rebuilt.add("ner.weight", init_tensor("ner.weight", w, cfg_.init_std, seed));
  rebuilt.add("ner.bias", Tensor::zeros({static_cast<std::size_t>(n_labels)}));
  params_ = std::move(rebuilt);
}

Tensor relative_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, const data::Batch& batch,
                          const Tensor& first, std::span<const std::int32_t> first_bins, const Tensor& second,
                          std::span<const std::int32_t> second_bins, int n_heads, bool standard_qk,
                          AttentionCapture* capture) {
  const std::size_t d_model = q.cols();
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.rows() != batch.rows()) {
    throw DimensionError("relative_attention: q/k/v " + shape_string(q.shape()) + " do not match batch of " +
                         std::to_string(batch.rows()) + " rows");
  }
  kernels::AttentionDims dims{batch.batch, batch.length, static_cast<std::size_t>(n_heads),
                              d_model / static_cast<std::size_t>(n_heads)};
  for (std::size_t b = 0; b < batch.batch; ++b) {
    bool live = false;
    for (std::size_t j = 0; j < batch.length; ++j) live = live || batch.mask[b * batch.length + j];
    if (!live) throw ContractError("relative_attention: document " + std::to_string(b) + " has every position masked");
  }
  auto table = [&](const Tensor& t, std::span<const std::int32_t> bins) {
    kernels::RelativeTable out;
    if (!t.defined()) return out;
    if (t.cols() != dims.d_head || bins.size() != batch.rows() * batch.length) {
      throw DimensionError("relative_attention: table " + shape_string(t.shape()) + " or bins do not fit");
    }
    for (std::int32_t bin : bins) {
      if (bin < 0 || static_cast<std::size_t>(bin) >= t.rows()) {
        throw IndexError("relative_attention: bin " + std::to_string(bin) + " outside table of " +
                         std::to_string(t.rows()) + " rows");
      }
    }
    out.rows = t.values();
    out.bins = bins;
    out.n_rows = t.rows();
    return out;
  };
  kernels::AttentionArgs args{dims, q.values(), k.values(), v.values(), batch.mask,
                              table(first, first_bins), table(second, second_bins), standard_qk,
                              1.0 / std::sqrt(static_cast<double>(dims.d_head))};
  const std::size_t n_pairs = batch.batch * dims.heads * batch.length * batch.length;
  std::vector<double> probs(n_pairs);
  std::vector<double> out(batch.rows() * d_model);
  if (capture) {
    capture->batch = batch.batch;
    capture->heads = dims.heads;
    capture->length = batch.length;
    capture->content.assign(n_pairs, 0.0);
    capture->first_bias.assign(n_pairs, 0.0);
    capture->second_bias.assign(n_pairs, 0.0);
    kernels::AttentionTerms terms{capture->content, capture->first_bias, capture->second_bias};
    kernels::attention_forward(args, probs, out, &terms);
    capture->probs = probs;
  } else {
    kernels::attention_forward(args, probs, out);
  }

  const bool tracked = tape.tracks({&q, &k, &v, &first, &second});
  Tensor y(q.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([q = Tensor(q), k = Tensor(k), v = Tensor(v), first = Tensor(first), second = Tensor(second), y, probs = std::move(probs), dims, standard_qk, scale = args.scale,
                 mask = batch.mask, fb = std::vector<std::int32_t>(first_bins.begin(), first_bins.end()),
                 sb = std::vector<std::int32_t>(second_bins.begin(), second_bins.end())]() mutable {
      kernels::AttentionArgs a{dims, q.values(), k.values(), v.values(), mask, {}, {}, standard_qk, scale};
      std::vector<double> scratch_first, scratch_second;
      kernels::RelativeTableGrad g_first{}, g_second{};
      if (first.defined()) {
        a.first = {first.values(), fb, first.rows()};
        if (first.requires_grad()) {
          g_first.rows = first.grad();
        } else {
          scratch_first.assign(first.numel(), 0.0);
          g_first.rows = scratch_first;
        }
      }
      if (second.defined()) {
        a.second = {second.values(), sb, second.rows()};
        if (second.requires_grad()) {
          g_second.rows = second.grad();
        } else {
          scratch_second.assign(second.numel(), 0.0);
          g_second.rows = scratch_second;
        }
      }
      std::vector<double> dq(q.numel()), dk(k.numel()), dv(v.numel());
      kernels::attention_backward(a, probs, y.grad(), dq, dk, dv, g_first, g_second);
      auto accumulate = [](Tensor& t, const std::vector<double>& g) {
        if (!t.requires_grad()) return;
        auto dst = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      };
      accumulate(q, dq);
      accumulate(k, dk);
      accumulate(v, dv);
    });
  }
  return y;
}

Tensor Encoder::embed_inputs(Tape& tape, const data::Batch& batch, const ForwardOptions& options) const {
  if (batch.length > static_cast<std::size_t>(cfg_.max_seq_len)) {
    throw ContractError("embed_inputs: sequence of " + std::to_string(batch.length) + " exceeds max_seq_len " +
                        std::to_string(cfg_.max_seq_len) + "; truncate before encoding");
  }
  Tensor h = add(tape, embedding_lookup(tape, p("embeddings.token"), batch.token_ids),
                 embedding_lookup(tape, p("embeddings.position"), batch.pos_ids));
  if (cfg_.use_abs_2d) {
    std::vector<int> coords(batch.rows());
    auto axis = [&](int geometry::BBox::*field, const char* name) {
      for (std::size_t r = 0; r < batch.rows(); ++r) coords[r] = batch.boxes[r].*field;
      h = add(tape, h, embedding_lookup(tape, p(std::string("embeddings.") + name), coords));
    };
    axis(&geometry::BBox::x0, "x0");
    axis(&geometry::BBox::y0, "y0");
    axis(&geometry::BBox::x1, "x1");
    axis(&geometry::BBox::y1, "y1");
  }
  h = layer_norm(tape, h, p("embeddings.norm.gain"), p("embeddings.norm.bias"), cfg_.layer_norm_eps);
  if (options.training) h = dropout(tape, h, cfg_.dropout, derive_seed(options.dropout_seed, {0xE0}));
  return h;
}

Tensor Encoder::polar_attention(Tape& tape, const Tensor& hidden, const data::Batch& batch, int layer,
                                AttentionCapture* capture) const {
  auto w = [&](const char* name) -> const Tensor& { return p(layer_key(layer, name)); };
  const Tensor q = linear(tape, hidden, w("attention.query.weight"), w("attention.query.bias"));
  const Tensor k = linear(tape, hidden, w("attention.key.weight"), w("attention.key.bias"));
  const Tensor v = linear(tape, hidden, w("attention.value.weight"), w("attention.value.bias"));
  Tensor context;
  switch (cfg_.bias_mode) {
    case BiasMode::kPolar:
      context = relative_attention(tape, q, k, v, batch, w("relative.distance"), batch.dist_bins,
                                   w("relative.angle"), batch.angle_bins, cfg_.n_heads, cfg_.standard_qk, capture);
      break;
    case BiasMode::kCartesian:
      context = relative_attention(tape, q, k, v, batch, w("relative.dx"), batch.dx_bins, w("relative.dy"),
                                   batch.dy_bins, cfg_.n_heads, cfg_.standard_qk, capture);
      break;
    case BiasMode::kNone:
      context = relative_attention(tape, q, k, v, batch, Tensor(), {}, Tensor(), {}, cfg_.n_heads, cfg_.standard_qk,
                                   capture);
      break;
  }
  return linear(tape, context, w("attention.output.weight"), w("attention.output.bias"));
}

Tensor Encoder::forward(Tape& tape, const data::Batch& batch, const ForwardOptions& options,
                        AttentionCapture* capture) const {
  Tensor h = embed_inputs(tape, batch, options);
  const bool drop = options.training && cfg_.dropout > 0.0;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto w = [&](const char* name) -> const Tensor& { return p(layer_key(l, name)); };
    AttentionCapture* here = capture && capture->layer == l ? capture : nullptr;
    Tensor a = polar_attention(tape, h, batch, l, here);
    if (drop) a = dropout(tape, a, cfg_.dropout, derive_seed(options.dropout_seed, {static_cast<std::uint64_t>(l), 1}));
    h = layer_norm(tape, add(tape, h, a), w("attention.norm.gain"), w("attention.norm.bias"), cfg_.layer_norm_eps);
    Tensor f = linear(tape, h, w("ffn.in.weight"), w("ffn.in.bias"));
    f = linear(tape, gelu(tape, f, cfg_.gelu), w("ffn.out.weight"), w("ffn.out.bias"));
    if (drop) f = dropout(tape, f, cfg_.dropout, derive_seed(options.dropout_seed, {static_cast<std::uint64_t>(l), 2}));
    h = layer_norm(tape, add(tape, h, f), w("ffn.norm.gain"), w("ffn.norm.bias"), cfg_.layer_norm_eps);
  }
  return h;
}

Tensor Encoder::mlm_head(Tape& tape, const Tensor& hidden) const {
  Tensor t = gelu(tape, linear(tape, hidden, p("mlm.transform.weight"), p("mlm.transform.bias")), cfg_.gelu);
  t = layer_norm(tape, t, p("mlm.norm.gain"), p("mlm.norm.bias"), cfg_.layer_norm_eps);
  return add_bias(tape, matmul_transposed(tape, t, p("embeddings.token")), p("mlm.bias"));
}

Tensor Encoder::lop_head(Tape& tape, const Tensor& hidden) const {
  return linear(tape, hidden, p("lop.weight"), p("lop.bias"));
}

Tensor Encoder::ner_head(Tape& tape, const Tensor& hidden, const ForwardOptions& options) const {
  if (cfg_.n_labels < 1) throw ContractError("ner_head: model has no NER head");
  Tensor h = hidden;
  if (options.training) h = dropout(tape, h, cfg_.dropout, derive_seed(options.dropout_seed, {0xAE}));
  return linear(tape, h, p("ner.weight"), p("ner.bias"));
}

}  // namespace polar::model
