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

#include <cmath>

#include "doctest.h"
#include "polar/batch.hpp"
#include "polar/errors.hpp"
#include "polar/grad_check.hpp"
#include "polar/model.hpp"
#include "test_support.hpp"

using namespace polar;
using namespace polar::model;
using polar::testing::max_abs_diff;
using polar::testing::random_doc;
using polar::testing::random_tensor;

namespace {

data::Vocab small_vocab() { return data::Vocab({"total", "date", "amount", "12", "7", "tax", "code", "price"}); }

ModelConfig tiny_config(int d_model = 16, int max_seq_len = 8) {
  ModelConfig cfg = ModelConfig::desk_preset(small_vocab().size());
  cfg.d_model = d_model;
  cfg.d_ff = 2 * d_model;
  cfg.max_seq_len = max_seq_len;
  cfg.n_labels = 3;
  cfg.init_std = 0.3;  // larger weights make the finite-difference check meaningful
  return cfg;
}

data::EncodedDoc encode_random(std::uint64_t seed, std::size_t n_tokens, const ModelConfig& cfg) {
  return data::encode(random_doc(seed, n_tokens), small_vocab(), {cfg.max_seq_len, cfg.binning, nullptr});
}

// Masks a few positions for both objectives and labels every real position.
data::Batch training_batch(const data::EncodedDoc& doc, const ModelConfig& cfg) {
  data::Batch b = data::collate(doc);
  for (std::size_t p = 1; p + 1 < doc.length(); ++p) {
    b.ner_targets[p] = static_cast<int>(p % static_cast<std::size_t>(cfg.n_labels));
    if (p % 3 == 1) {
      b.mlm_targets[p] = b.token_ids[p];
      b.token_ids[p] = data::Vocab::kMask;
    }
    if (p % 3 == 2) {
      b.lop_targets[p] = b.pos_ids[p];
      b.pos_ids[p] = cfg.masked_position_index();
    }
  }
  return b;
}

Tensor full_loss(Tape& t, const Encoder& enc, const data::Batch& b) {
  const Tensor h = enc.forward(t, b, {});
  const Tensor mlm = cross_entropy(t, enc.mlm_head(t, h), b.mlm_targets, data::kIgnoreIndex);
  const Tensor lop = cross_entropy(t, enc.lop_head(t, h), b.lop_targets, data::kIgnoreIndex);
  const Tensor ner = cross_entropy(t, enc.ner_head(t, h, {}), b.ner_targets, data::kIgnoreIndex);
  return add(t, add(t, mlm, lop), ner);
}

// Copies every parameter of `from` that `cfg` also declares.
Encoder transplant(const Encoder& from, const ModelConfig& cfg) {
  ParameterStore params;
  for (const auto& [name, shape] : parameter_layout(cfg)) params.add(name, from.parameters().get(name).detached_copy());
  return Encoder(cfg, std::move(params));
}

void zero_relative_tables(Encoder& enc) {
  for (const auto& [name, t] : enc.parameters().entries()) {
    if (name.find(".relative.") == std::string::npos) continue;
    Tensor handle = t;
    for (double& v : handle.mutable_values()) v = 0.0;
  }
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("parameter count") {
    const ModelConfig paper = ModelConfig::paper_preset(50265);
    const std::size_t n = count_parameters(paper);
    CHECK(n == 125098841);
    CHECK(std::abs(static_cast<double>(n) - 125e6) <= 0.05 * 125e6);

    ModelConfig toy = ModelConfig::desk_preset(1);
    toy.n_layers = 0;
    toy.n_heads = 1;
    toy.d_model = 1;
    toy.d_ff = 1;
    toy.max_seq_len = 2;
    // token 1 + position 3 + norm 2 + mlm dense 2 + mlm norm 2 + mlm bias 1 + lop 2 + 2
    CHECK(count_parameters(toy) == 15);

    ModelConfig one = ModelConfig::desk_preset(100), two = one;
    one.n_layers = 2;
    two.n_layers = 4;
    ModelConfig zero = one;
    zero.n_layers = 0;
    const std::size_t per_layer = (count_parameters(one) - count_parameters(zero)) / 2;
    CHECK(count_parameters(two) == count_parameters(one) + 2 * per_layer);

    for (BiasMode mode : {BiasMode::kPolar, BiasMode::kCartesian, BiasMode::kNone}) {
      for (bool abs2d : {false, true}) {
        ModelConfig cfg = tiny_config();
        cfg.bias_mode = mode;
        cfg.use_abs_2d = abs2d;
        std::size_t layout = 0;
        for (const auto& [name, shape] : parameter_layout(cfg)) layout += shape_numel(shape);
        CHECK(layout == count_parameters(cfg));
        CHECK(Encoder(cfg, 1).parameters().scalar_count() == count_parameters(cfg));
      }
    }
  }

  TEST_CASE("config round trip and validation") {
    ModelConfig cfg = tiny_config();
    cfg.bias_mode = BiasMode::kCartesian;
    cfg.use_abs_2d = true;
    cfg.gelu = GeluMode::kTanh;
    cfg.binning.rho_max = 333.25;
    KeyValueDoc doc;
    cfg.write(doc);
    CHECK(ModelConfig::read(KeyValueDoc::parse(doc.serialize()), 999) == cfg);

    ModelConfig bad = tiny_config();
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    CHECK_THROWS_AS(parse_bias_mode("spherical"), ParseError);
    CHECK_THROWS_AS(ModelConfig::named_preset("huge", 10), ParseError);
  }

  TEST_CASE("adopting parameters checks names and shapes") {
    const ModelConfig cfg = tiny_config();
    ParameterStore missing;
    CHECK_THROWS_AS(Encoder(cfg, std::move(missing)), ContractError);
    ParameterStore wrong;
    for (const auto& [name, shape] : parameter_layout(cfg)) {
      wrong.add(name, Tensor::zeros(name == "lop.bias" ? Shape{3} : shape));
    }
    CHECK_THROWS_AS(Encoder(cfg, std::move(wrong)), ContractError);
    CHECK_THROWS_AS(Encoder(cfg, 1).parameters().get("nope"), IndexError);
  }

  TEST_CASE("clone shares no storage") {
    const Encoder a(tiny_config(), 3);
    const Encoder b = a.clone();
    for (std::size_t i = 0; i < a.parameters().entries().size(); ++i) {
      const auto& [na, ta] = a.parameters().entries()[i];
      const auto& [nb, tb] = b.parameters().entries()[i];
      CHECK(na == nb);
      CHECK_FALSE(ta.same_storage(tb));
      CHECK(max_abs_diff(ta.values(), tb.values()) == 0.0);
    }
  }

  TEST_CASE("embed_inputs") {
    ModelConfig cfg = tiny_config();
    const data::EncodedDoc doc = encode_random(1, 5, cfg);
    data::Batch a = data::collate(doc), b = a;
    for (auto& box : b.boxes) box = {box.x0 / 2, box.y0 / 2, box.x1 / 2 + 1, box.y1 / 2 + 1};
    Tape tape(false);
    const Encoder blind(cfg, 4);
    CHECK(max_abs_diff(blind.embed_inputs(tape, a, {}).values(), blind.embed_inputs(tape, b, {}).values()) == 0.0);

    cfg.use_abs_2d = true;
    const Encoder sighted(cfg, 4);
    const Tensor ea = sighted.embed_inputs(tape, a, {}), eb = sighted.embed_inputs(tape, b, {});
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const bool same = a.boxes[r] == b.boxes[r];
      CHECK((max_abs_diff(ea.values().subspan(r * d, d), eb.values().subspan(r * d, d)) == 0.0) == same);
    }

    Encoder zeroed(tiny_config(), 4);
    for (const auto& [name, t] : zeroed.parameters().entries()) {
      if (!name.starts_with("embeddings.") || name.find("norm") != std::string::npos) continue;
      Tensor handle = t;
      for (double& v : handle.mutable_values()) v = 0.0;
    }
    const Tensor flat = zeroed.embed_inputs(tape, a, {});
    for (double v : flat.values()) CHECK(v == 0.0);

    ModelConfig short_cfg = tiny_config(16, 4);
    CHECK_THROWS_AS(Encoder(short_cfg, 1).embed_inputs(tape, a, {}), ContractError);
  }

  TEST_CASE("relative attention matches a scalar oracle") {
    for (bool standard : {false, true}) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::size_t n = 1 + seed % 6, heads = 2, dh = 3;
        data::Batch batch;
        batch.batch = 1;
        batch.length = n;
        batch.mask.assign(n, 1);
        CounterRng rng(seed);
        std::vector<std::int32_t> b1(n * n), b2(n * n);
        for (auto& x : b1) x = static_cast<std::int32_t>(rng.below(4));
        for (auto& x : b2) x = static_cast<std::int32_t>(rng.below(8));
        const Tensor q = random_tensor({n, heads * dh}, seed * 10 + 1), k = random_tensor({n, heads * dh}, seed * 10 + 2);
        const Tensor v = random_tensor({n, heads * dh}, seed * 10 + 3);
        const Tensor t1 = random_tensor({4, dh}, seed * 10 + 4), t2 = random_tensor({8, dh}, seed * 10 + 5);
        Tape tape(false);
        const Tensor got = relative_attention(tape, q, k, v, batch, t1, b1, t2, b2, static_cast<int>(heads), standard);
        const auto want = polar::testing::oracle_attention(q.values(), k.values(), v.values(), n, heads, dh,
                                                           t1.values(), b1, t2.values(), b2, standard);
        CHECK(max_abs_diff(got.values(), want) <= 1e-12);
      }
    }
  }

  TEST_CASE("relative attention by hand for two tokens") {
    // One head, d_head = 2, scale 1/sqrt(2).
    data::Batch batch;
    batch.batch = 1;
    batch.length = 2;
    batch.mask = {1, 1};
    const Tensor q({2, 2}, {1, 0, 0, 2}), k({2, 2}, {1, 1, -1, 0.5}), v({2, 2}, {3, -1, 0, 2});
    const Tensor dist({4, 2}, {0, 0, 0.5, 0, 0, 0, 0, 0}), angle({8, 2}, {0, 0, 0, 0, 0, 0, 0, 0,
                                                                       0, 1, 0, 0, 0, 0, 1, 1});
    const std::int32_t db[] = {0, 1, 1, 0};
    const std::int32_t ab[] = {4, 7, 2, 4};
    Tape tape(false);
    const Tensor out = relative_attention(tape, q, k, v, batch, dist, db, angle, ab, 1, false);
    const double s = 1.0 / std::sqrt(2.0);
    // score(i, j) = q_j . (k_i + dist[db] + angle[ab])
    const double s00 = (1 * 1 + 0 * 1 + 0 + 1 * 0 + 0 * 1) * s;                    // k0 + dist0 + angle4
    const double s01 = (0 * 1 + 2 * 1 + 0 * 0.5 + 0 + 0 * 1 + 2 * 1) * s;          // q1 . (k0 + dist1 + angle7)
    const double s10 = (1 * -1 + 0 * 0.5 + 1 * 0.5 + 0 + 0 + 0) * s;               // q0 . (k1 + dist1 + angle2)
    const double s11 = (0 * -1 + 2 * 0.5 + 0 + 0 * 0 + 2 * 1) * s;                 // q1 . (k1 + dist0 + angle4)
    const double p0 = 1.0 / (1.0 + std::exp(s01 - s00)), p1 = 1.0 / (1.0 + std::exp(s11 - s10));
    CHECK(std::abs(out.at(0) - (p0 * 3 + (1 - p0) * 0)) <= 1e-12);
    CHECK(std::abs(out.at(1) - (p0 * -1 + (1 - p0) * 2)) <= 1e-12);
    CHECK(std::abs(out.at(2) - (p1 * 3 + (1 - p1) * 0)) <= 1e-12);
    CHECK(std::abs(out.at(3) - (p1 * -1 + (1 - p1) * 2)) <= 1e-12);
  }

  TEST_CASE("single token attends to itself") {
    const ModelConfig cfg = tiny_config();
    const Encoder enc(cfg, 5);
    data::EncodedDoc doc = data::encode(random_doc(3, 1), small_vocab(), {cfg.max_seq_len, cfg.binning, nullptr, false});
    const data::Batch batch = data::collate(doc);
    Tape tape(false);
    const Tensor h = random_tensor({1, 16}, 9, 1.0, false);
    const Tensor out = enc.polar_attention(tape, h, batch, 0);
    const Tensor v = linear(tape, h, enc.parameters().get("layers.0.attention.value.weight"),
                            enc.parameters().get("layers.0.attention.value.bias"));
    const Tensor want = linear(tape, v, enc.parameters().get("layers.0.attention.output.weight"),
                               enc.parameters().get("layers.0.attention.output.bias"));
    CHECK(max_abs_diff(out.values(), want.values()) <= 1e-14);
  }

  TEST_CASE("zeroed tables reproduce the bias-free path") {
    const ModelConfig cfg = tiny_config();
    ModelConfig none_cfg = cfg;
    none_cfg.bias_mode = BiasMode::kNone;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Encoder polar(cfg, seed);
      zero_relative_tables(polar);
      const Encoder blind = transplant(polar, none_cfg);
      const data::EncodedDoc doc = encode_random(seed, 2 + seed % 5, cfg);
      const data::Batch batch = data::collate(doc);
      Tape tape(false);
      const Tensor h = random_tensor({batch.rows(), 16}, seed, 1.0, false);
      CHECK(max_abs_diff(polar.polar_attention(tape, h, batch, 1).values(),
                         blind.polar_attention(tape, h, batch, 1).values()) <= 1e-12);
    }
  }

  TEST_CASE("every position masked is a contract error") {
    const ModelConfig cfg = tiny_config();
    const Encoder enc(cfg, 1);
    data::Batch batch = data::collate(encode_random(1, 3, cfg));
    std::fill(batch.mask.begin(), batch.mask.end(), 0);
    Tape tape(false);
    CHECK_THROWS_AS(enc.polar_attention(tape, random_tensor({batch.rows(), 16}, 1, 1.0, false), batch, 0),
                    ContractError);
  }

  TEST_CASE("encoder forward") {
    ModelConfig cfg = tiny_config(16, 32);
    const Encoder enc(cfg, 8);
    const data::EncodedDoc doc = encode_random(4, 9, cfg);
    Tape tape(false);

    SUBCASE("deterministic") {
      const data::Batch batch = data::collate(doc);
      CHECK(max_abs_diff(enc.forward(tape, batch, {}).values(), Encoder(cfg, 8).forward(tape, batch, {}).values()) ==
            0.0);
    }
    SUBCASE("zero layers is the embedding") {
      ModelConfig flat = cfg;
      flat.n_layers = 0;
      const Encoder e0 = transplant(enc, flat);
      const data::Batch batch = data::collate(doc);
      CHECK(max_abs_diff(e0.forward(tape, batch, {}).values(), e0.embed_inputs(tape, batch, {}).values()) == 0.0);
    }
    SUBCASE("padding does not change real positions") {
      const data::EncodedDoc longer = encode_random(5, 20, cfg);
      const data::EncodedDoc* pair[] = {&doc, &longer};
      const data::Batch padded = data::collate(pair);
      const Tensor alone = enc.forward(tape, data::collate(doc), {});
      const Tensor both = enc.forward(tape, padded, {});
      CHECK(max_abs_diff(alone.values(), both.values().subspan(0, alone.numel())) <= 1e-10);
    }
    SUBCASE("translation of every box leaves the output unchanged") {
      // Without [CLS]/[SEP], whose full-page box does not move with the words.
      data::Document raw = random_doc(6, 9);
      data::Document shifted = raw;
      for (auto& t : shifted.tokens) t.box = {t.box.x0 + 37, t.box.y0 + 101, t.box.x1 + 37, t.box.y1 + 101};
      const data::EncodeOptions opts{cfg.max_seq_len, cfg.binning, nullptr, false};
      const Tensor a = enc.forward(tape, data::collate(data::encode(raw, small_vocab(), opts)), {});
      const Tensor b = enc.forward(tape, data::collate(data::encode(shifted, small_vocab(), opts)), {});
      CHECK(max_abs_diff(a.values(), b.values()) == 0.0);
    }
    SUBCASE("without any bias boxes have no effect") {
      ModelConfig blind_cfg = cfg;
      blind_cfg.bias_mode = BiasMode::kNone;
      const Encoder blind(blind_cfg, 8);
      data::Batch a = data::collate(doc), b = a;
      CounterRng rng(3);
      for (std::size_t i = 0; i < b.dist_bins.size(); ++i) {
        b.dist_bins[i] = static_cast<std::int32_t>(rng.below(4));
        b.angle_bins[i] = static_cast<std::int32_t>(rng.below(8));
      }
      CHECK(max_abs_diff(blind.forward(tape, a, {}).values(), blind.forward(tape, b, {}).values()) == 0.0);
    }
    SUBCASE("moving one box only changes pairs involving it in the first layer") {
      data::Batch a = data::collate(doc), b = a;
      const std::size_t moved = 3, L = a.length;
      for (std::size_t j = 0; j < L; ++j) {
        b.dist_bins[moved * L + j] = (a.dist_bins[moved * L + j] + 1) % 4;
        b.dist_bins[j * L + moved] = (a.dist_bins[j * L + moved] + 1) % 4;
      }
      AttentionCapture ca, cb;
      enc.forward(tape, a, {}, &ca);
      enc.forward(tape, b, {}, &cb);
      for (std::size_t h = 0; h < ca.heads; ++h) {
        for (std::size_t i = 0; i < L; ++i) {
          for (std::size_t j = 0; j < L; ++j) {
            if (i == moved || j == moved) continue;
            const std::size_t at = (h * L + i) * L + j;
            CHECK(ca.first_bias[at] == cb.first_bias[at]);
            CHECK(ca.content[at] == cb.content[at]);
          }
        }
      }
    }
  }

  TEST_CASE("heads") {
    const ModelConfig cfg = tiny_config();
    const Encoder enc(cfg, 9);
    Tape tape(false);
    const Tensor h = random_tensor({3, 16}, 10, 1.0, false);

    // Tied projection: logits = transform(h) . tokenᵀ + bias
    const auto& P = enc.parameters();
    Tensor t = gelu(tape, linear(tape, h, P.get("mlm.transform.weight"), P.get("mlm.transform.bias")));
    t = layer_norm(tape, t, P.get("mlm.norm.gain"), P.get("mlm.norm.bias"), cfg.layer_norm_eps);
    const Tensor logits = enc.mlm_head(tape, h);
    const Tensor& tok = P.get("embeddings.token");
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t v = 0; v < tok.dim(0); ++v) {
        double dot = P.get("mlm.bias").at(v);
        for (std::size_t c = 0; c < 16; ++c) dot += t.at(r * 16 + c) * tok.at(v * 16 + c);
        CHECK(std::abs(logits.at(r * tok.dim(0) + v) - dot) <= 1e-12);
      }
    }
    CHECK(enc.lop_head(tape, h).shape() == Shape{3, 8});
    CHECK(enc.ner_head(tape, h, {}).shape() == Shape{3, 3});

    const int none[] = {data::kIgnoreIndex, data::kIgnoreIndex, data::kIgnoreIndex};
    CHECK(cross_entropy(tape, enc.lop_head(tape, h), none, data::kIgnoreIndex).item() == 0.0);
    CHECK(cross_entropy(tape, enc.ner_head(tape, h, {}), none, data::kIgnoreIndex).item() == 0.0);

    ModelConfig two = tiny_config();
    two.vocab_size = 2;
    Encoder sym(two, 1);
    Tensor table = sym.parameters().get("embeddings.token");
    for (std::size_t c = 0; c < 16; ++c) table.mutable_values()[16 + c] = table.at(c);
    const Tensor l2 = sym.mlm_head(tape, h);
    for (std::size_t r = 0; r < 3; ++r) CHECK(l2.at(r * 2) == l2.at(r * 2 + 1));

    ModelConfig headless = tiny_config();
    headless.n_labels = 0;
    CHECK_THROWS_AS(Encoder(headless, 1).ner_head(tape, h, {}), ContractError);
  }

  TEST_CASE("gradients match finite differences for every parameter group") {
    for (BiasMode mode : {BiasMode::kPolar, BiasMode::kCartesian}) {
      for (bool standard : {false, true}) {
        ModelConfig cfg = tiny_config(16, 8);
        cfg.bias_mode = mode;
        cfg.standard_qk = standard;
        cfg.use_abs_2d = mode == BiasMode::kCartesian;
        const Encoder enc(cfg, 11);
        const data::Batch batch = training_batch(encode_random(12, 6, cfg), cfg);
        const GradCheckReport report =
            grad_check([&](Tape& t) { return full_loss(t, enc, batch); }, enc.parameters().entries());
        if (!report.passed()) MESSAGE(report.describe());
        CHECK(report.passed());
        CHECK(report.params.size() == enc.parameters().entries().size());
      }
    }
  }
}
