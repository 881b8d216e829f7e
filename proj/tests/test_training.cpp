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
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "polar/errors.hpp"
#include "polar/synthetic.hpp"
#include "polar/training.hpp"
#include "test_support.hpp"

using namespace polar;
using namespace polar::training;
using polar::testing::random_doc;

namespace {

std::vector<bool> no_specials(std::size_t n) { return std::vector<bool>(n, false); }

model::ModelConfig tiny_model(const data::Vocab& vocab) {
  model::ModelConfig cfg = model::ModelConfig::desk_preset(vocab.size());
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.max_seq_len = 48;
  return cfg;
}

RunConfig quick_run(long steps) {
  RunConfig run;
  run.seed = 11;
  run.pretrain.steps = steps;
  run.pretrain.batch_size = 4;
  run.pretrain.lr = 3e-3;
  run.finetune.batch_size = 4;
  run.finetune.lr = 1e-2;
  return run;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("polar-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// A two-parameter model whose loss is sum((w - target)^2).
struct Bowl {
  std::vector<NamedTensor> params{{"w", Tensor({2}, {3.0, -2.0}, true)}};
  std::vector<double> target{0.5, 1.5};

  double loss_and_grad() {
    Tensor& w = params[0].second;
    w.zero_grad();
    double loss = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double d = w.at(i) - target[i];
      loss += d * d;
      w.grad()[i] = 2.0 * d;
    }
    return loss;
  }
};

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("masking plans") {
    const MaskingPlan plan = make_masking_plan(10, no_specials(10), 1);
    CHECK(plan.mlm_positions.size() == 3);
    CHECK(plan.lop_positions.size() == 3);
    CHECK(plan.mlm_replacement.size() == 3);
    CHECK(std::is_sorted(plan.mlm_positions.begin(), plan.mlm_positions.end()));

    const MaskingPlan none = make_masking_plan(4, std::vector<bool>(4, true), 1);
    CHECK(none.mlm_positions.empty());
    CHECK(none.lop_positions.empty());

    std::vector<bool> special(12, false);
    special.front() = special.back() = true;
    for (std::uint64_t s = 0; s < 200; ++s) {
      const MaskingPlan p = make_masking_plan(12, special, s);
      REQUIRE(p.mlm_positions.size() == 3);  // round(0.3 * 10)
      for (std::size_t pos : p.mlm_positions) REQUIRE_FALSE(special[pos]);
      for (std::size_t pos : p.lop_positions) REQUIRE_FALSE(special[pos]);
      const MaskingPlan again = make_masking_plan(12, special, s);
      REQUIRE(again.mlm_positions == p.mlm_positions);
      REQUIRE(again.mlm_replacement == p.mlm_replacement);
      REQUIRE(again.lop_positions == p.lop_positions);
    }
    CHECK_THROWS_AS(make_masking_plan(3, no_specials(2), 0), DimensionError);
  }

  TEST_CASE("replacement shares are 80/10/10") {
    std::size_t counts[3] = {0, 0, 0}, total = 0;
    for (std::uint64_t s = 0; total < 10000; ++s) {
      for (Replacement r : make_masking_plan(100, no_specials(100), s).mlm_replacement) {
        ++counts[static_cast<int>(r)];
        ++total;
      }
    }
    const double n = static_cast<double>(total);
    CHECK(std::abs(counts[0] / n - 0.8) <= 0.02);
    CHECK(std::abs(counts[1] / n - 0.1) <= 0.02);
    CHECK(std::abs(counts[2] / n - 0.1) <= 0.02);
  }

  TEST_CASE("applying a plan") {
    MaskingPlan plan;
    plan.mlm_positions = {1, 2, 3};
    plan.mlm_replacement = {Replacement::kMask, Replacement::kRandom, Replacement::kKeep};
    plan.lop_positions = {0, 3};
    const std::vector<int> ids = {20, 21, 22, 23, 24};
    const Corruption mlm = apply_mlm_corruption(ids, plan, 30, 9);
    CHECK(mlm.inputs[0] == 20);
    CHECK(mlm.inputs[1] == data::Vocab::kMask);
    CHECK(mlm.inputs[2] >= data::Vocab::kNumSpecial);
    CHECK(mlm.inputs[2] < 30);
    CHECK(mlm.inputs[3] == 23);
    CHECK(mlm.targets == std::vector<int>{data::kIgnoreIndex, 21, 22, 23, data::kIgnoreIndex});

    const std::vector<int> pos = {0, 1, 2, 3, 4};
    const Corruption lop = apply_lop_masking(pos, plan, 128);
    CHECK(lop.inputs == std::vector<int>{128, 1, 2, 128, 4});
    CHECK(lop.targets == std::vector<int>{0, data::kIgnoreIndex, data::kIgnoreIndex, 3, data::kIgnoreIndex});

    plan.lop_positions = {7};
    CHECK_THROWS_AS(apply_lop_masking(pos, plan, 128), IndexError);
  }

  TEST_CASE("pre-training loss") {
    const data::Vocab vocab({"total", "date", "amount", "12", "7", "tax", "code", "price"});
    const model::ModelConfig cfg = tiny_model(vocab);
    const model::Encoder encoder(cfg, 3);
    const data::EncodedDoc doc = data::encode(random_doc(2, 6), vocab, {cfg.max_seq_len, cfg.binning, nullptr});

    data::Batch plain = data::collate(doc);
    Tape t0 = Tape::inference();
    const PretrainLoss zero = pretrain_loss(t0, encoder, plain, {});
    CHECK(zero.mlm == 0.0);
    CHECK(zero.lop == 0.0);
    CHECK(zero.total.item() == 0.0);

    data::Batch b = plain;
    b.mlm_targets[2] = b.token_ids[2];
    b.token_ids[2] = data::Vocab::kMask;
    b.lop_targets[4] = b.pos_ids[4];
    b.pos_ids[4] = cfg.masked_position_index();
    Tape tape = Tape::inference();
    const PretrainLoss loss = pretrain_loss(tape, encoder, b, {});
    auto nll = [](const Tensor& logits, std::size_t row, int target) {
      const std::size_t w = logits.cols();
      double top = -INFINITY;
      for (std::size_t c = 0; c < w; ++c) top = std::max(top, logits.at(row * w + c));
      double z = 0.0;
      for (std::size_t c = 0; c < w; ++c) z += std::exp(logits.at(row * w + c) - top);
      return std::log(z) + top - logits.at(row * w + static_cast<std::size_t>(target));
    };
    CHECK(loss.mlm == doctest::Approx(nll(loss.mlm_logits, 2, b.mlm_targets[2])).epsilon(1e-12));
    CHECK(loss.lop == doctest::Approx(nll(loss.lop_logits, 4, b.lop_targets[4])).epsilon(1e-12));
    CHECK(loss.total.item() == doctest::Approx(loss.mlm + loss.lop).epsilon(1e-14));
    CHECK(loss.lop_logits.cols() == static_cast<std::size_t>(cfg.max_seq_len));
    CHECK(loss.mlm_logits.cols() == static_cast<std::size_t>(cfg.vocab_size));
  }

  TEST_CASE("learning rate schedule") {
    const Schedule s{1e-4, 1000, 0.05};
    CHECK(lr_at(0, s) == 0.0);
    CHECK(lr_at(50, s) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_at(25, s) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_at(1000, s) == 0.0);
    CHECK(lr_at(525, s) == doctest::Approx(5e-5).epsilon(1e-12));
    double prev = 0.0, worst_jump = 0.0;
    for (int i = 1; i <= 10000; ++i) {
      const double step = 1000.0 * i / 10000.0, lr = lr_at(step, s);
      REQUIRE(lr >= 0.0);
      REQUIRE(lr <= 1e-4 + 1e-18);
      if (step <= 50.0) REQUIRE(lr >= prev);
      if (step > 50.0 + 1e-9) REQUIRE(lr <= prev + 1e-18);
      worst_jump = std::max(worst_jump, std::abs(lr - prev));
      prev = lr;
    }
    CHECK(worst_jump <= 1e-4 * 0.1 / 50.0 + 1e-15);  // bounded by the warmup slope per 0.1 step
  }

  TEST_CASE("AdamW") {
    SUBCASE("zero gradient with zero decay leaves parameters alone") {
      std::vector<NamedTensor> params{{"w", Tensor({3}, {1.0, -2.0, 0.5}, true)}};
      (void)params[0].second.grad();  // allocates a zero gradient
      OptimizerState state = make_optimizer_state(params);
      adamw_step(params, state, 0.1, {0.9, 0.999, 1e-8, 0.0});
      CHECK(params[0].second.values()[1] == -2.0);
      CHECK(state.step == 1);
    }
    SUBCASE("first step moves each weight by lr against the gradient sign") {
      std::vector<NamedTensor> params{{"w", Tensor({3}, {1.0, -2.0, 0.5}, true)}};
      const std::vector<double> g = {0.3, -4.0, 1e-3};
      std::copy(g.begin(), g.end(), params[0].second.grad().begin());
      OptimizerState state = make_optimizer_state(params);
      adamw_step(params, state, 0.01, {0.9, 0.999, 1e-12, 0.0});
      CHECK(params[0].second.at(0) == doctest::Approx(0.99).epsilon(1e-9));
      CHECK(params[0].second.at(1) == doctest::Approx(-1.99).epsilon(1e-9));
      CHECK(params[0].second.at(2) == doctest::Approx(0.49).epsilon(1e-6));
    }
    SUBCASE("weight decay skips biases and gains") {
      std::vector<NamedTensor> params{{"a.weight", Tensor({1}, {1.0}, true)},
                                      {"a.bias", Tensor({1}, {1.0}, true)},
                                      {"ln.gain", Tensor({1}, {1.0}, true)}};
      for (auto& [n, t] : params) (void)t.grad();
      OptimizerState state = make_optimizer_state(params);
      adamw_step(params, state, 0.1, {0.9, 0.999, 1e-8, 0.5});
      CHECK(params[0].second.at(0) == doctest::Approx(0.95));
      CHECK(params[1].second.at(0) == 1.0);
      CHECK(params[2].second.at(0) == 1.0);
    }
    SUBCASE("quadratic bowl") {
      Bowl bowl;
      OptimizerState state = make_optimizer_state(bowl.params);
      const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.0};
      std::vector<double> losses;
      int steps = 0;
      for (; steps < 5000; ++steps) {
        losses.push_back(bowl.loss_and_grad());
        const auto& w = bowl.params[0].second;
        if (std::abs(w.at(0) - 0.5) < 1e-6 && std::abs(w.at(1) - 1.5) < 1e-6) break;
        adamw_step(bowl.params, state, 1e-2, cfg);
      }
      CHECK(steps < 5000);
      // Monotone descent after the first few steps, until the step size bottoms out near the minimum.
      for (std::size_t i = 6; i < losses.size() && losses[i] > 1e-4; ++i) CHECK(losses[i] <= losses[i - 1]);
    }
    SUBCASE("non-finite gradients abort") {
      std::vector<NamedTensor> params{{"layer.w", Tensor({2}, {1.0, 2.0}, true)}};
      params[0].second.zero_grad();
      params[0].second.grad()[1] = NAN;
      OptimizerState state = make_optimizer_state(params);
      try {
        adamw_step(params, state, 0.1, {});
        FAIL("expected a numeric error");
      } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
      }
      CHECK(params[0].second.at(0) == 1.0);
      CHECK(state.step == 0);
    }
  }

  TEST_CASE("gradient clipping") {
    std::vector<NamedTensor> params{{"a", Tensor({2}, {0.0, 0.0}, true)}, {"b", Tensor({1}, {0.0}, true)}};
    params[0].second.grad()[0] = 3.0;
    params[0].second.grad()[1] = 0.0;
    params[1].second.grad()[0] = 4.0;
    CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(5.0));
    CHECK(params[1].second.grad()[0] == 4.0);
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(params[0].second.grad()[0] == doctest::Approx(0.6));
    CHECK(params[1].second.grad()[0] == doctest::Approx(0.8));
  }

  TEST_CASE("run config round trip and validation") {
    RunConfig run = quick_run(17);
    run.seed = 18446744073709551615ULL;
    run.pretrain.static_masking = false;
    run.ablation_pretrain = true;
    KeyValueDoc doc;
    run.write(doc);
    const RunConfig back = RunConfig::read(KeyValueDoc::parse(doc.serialize()));
    KeyValueDoc again;
    back.write(again);
    CHECK(again.serialize() == doc.serialize());
    CHECK(back.seed == run.seed);
    CHECK_FALSE(back.pretrain.static_masking);

    auto error_for = [](const std::string& text) -> std::string {
      try {
        RunConfig::read(KeyValueDoc::parse(text));
      } catch (const ParseError& e) {
        return e.what();
      }
      return "";
    };
    CHECK(error_for("pretrain.masking = sometimes\n").find("pretrain.masking") != std::string::npos);
    CHECK(error_for("run.threads = 0\n").find("run.threads") != std::string::npos);
    CHECK(error_for("run.seed = -3\n").find("run.seed") != std::string::npos);
    CHECK(error_for("pretrain.lr = 0\n").find("pretrain.lr") != std::string::npos);
  }

  TEST_CASE("pre-training is deterministic and resumable") {
    const auto corpus = data::generate_synthetic_corpus(data::CorpusKind::kForms, 10, 3).train;
    const data::Vocab vocab = data::build_vocab(corpus, 1);
    const model::ModelConfig cfg = tiny_model(vocab);
    RunConfig run = quick_run(6);
    run.pretrain.checkpoint_every = 3;

    const PretrainResult full = run_pretraining(corpus, vocab, cfg, run);
    const PretrainResult twin = run_pretraining(corpus, vocab, cfg, run);
    REQUIRE(full.log.size() == 6);
    for (std::size_t i = 0; i < full.log.size(); ++i) CHECK(full.log[i].loss == twin.log[i].loss);
    CHECK(std::isfinite(full.eval.mlm_loss));

    const auto dir = scratch_dir("resume");
    PretrainHooks first;
    first.checkpoint_dir = dir;
    first.stop_after = 3;
    const PretrainResult head = run_pretraining(corpus, vocab, cfg, run, first);
    CHECK(head.steps_done == 3);
    const Checkpoint ckpt = load_checkpoint(dir / "step-3.ckpt");
    PretrainHooks second;
    second.resume = &ckpt;
    const PretrainResult tail = run_pretraining(corpus, vocab, cfg, run, second);
    REQUIRE(tail.log.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tail.log[i].loss == full.log[3 + i].loss);
    const auto a = full.encoder.parameters().entries(), b = tail.encoder.parameters().entries();
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(std::equal(a[i].second.values().begin(), a[i].second.values().end(), b[i].second.values().begin()));
    }

    CHECK(vocab_from_checkpoint(ckpt).entries() == vocab.entries());
    RunConfig other = run;
    other.pretrain.lr = 1e-3;
    CHECK_THROWS_AS(run_pretraining(corpus, vocab, cfg, other, second), ContractError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("fine-tuning") {
    const auto corpus = data::generate_synthetic_corpus(data::CorpusKind::kForms, 8, 4);
    const data::Vocab vocab = data::build_vocab(corpus.train, 1);
    const data::LabelSet labels = data::LabelSet::from_documents(corpus.train);
    const model::ModelConfig cfg = tiny_model(vocab);
    const model::Encoder initial(cfg, 5);

    SUBCASE("a single document is memorized") {
      RunConfig run = quick_run(0);
      run.finetune.epochs = 60;
      const std::span<const data::Document> one(corpus.train.data(), 1);
      const FinetuneResult r = run_finetuning(one, one, vocab, labels, initial, run, 1);
      CHECK(r.epochs.size() == 60);
      CHECK(r.final_eval.f1 == 1.0);
      CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
      // The initial encoder is not touched.
      CHECK(initial.config().n_labels == 0);
    }
    SUBCASE("seeds are reproducible and summarized") {
      RunConfig run = quick_run(0);
      run.finetune.epochs = 2;
      const auto a = run_finetuning(corpus.train, corpus.eval, vocab, labels, initial, run, 7);
      const auto b = run_finetuning(corpus.train, corpus.eval, vocab, labels, initial, run, 7);
      CHECK(a.final_eval.f1 == b.final_eval.f1);
      CHECK(a.epochs.back().train_loss == b.epochs.back().train_loss);
      const SeedSummary two = summarize_seeds({0, 1}, {0.5, 0.7});
      CHECK(two.mean == doctest::Approx(0.6));
      REQUIRE(two.stdev);
      CHECK(*two.stdev == doctest::Approx(std::sqrt(0.02)));
      CHECK_FALSE(summarize_seeds({0}, {0.5}).stdev);
    }
    SUBCASE("labels outside the set are rejected") {
      std::vector<data::Document> eval = corpus.eval;
      (*eval[0].labels)[0] = "B-UNSEEN";
      CHECK_THROWS_AS(run_finetuning(corpus.train, eval, vocab, labels, initial, quick_run(0), 0), ContractError);
    }
  }

  TEST_CASE("ablation table") {
    const auto corpus = data::generate_synthetic_corpus(data::CorpusKind::kTables, 8, 6);
    const data::Vocab vocab = data::build_vocab(corpus.all(), 1);
    model::ModelConfig base = tiny_model(vocab);
    RunConfig run = quick_run(0);
    run.finetune.epochs = 1;
    run.finetune.seeds = 1;
    const std::vector<AblationDataset> sets = {{"a", corpus.train, corpus.train}, {"b", corpus.all(), corpus.all()}};
    const AblationTable t = run_ablation(sets, vocab, base, run, true);
    CHECK(t.rows == std::vector<std::string>{"a", "b", "Avg"});
    CHECK(t.columns == std::vector<std::string>{"w 2D-Pos", "w/o 2D-Pos", "polar", "cartesian", "none"});
    // "w/o 2D-Pos" and "polar" are the same variant.
    CHECK(t.at("a", "w/o 2D-Pos") == t.at("a", "polar"));
    CHECK(t.at("Avg", "none") == doctest::Approx((t.at("a", "none") + t.at("b", "none")) / 2));
    CHECK(t.to_csv().find("w 2D-Pos") != std::string::npos);
    CHECK_THROWS_AS(t.at("c", "none"), IndexError);
  }
}
