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

// Reference kernels against the threaded ones. Run with --benchmark_filter to pick a size.

#include <benchmark/benchmark.h>

#include <vector>

#include "polar/kernels.hpp"
#include "polar/rng.hpp"

namespace {

using namespace polar::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  polar::CounterRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

template <bool kReference>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    if constexpr (kReference) {
      reference::gemm(false, false, n, n, n, a, b, c, false);
    } else {
      gemm(false, false, n, n, n, a, b, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

struct AttentionInputs {
  AttentionDims dims;
  std::vector<double> q, k, v, dist, angle;
  std::vector<std::uint8_t> mask;
  std::vector<std::int32_t> dist_bins, angle_bins;

  AttentionInputs(std::size_t batch, std::size_t length) : dims{batch, length, 4, 16} {
    const std::size_t rows = batch * length, dm = dims.d_model();
    q = random_values(rows * dm, 3);
    k = random_values(rows * dm, 4);
    v = random_values(rows * dm, 5);
    dist = random_values(4 * 16, 6);
    angle = random_values(8 * 16, 7);
    mask.assign(rows, 1);
    polar::CounterRng rng(8);
    for (std::size_t i = 0; i < rows * length; ++i) {
      dist_bins.push_back(static_cast<std::int32_t>(rng.below(4)));
      angle_bins.push_back(static_cast<std::int32_t>(rng.below(8)));
    }
  }

  AttentionArgs args() const {
    return {dims, q, k, v, mask, {dist, dist_bins, 4}, {angle, angle_bins, 8}, false, 0.25};
  }
};

template <bool kReference>
void BM_AttentionForward(benchmark::State& state) {
  const AttentionInputs in(8, static_cast<std::size_t>(state.range(0)));
  const auto& d = in.dims;
  std::vector<double> probs(d.batch * d.heads * d.length * d.length), out(d.batch * d.length * d.d_model());
  set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    if constexpr (kReference) {
      reference::attention_forward(in.args(), probs, out);
    } else {
      attention_forward(in.args(), probs, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool kReference>
void BM_AttentionBackward(benchmark::State& state) {
  const AttentionInputs in(8, static_cast<std::size_t>(state.range(0)));
  const auto& d = in.dims;
  const std::size_t rows = d.batch * d.length, dm = d.d_model();
  std::vector<double> probs(d.batch * d.heads * d.length * d.length), out(rows * dm);
  attention_forward(in.args(), probs, out);
  const auto d_out = random_values(rows * dm, 9);
  std::vector<double> dq(rows * dm), dk(rows * dm), dv(rows * dm), dd(in.dist.size()), da(in.angle.size());
  set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    if constexpr (kReference) {
      reference::attention_backward(in.args(), probs, d_out, dq, dk, dv, {dd}, {da});
    } else {
      attention_backward(in.args(), probs, d_out, dq, dk, dv, {dd}, {da});
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

void sizes(benchmark::internal::Benchmark* b, std::initializer_list<int> lengths) {
  for (int n : lengths) {
    for (int threads : {1, 2, 4}) b->Args({n, threads});
  }
  b->ArgNames({"n", "threads"});
}

BENCHMARK(BM_Gemm<true>)->Apply([](auto* b) { sizes(b, {64, 256}); });
BENCHMARK(BM_Gemm<false>)->Apply([](auto* b) { sizes(b, {64, 256}); });
BENCHMARK(BM_AttentionForward<true>)->Apply([](auto* b) { sizes(b, {32, 128}); });
BENCHMARK(BM_AttentionForward<false>)->Apply([](auto* b) { sizes(b, {32, 128}); });
BENCHMARK(BM_AttentionBackward<true>)->Apply([](auto* b) { sizes(b, {32, 128}); });
BENCHMARK(BM_AttentionBackward<false>)->Apply([](auto* b) { sizes(b, {32, 128}); });

}  // namespace

BENCHMARK_MAIN();
