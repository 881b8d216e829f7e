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

#include <vector>

#include "doctest.h"
#include "polar/kernels.hpp"
#include "polar/rng.hpp"
#include "test_support.hpp"

using namespace polar;
using namespace polar::kernels;
using polar::testing::max_abs_diff;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 9);
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

struct AttentionCase {
  AttentionDims dims;
  std::vector<double> q, k, v, t1, t2, d_out;
  std::vector<std::uint8_t> mask;
  std::vector<std::int32_t> b1, b2;
  bool standard_qk = false;

  AttentionArgs args() const {
    AttentionArgs a{dims, q, k, v, mask, {}, {}, standard_qk, 0.5};
    a.first = {t1, b1, 4};
    a.second = {t2, b2, 8};
    return a;
  }
};

AttentionCase make_case(std::uint64_t seed, bool standard_qk) {
  CounterRng rng(seed);
  AttentionCase c;
  c.dims = {1 + rng.below(3), 1 + rng.below(9), 1 + rng.below(4), 1 + rng.below(6)};
  const std::size_t rows = c.dims.batch * c.dims.length, dm = c.dims.d_model();
  c.q = random_values(rows * dm, seed + 1);
  c.k = random_values(rows * dm, seed + 2);
  c.v = random_values(rows * dm, seed + 3);
  c.t1 = random_values(4 * c.dims.d_head, seed + 4);
  c.t2 = random_values(8 * c.dims.d_head, seed + 5);
  c.d_out = random_values(rows * dm, seed + 6);
  c.mask.assign(rows, 1);
  for (std::size_t b = 0; b < c.dims.batch; ++b) {
    const std::size_t pad = rng.below(c.dims.length);
    for (std::size_t j = c.dims.length - pad; j < c.dims.length; ++j) c.mask[b * c.dims.length + j] = 0;
  }
  for (std::size_t i = 0; i < rows * c.dims.length; ++i) {
    c.b1.push_back(static_cast<std::int32_t>(rng.below(4)));
    c.b2.push_back(static_cast<std::int32_t>(rng.below(8)));
  }
  c.standard_qk = standard_qk;
  return c;
}

struct Grads {
  std::vector<double> probs, out, dq, dk, dv, g1, g2;
};

template <typename Forward, typename Backward>
Grads run(const AttentionCase& c, Forward fwd, Backward bwd) {
  const AttentionArgs a = c.args();
  const std::size_t rows = c.dims.batch * c.dims.length, dm = c.dims.d_model();
  Grads g;
  g.probs.assign(c.dims.batch * c.dims.heads * c.dims.length * c.dims.length, 0.0);
  g.out.assign(rows * dm, 0.0);
  fwd(a, g.probs, g.out);
  g.dq.assign(rows * dm, 0.0);
  g.dk.assign(rows * dm, 0.0);
  g.dv.assign(rows * dm, 0.0);
  g.g1.assign(c.t1.size(), 0.0);
  g.g2.assign(c.t2.size(), 0.0);
  bwd(a, g.probs, c.d_out, g.dq, g.dk, g.dv, RelativeTableGrad{g.g1}, RelativeTableGrad{g.g2});
  return g;
}

Grads run_parallel(const AttentionCase& c) {
  return run(
      c, [](const AttentionArgs& a, std::span<double> p, std::span<double> o) { attention_forward(a, p, o); },
      [](auto&&... xs) { attention_backward(xs...); });
}

Grads run_reference(const AttentionCase& c) {
  return run(
      c, [](const AttentionArgs& a, std::span<double> p, std::span<double> o) { reference::attention_forward(a, p, o); },
      [](auto&&... xs) { reference::attention_backward(xs...); });
}

// Shared-table gradients sum over every (document, head) block; the threaded
// kernel reduces per-block partial sums in a fixed order, which associates the
// additions differently from the reference's single running sum.
void check_equal(const Grads& x, const Grads& y, bool tables_bitwise = true) {
  CHECK(x.probs == y.probs);
  CHECK(x.out == y.out);
  CHECK(x.dq == y.dq);
  CHECK(x.dk == y.dk);
  CHECK(x.dv == y.dv);
  if (tables_bitwise) {
    CHECK(x.g1 == y.g1);
    CHECK(x.g2 == y.g2);
  } else {
    CHECK(max_abs_diff(x.g1, y.g1) <= 1e-12);
    CHECK(max_abs_diff(x.g2, y.g2) <= 1e-12);
  }
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm matches the reference bitwise for every transpose combination") {
    CounterRng rng(1);
    for (int threads : {1, 3}) {
      set_num_threads(threads);
      for (int s = 0; s < 24; ++s) {
        const std::size_t m = 1 + rng.below(70), n = 1 + rng.below(70), k = 1 + rng.below(70);
        const bool ta = s & 1, tb = s & 2, acc = s & 4;
        const auto a = random_values(m * k, 10 + s), b = random_values(k * n, 50 + s);
        auto c1 = random_values(m * n, 90 + s);
        auto c2 = c1;
        gemm(ta, tb, m, n, k, a, b, c1, acc);
        reference::gemm(ta, tb, m, n, k, a, b, c2, acc);
        REQUIRE(c1 == c2);
      }
    }
    set_num_threads(1);
  }

  TEST_CASE("attention matches the reference") {
    for (int threads : {1, 4}) {
      set_num_threads(threads);
      for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const AttentionCase c = make_case(1000 + seed, seed % 2 == 1);
        check_equal(run_parallel(c), run_reference(c), false);
      }
    }
    set_num_threads(1);
  }

  TEST_CASE("results do not depend on the thread count") {
    const AttentionCase c = make_case(77, false);
    set_num_threads(1);
    const Grads one = run_parallel(c);
    set_num_threads(4);
    const Grads four = run_parallel(c);
    set_num_threads(1);
    check_equal(one, four);
  }

  TEST_CASE("attention rows sum to one over live positions") {
    const AttentionCase c = make_case(5, false);
    const Grads g = run_parallel(c);
    const std::size_t L = c.dims.length;
    for (std::size_t b = 0; b < c.dims.batch; ++b) {
      for (std::size_t h = 0; h < c.dims.heads; ++h) {
        for (std::size_t i = 0; i < L; ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            const double p = g.probs[((b * c.dims.heads + h) * L + i) * L + j];
            if (!c.mask[b * L + j]) CHECK(p == 0.0);
            total += p;
          }
          CHECK(std::abs(total - 1.0) <= 1e-12);
        }
      }
    }
  }
}
