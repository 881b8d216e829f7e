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

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "polar/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace polar::kernels {
namespace {

constexpr std::size_t kParallelFlops = 1 << 14;

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t p = 0; p < n; ++p) s += a[p] * b[p];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t p = 0; p < n; ++p) y[p] += alpha * x[p];
}

struct BlockView {
  const AttentionArgs& args;
  std::size_t b, h;

  std::size_t L() const { return args.dims.length; }
  std::size_t dh() const { return args.dims.d_head; }
  std::size_t dm() const { return args.dims.d_model(); }
  bool live(std::size_t j) const { return args.mask[b * L() + j] != 0; }
  std::size_t row(std::size_t pos) const { return (b * L() + pos) * dm() + h * dh(); }
  std::size_t pair(std::size_t i, std::size_t j) const { return (b * L() + i) * L() + j; }
  std::size_t prob(std::size_t i) const { return ((b * args.dims.heads + h) * L() + i) * L(); }
  const double* table_row(const RelativeTable& t, std::size_t i, std::size_t j) const {
    return t.rows.data() + static_cast<std::size_t>(t.bins[pair(i, j)]) * dh();
  }
};

void forward_block(const BlockView& blk, std::span<double> probs, std::span<double> out,
                   const AttentionTerms* terms) {
  const AttentionArgs& a = blk.args;
  const std::size_t L = blk.L(), dh = blk.dh();
  for (std::size_t i = 0; i < L; ++i) {
    double* p = probs.data() + blk.prob(i);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L; ++j) {
      if (!blk.live(j)) {
        p[j] = 0.0;
        continue;
      }
      const double* q = a.q.data() + (a.standard_qk ? blk.row(i) : blk.row(j));
      const double* key = a.k.data() + (a.standard_qk ? blk.row(j) : blk.row(i));
      const double content = dot(q, key, dh);
      const double b1 = a.first.empty() ? 0.0 : dot(q, blk.table_row(a.first, i, j), dh);
      const double b2 = a.second.empty() ? 0.0 : dot(q, blk.table_row(a.second, i, j), dh);
      if (terms) {
        const std::size_t at = blk.prob(i) + j;
        terms->content[at] = content;
        terms->first_bias[at] = b1;
        terms->second_bias[at] = b2;
      }
      p[j] = (content + b1 + b2) * a.scale;
      top = std::max(top, p[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      if (!blk.live(j)) continue;
      p[j] = std::exp(p[j] - top);
      total += p[j];
    }
    double* o = out.data() + blk.row(i);
    std::fill(o, o + dh, 0.0);
    for (std::size_t j = 0; j < L; ++j) {
      if (!blk.live(j)) continue;
      p[j] /= total;
      axpy(p[j], a.v.data() + blk.row(j), o, dh);
    }
  }
}

void backward_block(const BlockView& blk, std::span<const double> probs, std::span<const double> d_out,
                    std::span<double> d_q, std::span<double> d_k, std::span<double> d_v,
                    std::vector<double>& g_first, std::vector<double>& g_second) {
  const AttentionArgs& a = blk.args;
  const std::size_t L = blk.L(), dh = blk.dh();
  std::vector<double> dp(L), direction(dh);
  for (std::size_t i = 0; i < L; ++i) {
    const double* p = probs.data() + blk.prob(i);
    const double* go = d_out.data() + blk.row(i);
    double weighted = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      if (!blk.live(j)) continue;
      dp[j] = dot(go, a.v.data() + blk.row(j), dh);
      weighted += p[j] * dp[j];
    }
    for (std::size_t j = 0; j < L; ++j) {
      if (!blk.live(j)) continue;
      axpy(p[j], go, d_v.data() + blk.row(j), dh);
      const double ds = p[j] * (dp[j] - weighted) * a.scale;
      const std::size_t q_row = a.standard_qk ? blk.row(i) : blk.row(j);
      const std::size_t k_row = a.standard_qk ? blk.row(j) : blk.row(i);
      const double* q = a.q.data() + q_row;
      std::copy(a.k.data() + k_row, a.k.data() + k_row + dh, direction.begin());
      if (!a.first.empty()) {
        const std::size_t bin = static_cast<std::size_t>(a.first.bins[blk.pair(i, j)]);
        axpy(1.0, blk.table_row(a.first, i, j), direction.data(), dh);
        axpy(ds, q, g_first.data() + bin * dh, dh);
      }
      if (!a.second.empty()) {
        const std::size_t bin = static_cast<std::size_t>(a.second.bins[blk.pair(i, j)]);
        axpy(1.0, blk.table_row(a.second, i, j), direction.data(), dh);
        axpy(ds, q, g_second.data() + bin * dh, dh);
      }
      axpy(ds, direction.data(), d_q.data() + q_row, dh);
      axpy(ds, q, d_k.data() + k_row, dh);
    }
  }
}

}  // namespace

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelFlops)
  for (long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* crow = C + i * n;
    if (trans_b) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = accumulate ? crow[j] : 0.0;
        const double* brow = B + j * k;
        if (trans_a) {
          for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * brow[p];
        } else {
          const double* arow = A + i * k;
          for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        }
        crow[j] = s;
      }
    } else {
      if (!accumulate) std::fill(crow, crow + n, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = trans_a ? A[p * m + i] : A[i * k + p];
        axpy(aip, B + p * n, crow, n);
      }
    }
  }
}

void attention_forward(const AttentionArgs& args, std::span<double> probs, std::span<double> out,
                       const AttentionTerms* terms) {
  const long blocks = static_cast<long>(args.dims.batch * args.dims.heads);
#pragma omp parallel for schedule(static)
  for (long bh = 0; bh < blocks; ++bh) {
    const BlockView blk{args, static_cast<std::size_t>(bh) / args.dims.heads,
                        static_cast<std::size_t>(bh) % args.dims.heads};
    forward_block(blk, probs, out, terms);
  }
}

void attention_backward(const AttentionArgs& args, std::span<const double> probs,
                        std::span<const double> d_out, std::span<double> d_q, std::span<double> d_k,
                        std::span<double> d_v, RelativeTableGrad d_first, RelativeTableGrad d_second) {
  const std::size_t n_blocks = args.dims.batch * args.dims.heads;
  const std::size_t dh = args.dims.d_head;
  std::vector<std::vector<double>> g_first(n_blocks, std::vector<double>(args.first.n_rows * dh));
  std::vector<std::vector<double>> g_second(n_blocks, std::vector<double>(args.second.n_rows * dh));
  const long blocks = static_cast<long>(n_blocks);
#pragma omp parallel for schedule(static)
  for (long bh = 0; bh < blocks; ++bh) {
    const std::size_t idx = static_cast<std::size_t>(bh);
    const BlockView blk{args, idx / args.dims.heads, idx % args.dims.heads};
    backward_block(blk, probs, d_out, d_q, d_k, d_v, g_first[idx], g_second[idx]);
  }
  // Fixed-order reduction keeps shared-table gradients thread-count independent.
  for (std::size_t idx = 0; idx < n_blocks; ++idx) {
    for (std::size_t t = 0; t < g_first[idx].size(); ++t) d_first.rows[t] += g_first[idx][t];
    for (std::size_t t = 0; t < g_second[idx].size(); ++t) d_second.rows[t] += g_second[idx][t];
  }
}

}  // namespace polar::kernels
