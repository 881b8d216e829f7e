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

// Serial textbook versions of the kernels in kernels.cpp. Kept for testing
// and benchmarking; not used on the training path.

#include <cmath>
#include <limits>
#include <vector>

#include "polar/kernels.hpp"

namespace polar::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = trans_a ? a[p * m + i] : a[i * k + p];
        const double bpj = trans_b ? b[j * k + p] : b[p * n + j];
        s += aip * bpj;
      }
      c[i * n + j] = s;
    }
  }
}

namespace {

double score(const AttentionArgs& a, std::size_t b, std::size_t h, std::size_t i, std::size_t j) {
  const std::size_t L = a.dims.length, dh = a.dims.d_head, dm = a.dims.d_model();
  const std::size_t qi = a.standard_qk ? i : j;
  const std::size_t ki = a.standard_qk ? j : i;
  const std::size_t pair = (b * L + i) * L + j;
  double content = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t c = 0; c < dh; ++c) {
    const double q = a.q[(b * L + qi) * dm + h * dh + c];
    content += q * a.k[(b * L + ki) * dm + h * dh + c];
    if (!a.first.empty()) b1 += q * a.first.rows[a.first.bins[pair] * dh + c];
    if (!a.second.empty()) b2 += q * a.second.rows[a.second.bins[pair] * dh + c];
  }
  return (content + b1 + b2) * a.scale;
}

}  // namespace

void attention_forward(const AttentionArgs& a, std::span<double> probs, std::span<double> out) {
  const std::size_t B = a.dims.batch, H = a.dims.heads, L = a.dims.length, dh = a.dims.d_head;
  const std::size_t dm = a.dims.d_model();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(L, -std::numeric_limits<double>::infinity());
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (a.mask[b * L + j]) {
            s[j] = score(a, b, h, i, j);
            top = std::max(top, s[j]);
          }
        }
        double total = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          s[j] = a.mask[b * L + j] ? std::exp(s[j] - top) : 0.0;
          total += s[j];
        }
        for (std::size_t j = 0; j < L; ++j) probs[((b * H + h) * L + i) * L + j] = s[j] / total;
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            if (a.mask[b * L + j]) acc += probs[((b * H + h) * L + i) * L + j] * a.v[(b * L + j) * dm + h * dh + c];
          }
          out[(b * L + i) * dm + h * dh + c] = acc;
        }
      }
    }
  }
}

void attention_backward(const AttentionArgs& a, std::span<const double> probs,
                        std::span<const double> d_out, std::span<double> d_q, std::span<double> d_k,
                        std::span<double> d_v, RelativeTableGrad d_first, RelativeTableGrad d_second) {
  const std::size_t B = a.dims.batch, H = a.dims.heads, L = a.dims.length, dh = a.dims.d_head;
  const std::size_t dm = a.dims.d_model();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        const double* p = probs.data() + ((b * H + h) * L + i) * L;
        std::vector<double> dp(L, 0.0);
        double weighted = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!a.mask[b * L + j]) continue;
          for (std::size_t c = 0; c < dh; ++c) {
            dp[j] += d_out[(b * L + i) * dm + h * dh + c] * a.v[(b * L + j) * dm + h * dh + c];
          }
          weighted += p[j] * dp[j];
        }
        for (std::size_t j = 0; j < L; ++j) {
          if (!a.mask[b * L + j]) continue;
          const double ds = p[j] * (dp[j] - weighted) * a.scale;
          const std::size_t qi = a.standard_qk ? i : j;
          const std::size_t ki = a.standard_qk ? j : i;
          const std::size_t pair = (b * L + i) * L + j;
          for (std::size_t c = 0; c < dh; ++c) {
            const std::size_t qc = (b * L + qi) * dm + h * dh + c;
            const std::size_t kc = (b * L + ki) * dm + h * dh + c;
            d_v[(b * L + j) * dm + h * dh + c] += p[j] * d_out[(b * L + i) * dm + h * dh + c];
            double key = a.k[kc];
            if (!a.first.empty()) {
              key += a.first.rows[a.first.bins[pair] * dh + c];
              d_first.rows[a.first.bins[pair] * dh + c] += ds * a.q[qc];
            }
            if (!a.second.empty()) {
              key += a.second.rows[a.second.bins[pair] * dh + c];
              d_second.rows[a.second.bins[pair] * dh + c] += ds * a.q[qc];
            }
            d_q[qc] += ds * key;
            d_k[kc] += ds * a.q[qc];
          }
        }
      }
    }
  }
}

}  // namespace polar::kernels::reference
