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

#include <cstddef>
#include <cstdint>
#include <span>

// Hot loops of the encoder. Every kernel has a serial textbook version in
// `reference` that the tests compare against; the default versions split work
// over OpenMP threads along axes whose outputs are disjoint, so the result is
// bitwise independent of the thread count.
namespace polar::kernels {

void set_num_threads(int n);
int num_threads();

/// C[m x n] (+)= op(A)[m x k] * op(B)[k x n], row-major. op(A) = A^T when
/// trans_a (A is then stored k x m); likewise for B.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c, bool accumulate);

/// Geometry of one fused attention call: B documents padded to L positions,
/// `heads` heads of width d_head packed side by side in each row.
struct AttentionDims {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t heads = 0;
  std::size_t d_head = 0;
  std::size_t d_model() const { return heads * d_head; }
};

/// A learned table of per-head-width rows selected by a bin index for every
/// ordered pair (b, i, j). Empty table means "no bias term".
struct RelativeTable {
  std::span<const double> rows;        // n_rows x d_head
  std::span<const std::int32_t> bins;  // batch x length x length
  std::size_t n_rows = 0;
  bool empty() const { return n_rows == 0; }
};

struct RelativeTableGrad {
  std::span<double> rows;  // accumulated into
};

/// Scores for output position i over context positions j:
///   default:          s(i,j) = q_j . (k_i + t1[bin1(i,j)] + t2[bin2(i,j)]) * scale
///   standard_qk:      s(i,j) = q_i . (k_j + t1[bin1(i,j)] + t2[bin2(i,j)]) * scale
/// Masked j (mask == 0) are excluded from the softmax. out_i = sum_j p(i,j) v_j.
struct AttentionArgs {
  AttentionDims dims;
  std::span<const double> q, k, v;        // (batch*length) x d_model
  std::span<const std::uint8_t> mask;     // batch x length
  RelativeTable first, second;
  bool standard_qk = false;
  double scale = 1.0;
};

/// Optional per-term score dump, each batch x heads x length x length.
struct AttentionTerms {
  std::span<double> content, first_bias, second_bias;
};

/// probs: batch x heads x length x length; out: (batch*length) x d_model.
void attention_forward(const AttentionArgs& args, std::span<double> probs, std::span<double> out,
                       const AttentionTerms* terms = nullptr);

void attention_backward(const AttentionArgs& args, std::span<const double> probs,
                        std::span<const double> d_out, std::span<double> d_q, std::span<double> d_k,
                        std::span<double> d_v, RelativeTableGrad d_first, RelativeTableGrad d_second);

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c, bool accumulate);

void attention_forward(const AttentionArgs& args, std::span<double> probs, std::span<double> out);

void attention_backward(const AttentionArgs& args, std::span<const double> probs,
                        std::span<const double> d_out, std::span<double> d_q, std::span<double> d_k,
                        std::span<double> d_v, RelativeTableGrad d_first, RelativeTableGrad d_second);

}  // namespace reference
}  // namespace polar::kernels
