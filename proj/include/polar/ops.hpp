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

#include "polar/tensor.hpp"

// Differentiable operations. Each one computes its output eagerly and, when the
// tape tracks any input, records the rule that pushes the output gradient back.
// Matrices are rank-2 row-major; row-wise ops act on the last axis.
namespace polar {

enum class GeluMode { kExact, kTanh };

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_transposed(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
/// Adds a length-cols vector to every row.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
/// x[rows x in] * weight[in x out] + bias[out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor sum(Tape& tape, const Tensor& a);
Tensor gelu(Tape& tape, const Tensor& x, GeluMode mode = GeluMode::kExact);
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor softmax(Tape& tape, const Tensor& x);
/// Gathers rows of table[V x d]; backward scatters additively.
Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const int> ids);
/// Mean negative log-likelihood over targets != ignore_index; 0 when none remain.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets, int ignore_index);
/// Inverted dropout; the keep mask is a pure function of seed.
Tensor dropout(Tape& tape, const Tensor& x, double p, std::uint64_t seed);

/// Scalar value of the GELU used by gelu(), for oracles and tests.
double gelu_value(double x, GeluMode mode);

}  // namespace polar
