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
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "polar/tensor.hpp"

namespace polar {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  // Relative errors are measured against max(|analytic|, |numeric|, floor) so
  // that entries whose true gradient is zero compare on an absolute scale.
  double floor = 1e-6;
  // Tensors up to this size are checked entry by entry; larger ones use a
  // seeded sample of `sample_size` entries.
  std::size_t full_check_limit = 256;
  std::size_t sample_size = 64;
  std::uint64_t seed = 0;
};

struct ParamGradReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamGradReport> params;
  bool passed() const;
  /// One line per parameter; failing lines name the worst index.
  std::string describe() const;
};

/// Compares reverse-mode gradients of `loss` against central differences.
/// `loss` must build its graph on the tape it is given and return a scalar.
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss, std::span<const NamedTensor> params,
                           const GradCheckOptions& options = {});

}  // namespace polar
