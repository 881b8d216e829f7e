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

#include "polar/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "polar/errors.hpp"
#include "polar/rng.hpp"

namespace polar {

bool GradCheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamGradReport& p) { return p.passed; });
}

std::string GradCheckReport::describe() const {
  std::ostringstream os;
  for (const ParamGradReport& p : params) {
    os << (p.passed ? "ok   " : "FAIL ") << p.name << " checked=" << p.checked
       << " max_rel_err=" << p.max_rel_error;
    if (!p.passed) {
      os << " at index " << p.worst_index << " (analytic " << p.analytic_at_worst << ", numeric "
         << p.numeric_at_worst << ")";
    }
    os << '\n';
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss, std::span<const NamedTensor> params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0) || !(options.tol > 0.0)) {
    throw ContractError("grad_check: eps and tol must be positive");
  }
  std::vector<Tensor> handles;
  for (const auto& [name, t] : params) {
    Tensor h = t;
    h.set_requires_grad(true);
    h.zero_grad();
    handles.push_back(h);
  }
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto evaluate = [&]() {
    Tape tape = Tape::inference();
    return loss(tape).item();
  };

  GradCheckReport report;
  for (std::size_t p = 0; p < handles.size(); ++p) {
    Tensor& t = handles[p];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> indices(t.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (indices.size() > options.full_check_limit) {
      CounterRng rng(options.seed, p);
      for (std::size_t s = 0; s < options.sample_size; ++s) {
        std::swap(indices[s], indices[s + rng.below(indices.size() - s)]);
      }
      indices.resize(options.sample_size);
      std::sort(indices.begin(), indices.end());
    }
    ParamGradReport entry;
    entry.name = params[p].first;
    entry.checked = indices.size();
    auto values = t.mutable_values();
    for (std::size_t idx : indices) {
      const double saved = values[idx];
      values[idx] = saved + options.eps;
      const double up = evaluate();
      values[idx] = saved - options.eps;
      const double down = evaluate();
      values[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_error || !std::isfinite(rel)) {
        entry.max_rel_error = rel;
        entry.worst_index = idx;
        entry.analytic_at_worst = a;
        entry.numeric_at_worst = numeric;
      }
    }
    entry.passed = entry.max_rel_error <= options.tol;
    report.params.push_back(entry);
  }
  for (Tensor& t : handles) t.zero_grad();
  return report;
}

}  // namespace polar
