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

#include "polar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "polar/errors.hpp"
#include "polar/kernels.hpp"
#include "polar/rng.hpp"

namespace polar {
namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Tensor make_output(Shape shape, std::vector<double> values, bool tracked) {
  return Tensor(std::move(shape), std::move(values), tracked);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kTanhC = 0.79788456080286535588;  // sqrt(2/pi)

double gelu_derivative(double x, GeluMode mode) {
  if (mode == GeluMode::kExact) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
  }
  const double u = kTanhC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kTanhC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

double gelu_value(double x, GeluMode mode) {
  if (mode == GeluMode::kExact) return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  return 0.5 * x * (1.0 + std::tanh(kTanhC * (x + 0.044715 * x * x * x)));
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, false, m, n, k, a.values(), b.values(), out, false);
  const bool tracked = tape.tracks({&a, &b});
  Tensor y = make_output({m, n}, std::move(out), tracked);
  if (tracked) {
    tape.record([a, b, y, m, n, k]() mutable {
      if (a.requires_grad()) kernels::gemm(false, true, m, k, n, y.grad(), b.values(), a.grad(), true);
      if (b.requires_grad()) kernels::gemm(true, false, k, n, m, a.values(), y.grad(), b.grad(), true);
    });
  }
  return y;
}

Tensor matmul_transposed(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_transposed: inner dimensions differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, true, m, n, k, a.values(), b.values(), out, false);
  const bool tracked = tape.tracks({&a, &b});
  Tensor y = make_output({m, n}, std::move(out), tracked);
  if (tracked) {
    tape.record([a, b, y, m, n, k]() mutable {
      // dA = G * B, dB = G^T * A
      if (a.requires_grad()) kernels::gemm(false, false, m, k, n, y.grad(), b.values(), a.grad(), true);
      if (b.requires_grad()) kernels::gemm(true, false, n, k, m, y.grad(), a.values(), b.grad(), true);
    });
  }
  return y;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = av[t] + bv[t];
  const bool tracked = tape.tracks({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([a, b, y]() mutable {
      const auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t t = 0; t < g.size(); ++t) gb[t] += g[t];
      }
    });
  }
  return y;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (bias.numel() != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  const bool tracked = tape.tracks({&x, &bias});
  Tensor y = make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([x, bias, y, rows, cols]() mutable {
      const auto g = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t t = 0; t < g.size(); ++t) gx[t] += g[t];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    });
  }
  return y;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(tape, matmul(tape, x, weight), bias);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = av[t] * bv[t];
  const bool tracked = tape.tracks({&a, &b});
  Tensor y = make_output(a.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([a, b, y]() mutable {
      const auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        const auto bv = b.values();
        for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * bv[t];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const auto av = a.values();
        for (std::size_t t = 0; t < g.size(); ++t) gb[t] += g[t] * av[t];
      }
    });
  }
  return y;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  const bool tracked = tape.tracks({&a});
  Tensor y = make_output(a.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([a, y, factor]() mutable {
      const auto g = y.grad();
      auto ga = a.grad();
      for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * factor;
    });
  }
  return y;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const bool tracked = tape.tracks({&a});
  Tensor y = make_output({}, {s}, tracked);
  if (tracked) {
    tape.record([a, y]() mutable {
      const double g = y.grad()[0];
      for (double& ga : a.grad()) ga += g;
    });
  }
  return y;
}

Tensor gelu(Tape& tape, const Tensor& x, GeluMode mode) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = gelu_value(xv[t], mode);
  const bool tracked = tape.tracks({&x});
  Tensor y = make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([x, y, mode]() mutable {
      const auto g = y.grad();
      const auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t t = 0; t < g.size(); ++t) gx[t] += g[t] * gelu_derivative(xv[t], mode);
    });
  }
  return y;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + " do not match " +
                         shape_string(x.shape()));
  }
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(x.numel()), normed(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normed[r * d + c] = (row[c] - mean) * inv_std[r];
      out[r * d + c] = normed[r * d + c] * gv[c] + bv[c];
    }
  }
  const bool tracked = tape.tracks({&x, &gain, &bias});
  Tensor y = make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([x, gain, bias, y, rows, d, normed = std::move(normed),
                 inv_std = std::move(inv_std)]() mutable {
      const auto g = y.grad();
      const auto gv = gain.values();
      if (gain.requires_grad() || bias.requires_grad()) {
        auto gg = gain.grad();
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            gg[c] += g[r * d + c] * normed[r * d + c];
            gb[c] += g[r * d + c];
          }
        }
      }
      if (!x.requires_grad()) return;
      auto gx = x.grad();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dn = 0.0, mean_dn_n = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dn = g[r * d + c] * gv[c];
          mean_dn += dn;
          mean_dn_n += dn * normed[r * d + c];
        }
        mean_dn *= inv_d;
        mean_dn_n *= inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          const double dn = g[r * d + c] * gv[c];
          gx[r * d + c] += inv_std[r] * (dn - mean_dn - normed[r * d + c] * mean_dn_n);
        }
      }
    });
  }
  return y;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double top = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - top);
      total += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= total;
  }
  const bool tracked = tape.tracks({&x});
  Tensor y = make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([x, y, rows, n]() mutable {
      const auto g = y.grad();
      const auto p = y.values();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * p[r * n + c];
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += p[r * n + c] * (g[r * n + c] - dot);
      }
    });
  }
  return y;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding_lookup");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  const auto tv = table.values();
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
  }
  const bool tracked = tape.tracks({&table});
  Tensor y = make_output({ids.size(), d}, std::move(out), tracked);
  if (tracked) {
    tape.record([table, y, ids = std::vector<int>(ids.begin(), ids.end()), d]() mutable {
      const auto g = y.grad();
      auto gt = table.grad();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        double* dst = gt.data() + static_cast<std::size_t>(ids[r]) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
      }
    });
  }
  return y;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_string(logits.shape()) + " logits");
  }
  const auto lv = logits.values();
  std::vector<double> probs(lv.size(), 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " outside " +
                       std::to_string(classes) + " classes");
    }
    const double* row = lv.data() + r * classes;
    const double top = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = std::exp(row[c] - top);
      z += probs[r * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= z;
    total += top + std::log(z) - row[targets[r]];
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  const bool tracked = tape.tracks({&logits});
  Tensor y = make_output({}, {loss}, tracked);
  if (tracked && counted) {
    tape.record([logits, y, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
                 ignore_index, classes, counted]() mutable {
      const double g = y.grad()[0] / static_cast<double>(counted);
      auto gl = logits.grad();
      for (std::size_t r = 0; r < tg.size(); ++r) {
        if (tg[r] == ignore_index) continue;
        for (std::size_t c = 0; c < classes; ++c) gl[r * classes + c] += g * probs[r * classes + c];
        gl[r * classes + static_cast<std::size_t>(tg[r])] -= g;
      }
    });
  }
  return y;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  CounterRng rng(seed, 0xD0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = xv[t] * mask[t];
  const bool tracked = tape.tracks({&x});
  Tensor y = make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record([x, y, mask = std::move(mask)]() mutable {
      const auto g = y.grad();
      auto gx = x.grad();
      for (std::size_t t = 0; t < g.size(); ++t) gx[t] += g[t] * mask[t];
    });
  }
  return y;
}

}  // namespace polar
