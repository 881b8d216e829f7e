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

#include "polar/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "polar/errors.hpp"

namespace polar::geometry {

void BinningConfig::validate() const {
  if (!(rho_max > 0.0) || !std::isfinite(rho_max)) {
    throw ContractError("BinningConfig: rho_max must be positive, got " + std::to_string(rho_max));
  }
  if (n_dist_bins < 1 || n_angle_bins < 1) {
    throw ContractError("BinningConfig: bin counts must be >= 1");
  }
}

Center center(const BBox& b) {
  return {(b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0};
}

double rho(const Center& ci, const Center& cj) {
  return std::hypot(cj.cx - ci.cx, cj.cy - ci.cy);
}

double theta(const Center& ci, const Center& cj) {
  if (ci == cj) return 0.0;
  // x - x is +0.0 under round-to-nearest, so atan2 never returns -pi here.
  return std::atan2(cj.cy - ci.cy, cj.cx - ci.cx);
}

int quantize_distance(double r, const BinningConfig& cfg) {
  const int last = cfg.n_dist_bins - 1;
  if (!(r < cfg.rho_max)) return last;
  if (r <= 0.0) return 0;
  const int bin = static_cast<int>(std::floor(r * cfg.n_dist_bins / cfg.rho_max));
  return std::min(bin, last);
}

int quantize_angle(double t, const BinningConfig& cfg) {
  constexpr double kPi = std::numbers::pi;
  const int last = cfg.n_angle_bins - 1;
  const double scaled = (t + kPi) * cfg.n_angle_bins / (2.0 * kPi);
  if (!(scaled > 0.0)) return 0;
  return std::min(static_cast<int>(std::floor(scaled)), last);
}

int quantize_signed_offset(double d, const BinningConfig& cfg) {
  const int n_bins = 2 * cfg.n_dist_bins;
  const double clipped = std::clamp(d, -cfg.rho_max, cfg.rho_max);
  const double scaled = (clipped + cfg.rho_max) * n_bins / (2.0 * cfg.rho_max);
  return std::clamp(static_cast<int>(std::floor(scaled)), 0, n_bins - 1);
}

PairMatrix<PolarBinPair> relative_bins(std::span<const Center> centers, const BinningConfig& cfg) {
  PairMatrix<PolarBinPair> bins(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = 0; j < centers.size(); ++j) {
      bins(i, j) = {quantize_distance(rho(centers[i], centers[j]), cfg),
                    quantize_angle(theta(centers[i], centers[j]), cfg)};
    }
  }
  return bins;
}

PairMatrix<CartesianBinPair> cartesian_relative_bins(std::span<const BBox> boxes,
                                                     const BinningConfig& cfg) {
  PairMatrix<CartesianBinPair> bins(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      bins(i, j) = {quantize_signed_offset(boxes[j].x0 - boxes[i].x0, cfg),
                    quantize_signed_offset(boxes[j].y0 - boxes[i].y0, cfg)};
    }
  }
  return bins;
}

}  // namespace polar::geometry
