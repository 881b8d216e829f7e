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
#include <span>
#include <vector>

namespace polar::geometry {

/// Axis-aligned box in normalized page coordinates (thousandths of the page
/// extent). Zero-area boxes are legal.
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool valid() const {
    return 0 <= x0 && x0 <= x1 && x1 <= 1000 && 0 <= y0 && y0 <= y1 && y1 <= 1000;
  }
  bool operator==(const BBox&) const = default;
};

struct Center {
  double cx = 0.0;
  double cy = 0.0;
  bool operator==(const Center&) const = default;
};

struct BinningConfig {
  double rho_max = 500.0;
  int n_dist_bins = 4;
  int n_angle_bins = 8;

  /// Throws ContractError when a field is out of range.
  void validate() const;
  bool operator==(const BinningConfig&) const = default;
};

struct PolarBinPair {
  int dist_bin = 0;
  int angle_bin = 0;
  bool operator==(const PolarBinPair&) const = default;
};

struct CartesianBinPair {
  int dx_bin = 0;
  int dy_bin = 0;
  bool operator==(const CartesianBinPair&) const = default;
};

/// Dense row-major n x n matrix indexed by ordered token pairs.
template <typename T>
class PairMatrix {
 public:
  PairMatrix() = default;
  explicit PairMatrix(std::size_t n) : n_(n), cells_(n * n) {}

  std::size_t size() const { return n_; }
  T& operator()(std::size_t i, std::size_t j) { return cells_[i * n_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return cells_[i * n_ + j]; }
  std::span<const T> cells() const { return cells_; }
  bool operator==(const PairMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<T> cells_;
};

Center center(const BBox& b);

/// Euclidean distance between two centers.
double rho(const Center& ci, const Center& cj);

/// Angle of the displacement cj - ci measured from the x axis, in (-pi, pi].
/// The page y axis points down, so pi/2 means "cj is below ci". Exactly 0 when
/// the two centers coincide.
double theta(const Center& ci, const Center& cj);

/// min(floor(r * n / rho_max), n - 1); saturates for r >= rho_max.
int quantize_distance(double r, const BinningConfig& cfg);

/// Equal-width bins over the full circle starting at -pi; pi falls in the last bin.
int quantize_angle(double t, const BinningConfig& cfg);

/// Signed offset clipped to [-rho_max, rho_max], split into 2 * n_dist_bins bins.
/// A zero offset lands in bin n_dist_bins.
int quantize_signed_offset(double d, const BinningConfig& cfg);

PairMatrix<PolarBinPair> relative_bins(std::span<const Center> centers, const BinningConfig& cfg);

/// Top-left-corner offsets between boxes, used as the Cartesian ablation baseline.
PairMatrix<CartesianBinPair> cartesian_relative_bins(std::span<const BBox> boxes,
                                                     const BinningConfig& cfg);

}  // namespace polar::geometry
