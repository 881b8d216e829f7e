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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace polar {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of 64-bit reals with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// parameters, optimizer state and recorded backward rules refer to one value.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  /// Product of all but the last axis.
  std::size_t rows() const;
  /// Size of the last axis.
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  /// Gradient buffer; allocated as zeros on first access. Handles share
  /// storage, so constness of the handle does not extend to the buffer.
  std::span<double> grad() const;
  void zero_grad() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }
  Tensor detached_copy() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

/// Ordered record of backward rules. Single writer.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool enabled) : enabled_(enabled) {}

  static Tape inference() { return Tape(false); }

  bool enabled() const { return enabled_; }
  /// True when an op over these inputs must record a backward rule.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  void record(std::function<void()> backward_rule);
  std::size_t size() const { return rules_.size(); }
  void clear() { rules_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the rules in reverse order.
  void backward(Tensor loss);

 private:
  bool enabled_ = true;
  std::vector<std::function<void()>> rules_;
};

/// Throws ContractError when loss is not a scalar.
void backward(const Tensor& loss, Tape& tape);

}  // namespace polar
