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

#include "polar/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "polar/errors.hpp"

namespace polar {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  storage_ = std::make_shared<Storage>();
  storage_->shape = std::move(shape);
  storage_->values = std::move(values);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::span<const double> Tensor::values() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return storage_->values[0];
}

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!storage_) throw ContractError("use of undefined tensor");
  storage_->requires_grad = flag;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<double> Tensor::grad() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  if (storage_->grad.size() != storage_->values.size()) storage_->grad.assign(storage_->values.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() const {
  if (storage_) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  return Tensor(shape(), std::vector<double>(values().begin(), values().end()), false);
}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void Tape::record(std::function<void()> backward_rule) {
  if (enabled_) rules_.push_back(std::move(backward_rule));
}

void Tape::backward(Tensor loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace polar
