// Copyright (c) the Heliopress Authors. All rights reserved.
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

#include "heliopress/tensor.hpp"

#include <sstream>

namespace hp {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    check_shape(d >= 0, "negative extent");
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  check_shape(shape_numel(impl->shape) == int64_t(impl->value.size()),
              "shape does not match data length");
  return impl;
}
}  // namespace

Tensor Tensor::zeros(Shape shape) {
  int64_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(size_t(n))));
}

Tensor Tensor::full(Shape shape, double v) {
  int64_t n = shape_numel(shape);
  return Tensor(
      make_impl(std::move(shape), std::vector<double>(size_t(n), v)));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> data) {
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) {
  return Tensor(make_impl(Shape{}, std::vector<double>{v}));
}

double Tensor::item() const {
  check(defined() && numel() == 1, "item() requires a single-element tensor");
  return impl_->value[0];
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  impl->requires_grad = false;
  return Tensor(impl);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(impl);
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
  entries_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
  check(loss.defined() && loss.numel() == 1,
        "backward requires a scalar loss");
  TensorImpl* li = loss.impl();
  if (li->grad.empty()) li->grad.assign(1, 0.0);
  li->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

bool grad_enabled_for(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void accumulate_grad(TensorImpl* dst, std::span<const double> src) {
  if (dst->grad.empty()) dst->grad.assign(dst->value.size(), 0.0);
  for (size_t i = 0; i < src.size(); ++i) dst->grad[i] += src[i];
}

namespace detail {
Tape* swap_active_tape(Tape* t) {
  Tape* prev = g_active_tape;
  g_active_tape = t;
  return prev;
}
}  // namespace detail

}  // namespace hp
