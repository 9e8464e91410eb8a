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

#ifndef HELIOPRESS_TENSOR_HPP_
#define HELIOPRESS_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "heliopress/base.hpp"

namespace hp {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense 64-bit row-major array.  Values are logically immutable once the
// tensor has been built; the gradient buffer is the only mutable part and
// is owned by the training thread.
struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_vector(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);  // rank-0

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return int(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[size_t(i)]; }
  int64_t numel() const { return int64_t(impl_->value.size()); }

  std::span<const double> value() const { return impl_->value; }
  std::span<double> value_mut() { return impl_->value; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  // Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad();
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  // Deep copy that does not require gradients and shares no storage.
  Tensor detach() const;
  Tensor clone() const;  // deep copy preserving requires_grad

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape.  Construction makes it the active tape for the current
// thread (restoring the previous one on destruction); primitive ops record
// a backward step when any operand requires gradients.  backward() replays
// the steps in exact reverse execution order and accumulates into each
// leaf's grad buffer; repeated calls accumulate further.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_step);
  void backward(const Tensor& loss);
  size_t num_entries() const { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
  Tape* prev_ = nullptr;
};

// Whether an op's output participates in the tape.
bool grad_enabled_for(std::initializer_list<const Tensor*> inputs);

namespace detail {
// Swaps the thread's active tape, returning the previous one.
Tape* swap_active_tape(Tape* t);
}  // namespace detail

// Accumulates src into dst->grad (allocating if empty).
void accumulate_grad(TensorImpl* dst, std::span<const double> src);

}  // namespace hp

#endif  // HELIOPRESS_TENSOR_HPP_
