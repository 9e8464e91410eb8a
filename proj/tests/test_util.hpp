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

#ifndef HELIOPRESS_TESTS_TEST_UTIL_HPP_
#define HELIOPRESS_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <cstdint>

#include "heliopress/tensor.hpp"
#include "heliopress/util.hpp"

namespace hptest {

inline hp::Tensor random_tensor(hp::Shape shape, hp::Rng& rng,
                                double lo = -1.0, double hi = 1.0) {
  hp::Tensor t = hp::Tensor::zeros(std::move(shape));
  for (double& v : t.value_mut()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const hp::Tensor& a, const hp::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst,
                     std::abs(a.value()[size_t(i)] - b.value()[size_t(i)]));
  }
  return worst;
}

inline bool bit_identical(const hp::Tensor& a, const hp::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (std::memcmp(&a.value()[size_t(i)], &b.value()[size_t(i)],
                    sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

inline double dot(const hp::Tensor& a, const hp::Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    s += a.value()[size_t(i)] * b.value()[size_t(i)];
  return s;
}

}  // namespace hptest

#endif  // HELIOPRESS_TESTS_TEST_UTIL_HPP_
