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

#ifndef HELIOPRESS_RANS_HPP_
#define HELIOPRESS_RANS_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "heliopress/base.hpp"

namespace hp {

// Quantized CDF over the alphabet [-128, 127] with 16-bit total mass.
// Every symbol keeps frequency >= 1 so any symbol stays decodable.
struct CdfTable {
  static constexpr int kPrecision = 16;
  static constexpr uint32_t kTotal = 1u << kPrecision;
  static constexpr int kAlphabet = 256;

  std::array<uint32_t, kAlphabet + 1> cum;  // cum[0]=0, cum[256]=65536

  uint32_t freq(int index) const {
    return cum[size_t(index + 1)] - cum[size_t(index)];
  }
  // Largest symbol index with cum[index] <= cv.
  int find(uint32_t cv) const;
};

// Frequencies proportional to the discretized Gaussian, rounded by largest
// remainder to total 2^16, then zero bins repaired to 1 by stealing from the
// largest bin.  Deterministic in (mu, sigma).
CdfTable build_cdf(double mu, double sigma);

// Scalar discretized-Gaussian probability with tail absorption and the
// 2^-64 floor; k in [-128, 127].
double discretized_gaussian_prob(int k, double mu, double sigma);

// Streaming rANS: 32-bit state, byte renormalization.  Symbols are encoded
// in reverse at finish() so the decoder reads forward.
class RansEncoder {
 public:
  void put(int symbol, const CdfTable& cdf);
  std::vector<uint8_t> finish() const;
  size_t num_symbols() const { return entries_.size(); }

 private:
  struct Entry {
    uint32_t start, freq;
  };
  std::vector<Entry> entries_;
};

class RansDecoder {
 public:
  explicit RansDecoder(std::span<const uint8_t> bytes);
  int get(const CdfTable& cdf);
  // Throws unless the stream was consumed exactly and the state returned to
  // its initial value.
  void finish() const;

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint32_t state_ = 0;
};

// One-shot helpers; cdfs.size() must equal the symbol count.
std::vector<uint8_t> rans_encode(std::span<const int> symbols,
                                 std::span<const CdfTable> cdfs);
std::vector<int> rans_decode(std::span<const uint8_t> bytes,
                             std::span<const CdfTable> cdfs, size_t count);

}  // namespace hp

#endif  // HELIOPRESS_RANS_HPP_
