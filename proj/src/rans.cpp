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

#include "heliopress/rans.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "heliopress/entropy.hpp"

namespace hp {

namespace {
constexpr uint32_t kRansLow = 1u << 23;
constexpr double kInvSqrt2 = 0.7071067811865476;

double std_normal_cdf(double t) {
  return 0.5 * (1.0 + std::erf(t * kInvSqrt2));
}
}  // namespace

double discretized_gaussian_prob(int k, double mu, double sigma) {
  const double hi = (k >= kSymbolMax)
                        ? 1.0
                        : std_normal_cdf((double(k) - mu + 0.5) / sigma);
  const double lo = (k <= kSymbolMin)
                        ? 0.0
                        : std_normal_cdf((double(k) - mu - 0.5) / sigma);
  return std::max(hi - lo, kLikelihoodFloor);
}

int CdfTable::find(uint32_t cv) const {
  int lo = 0, hi = kAlphabet - 1;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (cum[size_t(mid)] <= cv)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

CdfTable build_cdf(double mu, double sigma) {
  std::array<double, CdfTable::kAlphabet> p;
  for (int i = 0; i < CdfTable::kAlphabet; ++i) {
    p[size_t(i)] = discretized_gaussian_prob(i + kSymbolMin, mu, sigma);
  }

  std::array<uint32_t, CdfTable::kAlphabet> f;
  std::array<double, CdfTable::kAlphabet> rem;
  int64_t assigned = 0;
  for (int i = 0; i < CdfTable::kAlphabet; ++i) {
    const double raw = p[size_t(i)] * double(CdfTable::kTotal);
    f[size_t(i)] = uint32_t(raw);
    rem[size_t(i)] = raw - double(f[size_t(i)]);
    assigned += f[size_t(i)];
  }

  int64_t deficit = int64_t(CdfTable::kTotal) - assigned;
  if (deficit > 0) {
    // Largest remainders win; ties resolved toward the lower symbol.
    std::array<int, CdfTable::kAlphabet> order;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return rem[size_t(a)] > rem[size_t(b)];
    });
    for (int64_t i = 0; i < deficit; ++i) f[size_t(order[size_t(i)])] += 1;
  } else {
    // Floating error can overshoot by a hair; shave the largest bins.
    while (deficit < 0) {
      auto it = std::max_element(f.begin(), f.end());
      *it -= 1;
      ++deficit;
    }
  }

  // Minimum-1 repair, stealing from the largest bin.
  for (int i = 0; i < CdfTable::kAlphabet; ++i) {
    if (f[size_t(i)] == 0) {
      auto it = std::max_element(f.begin(), f.end());
      *it -= 1;
      f[size_t(i)] = 1;
    }
  }

  CdfTable t;
  t.cum[0] = 0;
  for (int i = 0; i < CdfTable::kAlphabet; ++i) {
    t.cum[size_t(i + 1)] = t.cum[size_t(i)] + f[size_t(i)];
  }
  return t;
}

void RansEncoder::put(int symbol, const CdfTable& cdf) {
  if (symbol < kSymbolMin || symbol > kSymbolMax)
    throw ContractError("rans: symbol outside alphabet");
  const int idx = symbol - kSymbolMin;
  entries_.push_back(
      Entry{cdf.cum[size_t(idx)], cdf.freq(idx)});
}

std::vector<uint8_t> RansEncoder::finish() const {
  std::vector<uint8_t> out;
  out.reserve(entries_.size() / 2 + 8);
  uint32_t x = kRansLow;
  // Reverse order so the decoder pops symbols forward.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const uint32_t x_max =
        ((kRansLow >> CdfTable::kPrecision) << 8) * it->freq;
    while (x >= x_max) {
      out.push_back(uint8_t(x & 0xFF));
      x >>= 8;
    }
    x = ((x / it->freq) << CdfTable::kPrecision) + (x % it->freq) + it->start;
  }
  for (int i = 0; i < 4; ++i) {
    out.push_back(uint8_t(x & 0xFF));
    x >>= 8;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

RansDecoder::RansDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
  if (bytes_.size() < 4) throw DecodeError("rans: stream shorter than state");
  state_ = (uint32_t(bytes_[0]) << 24) | (uint32_t(bytes_[1]) << 16) |
           (uint32_t(bytes_[2]) << 8) | uint32_t(bytes_[3]);
  pos_ = 4;
}

int RansDecoder::get(const CdfTable& cdf) {
  const uint32_t mask = CdfTable::kTotal - 1;
  const uint32_t cv = state_ & mask;
  const int idx = cdf.find(cv);
  const uint32_t freq = cdf.freq(idx);
  state_ = freq * (state_ >> CdfTable::kPrecision) + cv -
           cdf.cum[size_t(idx)];
  while (state_ < kRansLow) {
    if (pos_ >= bytes_.size())
      throw DecodeError("rans: truncated stream (state underflow)");
    state_ = (state_ << 8) | bytes_[pos_++];
  }
  return idx + kSymbolMin;
}

void RansDecoder::finish() const {
  if (pos_ != bytes_.size())
    throw DecodeError("rans: trailing bytes after final symbol");
  if (state_ != kRansLow)
    throw DecodeError("rans: final state mismatch (corrupt stream)");
}

std::vector<uint8_t> rans_encode(std::span<const int> symbols,
                                 std::span<const CdfTable> cdfs) {
  check(symbols.size() == cdfs.size(),
        "rans_encode: one CDF required per symbol");
  RansEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) enc.put(symbols[i], cdfs[i]);
  return enc.finish();
}

std::vector<int> rans_decode(std::span<const uint8_t> bytes,
                             std::span<const CdfTable> cdfs, size_t count) {
  check(cdfs.size() == count, "rans_decode: one CDF required per symbol");
  RansDecoder dec(bytes);
  std::vector<int> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) out.push_back(dec.get(cdfs[i]));
  dec.finish();
  return out;
}

}  // namespace hp
