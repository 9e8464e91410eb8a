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

#ifndef HELIOPRESS_UTIL_HPP_
#define HELIOPRESS_UTIL_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hp {

// CRC-32 (IEEE 802.3 polynomial, reflected). crc32("123456789") == 0xCBF43926.
uint32_t crc32(std::span<const uint8_t> data, uint32_t seed = 0);

// SHA-256 digest of a byte string.
std::array<uint8_t, 32> sha256(std::span<const uint8_t> data);

// First 8 bytes of sha256(data), read little-endian.
uint64_t digest64(std::span<const uint8_t> data);

// SplitMix64 step; used to derive independent sub-seeds from one master seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Seeded RNG stream used everywhere randomness is needed.  Wraps
// std::mt19937_64 so the draw order is explicit at each call site.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
  }
  uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Writes `bytes` to `path` atomically: temp file in the same directory,
// then rename.  No partial file remains on failure.
void atomic_write_file(const std::string& path, std::span<const uint8_t> bytes);
void atomic_write_file(const std::string& path, const std::string& text);

std::vector<uint8_t> read_file(const std::string& path);

// Thread cap from HELIOPRESS_THREADS (>=1); defaults to hardware concurrency.
int max_threads();

// Runs fn(i) for i in [0, n) on up to max_threads() workers.  Results must
// not depend on execution order; callers that aggregate do so by index.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Minimal calendar timestamp for dataset records.
struct Timestamp {
  int year = 0, month = 0, day = 0, hour = 0, minute = 0;

  bool valid() const {
    return year >= 1900 && month >= 1 && month <= 12 && day >= 1 &&
           day <= 31 && hour >= 0 && hour < 24 && minute >= 0 && minute < 60;
  }
  // Minutes since year 0 on an idealized 31-day-month calendar; only used
  // for ordering, never for date arithmetic.
  int64_t order_key() const {
    return ((((int64_t(year) * 12 + month - 1) * 31 + day - 1) * 24 + hour) *
            60) + minute;
  }
  auto operator<=>(const Timestamp&) const = default;
};

// Parses "YYYYMMDD_HHMM", "YYYY-MM-DDTHH:MM" or "YYYY-MM-DD HH:MM".
// Returns false on malformed input.
bool parse_timestamp(const std::string& text, Timestamp* out);

// Extracts the timestamp from an AIA_<wavelength>_<YYYYMMDD>_<HHMM>.<ext>
// file name (directories ignored).  Returns false if the pattern does not
// match.
bool parse_dataset_filename(const std::string& path, Timestamp* out);

std::string format_timestamp_compact(const Timestamp& t);  // YYYYMMDD_HHMM

}  // namespace hp

#endif  // HELIOPRESS_UTIL_HPP_
