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

#ifndef HELIOPRESS_DATA_HPP_
#define HELIOPRESS_DATA_HPP_

#include <string>
#include <utility>
#include <vector>

#include "heliopress/tensor.hpp"
#include "heliopress/util.hpp"

namespace hp {

// P5 PGM, 8- or 16-bit (16-bit samples big-endian per the format), values
// normalized by maxval into [0,1].  Returns [1,1,H,W].
Tensor read_pgm(const std::string& path);
Tensor parse_pgm(std::span<const uint8_t> bytes);

// Writes 16-bit P5 (maxval 65535), rounding and clamping [0,1] input.
void write_pgm(const std::string& path, const Tensor& img);
std::vector<uint8_t> serialize_pgm(const Tensor& img);

// Raw tensor interchange: magic SDT1, rank u8, extents u32 LE, f64 LE.
Tensor read_sdt(const std::string& path);
void write_sdt(const std::string& path, const Tensor& t);

// Dispatches on the file's magic bytes (P5 or SDT1); an SDT image must be
// rank 2 [H,W] or rank 4 [1,1,H,W].
Tensor read_image(const std::string& path);

// One dataset entry.  timestamp_text, when non-empty (manifest rows),
// overrides the filename-derived timestamp.
struct DatasetRecord {
  std::string path;
  std::string timestamp_text;
};

struct DatasetIndex {
  std::vector<std::pair<std::string, Timestamp>> records;  // timestamp-sorted
};

struct MonthSplit {
  DatasetIndex train;  // months 1-8
  DatasetIndex test;   // months 9-12
  std::vector<std::string> warnings;  // rejected records
};

// Partition by calendar month: January-August train, September-December
// test.  Records whose timestamp cannot be parsed are rejected into the
// warning list.  Output ordering is deterministic (timestamp, then path).
MonthSplit month_split(std::span<const DatasetRecord> records);

// All regular *.pgm files under dir (non-recursive), sorted by name.
std::vector<DatasetRecord> scan_dataset_dir(const std::string& dir);

// CSV manifest "path,timestamp" (no header required; a "path,..." header
// line is skipped).
std::vector<DatasetRecord> read_manifest_csv(const std::string& path);

// Deterministic limb-darkened solar disk with up to 5 Gaussian active
// regions, a low-frequency background, and intensity-scaled shot noise.
// Values lie in [0,1].  Images depend only on (seed, index, size).
Tensor synthetic_sun_image(uint64_t seed, int64_t index, int size);
std::vector<Tensor> synthetic_sun(uint64_t seed, int size, int count);

// Uniform random top-left crop.  crop == extent is the identity.
Tensor random_crop(const Tensor& image, int crop, Rng& rng);

}  // namespace hp

#endif  // HELIOPRESS_DATA_HPP_
