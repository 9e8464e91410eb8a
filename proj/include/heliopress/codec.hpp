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

#ifndef HELIOPRESS_CODEC_HPP_
#define HELIOPRESS_CODEC_HPP_

#include "heliopress/entropy.hpp"
#include "heliopress/rans.hpp"
#include "heliopress/transforms.hpp"

namespace hp {

// Compressed image: container header plus the two rANS payload sections.
// Wire layout ("SDC", all little-endian): magic SDOC, version u8 = 1,
// model digest u64, orig_width u32, orig_height u32, padded_width u32,
// padded_height u32, z_len u32, y_len u32, CRC32 u32 over the payload,
// then z_bytes, y_bytes.
struct Bitstream {
  uint64_t model_digest = 0;
  uint32_t orig_width = 0, orig_height = 0;
  uint32_t padded_width = 0, padded_height = 0;
  std::vector<uint8_t> z_bytes, y_bytes;

  size_t total_bytes() const {
    return kHeaderBytes + z_bytes.size() + y_bytes.size();
  }
  static constexpr size_t kHeaderBytes = 4 + 1 + 8 + 4 * 6;
};

std::vector<uint8_t> serialize_bitstream(const Bitstream& bs);
Bitstream parse_bitstream(std::span<const uint8_t> bytes);
void write_bitstream(const std::string& path, const Bitstream& bs);
Bitstream read_bitstream(const std::string& path);

// Edge-replication padding up to the next multiple along both spatial axes.
Tensor pad_to_multiple(const Tensor& img, int multiple);
Tensor crop_spatial(const Tensor& img, int64_t height, int64_t width);

// Full encoder pipeline: pads to x64, analyzes, rounds, and entropy-codes
// the hyper-latent under the learned prior and each latent slice under its
// conditional Gaussian.  Slice conditioning uses the rounded earlier
// slices, exactly as the decoder will reconstruct them.
Bitstream compress_image(const CodecModel& m, const Tensor& x);

// Inverse pipeline; rejects streams whose digest does not match the model
// and crops the reconstruction to the original extents.
Tensor decompress_image(const CodecModel& m, const Bitstream& bs);

// The quantized forward pass compress_image realizes, kept in memory: used
// for codec/forward parity checks and fast evaluation.  Returns the
// reconstruction at padded extents together with the latent planes.
struct EvalResult {
  Tensor recon;          // [1,1,Hp,Wp]
  LatentCode latents;
  double rate_bits = 0;  // integer-latent estimate (tail-absorbed)
};
EvalResult eval_forward(const CodecModel& m, const Tensor& padded);

}  // namespace hp

#endif  // HELIOPRESS_CODEC_HPP_
