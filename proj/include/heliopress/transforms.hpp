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

#ifndef HELIOPRESS_TRANSFORMS_HPP_
#define HELIOPRESS_TRANSFORMS_HPP_

#include <array>
#include <string>
#include <vector>

#include "heliopress/attention.hpp"
#include "heliopress/ops.hpp"
#include "heliopress/tensor.hpp"

namespace hp {

// Network geometry.  Every parameter shape is a function of this struct
// alone.  The encoder decimates by 2^4 = 16; the hyper path adds another
// factor of 4 for a total of 64.
struct ArchConfig {
  int n_channels = 8;         // N: encoder/decoder feature channels
  int latent_channels = 12;   // M: latent code channels
  int hyper_channels = 6;
  int ctx_channels = 16;      // hyper-synthesis context features
  int downscale_factor = 16;  // fixed: four stride-2 stages
  int window = 4;             // attention window size w
  int n_slices = 4;           // S: channel slices for the entropy model
  int enc_kernel = 5;         // odd, stride-2 halving
  int dec_kernel = 4;         // even, stride-2 exact doubling
  int hyper_kernel_a = 3;
  int hyper_kernel_b = 5;
  int disc_kernel = 5;
  int spatial_attn_kernel = 7;
  int wcbam_reduction = 2;

  // Desk-scale defaults train in minutes while exercising the full x16/x64
  // geometry.
  static ArchConfig desk() { return ArchConfig(); }

  // Forward-capable instantiation at the published scale (N=192, M=320).
  static ArchConfig paper() {
    ArchConfig a;
    a.n_channels = 192;
    a.latent_channels = 320;
    a.hyper_channels = 192;
    a.ctx_channels = 192;
    return a;
  }

  int slice_channels() const { return latent_channels / n_slices; }
  int disc_cond_channels() const { return std::max(n_channels / 2, 2); }
  void validate() const;
};

struct ConvLayer {
  Tensor kernel, bias;
};

// Efficient GDN: beta stays >= 1e-6 and gamma >= 0 (projected after every
// optimizer step).  gamma is stored as a CxC 1x1 convolution kernel.
struct GdnParams {
  Tensor beta;   // [C]
  Tensor gamma;  // [C, C, 1, 1]
};

inline constexpr double kGdnBetaMin = 1e-6;

struct AnalysisParams {
  std::array<ConvLayer, 4> stage;
  std::array<GdnParams, 3> gdn;
  std::array<ResidualBlockParams, 4> rb;
  AttentionBlockParams attn_a, attn_b;  // after stages 2 and 4
};

struct SynthesisParams {
  std::array<ConvLayer, 4> stage;  // transposed convolutions
  std::array<GdnParams, 3> igdn;
  std::array<ResidualBlockParams, 4> rb;
  AttentionBlockParams attn_a, attn_b;  // after stages 1 and 3
};

struct HyperAnalysisParams {
  ConvLayer c1, c2;
};

struct HyperSynthesisParams {
  ConvLayer d1, d2;
};

// Three-layer 1x1/3x3/1x1 stack mapping (ctx + earlier slices) to the
// (mu, raw sigma) planes of one slice.
struct SliceNetParams {
  ConvLayer c1, c2, c3;
};

// Learned per-channel location/scale of the hyper-latent prior.
struct ZPriorParams {
  Tensor loc, scale_raw;  // [hyper_channels] each
};

struct DiscriminatorParams {
  ConvLayer cond_proj;  // 1x1 projection of the latent condition
  std::array<ConvLayer, 4> stage;
};

enum class ParamConstraint { kNone, kNonNegative, kBetaFloor };

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamConstraint constraint = ParamConstraint::kNone;
};

// All learned parameters plus the architecture they belong to.  Parameters
// are registered in a fixed order so that initialization, serialization and
// the digest are deterministic functions of (arch, seed, values).
class CodecModel {
 public:
  CodecModel(const ArchConfig& arch, uint64_t seed);
  CodecModel(const CodecModel&) = delete;
  CodecModel& operator=(const CodecModel&) = delete;
  CodecModel(CodecModel&&) = default;
  CodecModel& operator=(CodecModel&&) = default;

  const ArchConfig& arch() const { return arch_; }

  std::span<const ParamEntry> params() const { return params_; }
  std::span<ParamEntry> params_mut() { return params_; }

  // Everything the generator objective optimizes (transforms + entropy);
  // the discriminator group is updated by its own auxiliary loss.
  std::vector<ParamEntry*> generator_params();
  std::vector<ParamEntry*> discriminator_params();

  void set_requires_grad(bool b);
  void zero_grads();

  // First 8 bytes of SHA-256 over the serialized parameter table.
  uint64_t digest() const;

  // "SDW" weight file: magic SDW1, little-endian 32-bit arch block,
  // parameter table, trailing CRC32.
  std::vector<uint8_t> serialize() const;
  void save(const std::string& path) const;
  static CodecModel deserialize(std::span<const uint8_t> bytes);
  static CodecModel load(const std::string& path);

  const AnalysisParams& ga() const { return ga_; }
  const SynthesisParams& gs() const { return gs_; }
  const HyperAnalysisParams& ha() const { return ha_; }
  const HyperSynthesisParams& hs() const { return hs_; }
  const std::vector<SliceNetParams>& slices() const { return slices_; }
  const ZPriorParams& zprior() const { return zprior_; }
  const DiscriminatorParams& disc() const { return disc_; }

 private:
  friend class ModelBuilder;
  ArchConfig arch_;
  std::vector<ParamEntry> params_;
  AnalysisParams ga_;
  SynthesisParams gs_;
  HyperAnalysisParams ha_;
  HyperSynthesisParams hs_;
  std::vector<SliceNetParams> slices_;
  ZPriorParams zprior_;
  DiscriminatorParams disc_;
};

// y_c = x_c / (beta_c + sum_k gamma_ck |x_k|), per spatial location.
Tensor gdn_forward(const Tensor& x, const GdnParams& p);
// y_c = x_c * (beta_c + sum_k gamma_ck |x_k|): the algebraic mirror with
// its own parameters.
Tensor igdn_forward(const Tensor& x, const GdnParams& p);

// [N,1,H,W] -> [N,M,H/16,W/16]; H and W must be divisible by 16.
Tensor analysis_transform(const Tensor& x, const CodecModel& m);

// [N,M,h,w] -> [N,1,16h,16w], clamped to [0,1].
Tensor synthesis_transform(const Tensor& y_hat, const CodecModel& m);

// [N,M,h,w] -> [N,hyper,h/4,w/4]; latent extents must be divisible by 4.
Tensor hyper_analysis(const Tensor& y, const CodecModel& m);

// [N,hyper,h,w] -> [N,ctx,4h,4w], aligned with the latent grid.
Tensor hyper_synthesis(const Tensor& z_hat, const CodecModel& m);

// Conditional patch discriminator: the latent condition is projected by a
// 1x1 conv, nearest-upsampled x16 and concatenated with the image; four
// stride-2 convs with leaky ReLU, final sigmoid.  Output [N,1,H/16,W/16].
Tensor discriminator_forward(const Tensor& x_in, const Tensor& y,
                             const CodecModel& m);

}  // namespace hp

#endif  // HELIOPRESS_TRANSFORMS_HPP_
