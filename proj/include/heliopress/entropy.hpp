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

#ifndef HELIOPRESS_ENTROPY_HPP_
#define HELIOPRESS_ENTROPY_HPP_

#include "heliopress/transforms.hpp"
#include "heliopress/util.hpp"

namespace hp {

// Coder-stability constants: scales are clamped from below, likelihoods are
// floored for log safety, and the alphabet is bounded so integer CDF tables
// exist for every element.
inline constexpr double kSigmaMin = 0.11;
inline constexpr int kSymbolMin = -128;
inline constexpr int kSymbolMax = 127;
inline constexpr double kLikelihoodFloor = 5.421010862427522e-20;  // 2^-64

// Continuous and quantized latent planes of one image.
struct LatentCode {
  Tensor y, y_hat;
  Tensor z, z_hat;
};

// Predicted conditional Gaussian parameters; sigma is already clamped to
// >= kSigmaMin.  mu/sigma are either shaped like the coded tensor or are
// per-channel [C] vectors (the z prior).
struct GaussianParams {
  Tensor mu, sigma;
};

// Nearest integer with .5 ties away from zero, clamped to the alphabet.
// Evaluation path only: the result never carries gradients.
Tensor quantize_round(const Tensor& v);

// v + u with u ~ U(-0.5, 0.5) i.i.d. per element; the noise is constant
// w.r.t. v, so gradients pass through unchanged.  Training path.
Tensor quantize_noise(const Tensor& v, Rng& rng);

// P(k) = Phi((k+0.5-mu)/sigma) - Phi((k-0.5-mu)/sigma), floored at 2^-64.
// With absorb_tails, the edge symbols -128/127 absorb the full tails so the
// alphabet sums to 1; that variant feeds the coder and integer-rate
// estimates.  Differentiable in mu, sigma and (for the noise-relaxed
// training path) in k.
Tensor gaussian_likelihood(const Tensor& k, const GaussianParams& gp,
                           bool absorb_tails = true);

// (mu_i, sigma_i) for slice i from the hyper context plus slices 0..i-1,
// which must be the already-decoded (rounded, or noise-relaxed in training)
// planes, in order.
GaussianParams slice_conditioning(const Tensor& ctx,
                                  std::span<const Tensor> decoded_slices,
                                  const CodecModel& m, int slice_index);

// Per-channel learned prior over the hyper-latent.
GaussianParams z_prior_params(const CodecModel& m);
Tensor z_likelihood(const Tensor& z_vals, const CodecModel& m,
                    bool absorb_tails = true);

// R = sum over all likelihood tensors of -log2 p, in bits.
Tensor rate_bits(std::span<const Tensor> likelihoods);
double bpp(double rate_bits, int64_t h, int64_t w);

// Splits [N,M,h,w] into n_slices equal channel groups.
std::vector<Tensor> split_slices(const Tensor& y, const ArchConfig& arch);

}  // namespace hp

#endif  // HELIOPRESS_ENTROPY_HPP_
