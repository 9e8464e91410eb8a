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

#ifndef HELIOPRESS_METRICS_HPP_
#define HELIOPRESS_METRICS_HPP_

#include "heliopress/ops.hpp"
#include "heliopress/tensor.hpp"

namespace hp {

// Mean squared error between [0,1] images on the 255 intensity scale:
// 255^2 * mean((x - x')^2).  This is the scale PSNR and the distortion
// objective share.
double mse255(const Tensor& x, const Tensor& xp);

// 10*log10(255^2 / MSE255); identical images return +infinity.
double psnr(const Tensor& x, const Tensor& xp);

// Multi-scale SSIM over up to 5 scales with an 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, standard scale weights.  Inputs smaller
// than 176 on a side need allow_reduced_scales, which drops unusable
// scales and renormalizes the weights.
double ms_ssim(const Tensor& x, const Tensor& xp,
               bool allow_reduced_scales = false);

// -10*log10(1 - m); m == 1 returns +infinity.
double msssim_db(double m);

// Perceptual distance: L2 between per-position unit-normalized feature
// maps of a fixed, seed-deterministic 3-stage random convolutional
// extractor, averaged over stages.  Symmetric, zero for identical inputs,
// differentiable (the extractor weights are constants).
Tensor perc_distance(const Tensor& x, const Tensor& xp);

// D = lambda_recon*MSE255 + lambda_perc*perc - lambda_adv*E[log disc_out]
// (natural log, non-saturating generator term).  disc_out may be undefined
// when lambda_adv == 0; perc is skipped when lambda_perc == 0.
struct DistortionParts {
  Tensor total;
  Tensor mse;   // 255^2-scaled
  Tensor perc;  // defined iff used
  Tensor adv;   // -mean(log disc_out); defined iff used
};
DistortionParts distortion_loss(const Tensor& x, const Tensor& xp,
                                const Tensor& disc_out, double lambda_recon,
                                double lambda_perc, double lambda_adv);

// E[-log D(x,y)] + E[-log(1 - D(x',y))], means over patch maps and batch.
Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake);

// R + lambda * D.
Tensor rd_objective(const Tensor& rate_bpp, const Tensor& distortion,
                    double lambda);
double rd_objective(double rate_bpp, double distortion, double lambda);

// Scalar summary of one training step, recomposable to 1e-12.
struct LossBreakdown {
  double rate_bits = 0;
  double rate_bpp = 0;
  double mse = 0;   // 255^2-scaled
  double perc = 0;
  double adv_g = 0;
  double d_total = 0;
  double rd_total = 0;
  double disc_loss = 0;
};

}  // namespace hp

#endif  // HELIOPRESS_METRICS_HPP_
