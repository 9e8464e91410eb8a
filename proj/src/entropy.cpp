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

#include "heliopress/entropy.hpp"

#include <cmath>
#include <limits>

namespace hp {

Tensor quantize_round(const Tensor& v) {
  Tensor out = Tensor::zeros(v.shape());
  const double* pv = v.value().data();
  double* po = out.value_mut().data();
  for (int64_t i = 0; i < v.numel(); ++i) {
    if (!std::isfinite(pv[i]))
      throw ContractError("quantize_round: non-finite input");
    double r = std::round(pv[i]);  // ties away from zero
    po[i] = std::min(std::max(r, double(kSymbolMin)), double(kSymbolMax));
  }
  return out;
}

Tensor quantize_noise(const Tensor& v, Rng& rng) {
  Tensor noise = Tensor::zeros(v.shape());
  for (double& n : noise.value_mut()) n = rng.uniform(-0.5, 0.5);
  return add(v, noise);
}

namespace {

constexpr double kInvSqrt2 = 0.7071067811865476;

// Phi(t) = (1 + erf(t/sqrt(2))) / 2, composed from primitives so gradients
// flow into t.
Tensor std_normal_cdf(const Tensor& t) {
  return mul_scalar(add_scalar(erf(mul_scalar(t, kInvSqrt2)), 1.0), 0.5);
}

}  // namespace

Tensor gaussian_likelihood(const Tensor& k, const GaussianParams& gp,
                           bool absorb_tails) {
  check(gp.mu.defined() && gp.sigma.defined(),
        "gaussian_likelihood: missing parameters");
  Tensor d = sub(k, gp.mu);
  Tensor hi = std_normal_cdf(div(add_scalar(d, 0.5), gp.sigma));
  Tensor lo = std_normal_cdf(div(add_scalar(d, -0.5), gp.sigma));
  Tensor p;
  if (absorb_tails) {
    // Edge bins take the whole tail: upper bound -> 1 at kSymbolMax, lower
    // bound -> 0 at kSymbolMin.  The masks depend only on k and carry no
    // gradient.
    Tensor not_max = Tensor::zeros(k.shape());
    Tensor is_max = Tensor::zeros(k.shape());
    Tensor not_min = Tensor::zeros(k.shape());
    const double* pk = k.value().data();
    for (int64_t i = 0; i < k.numel(); ++i) {
      const bool mx = pk[i] >= double(kSymbolMax);
      const bool mn = pk[i] <= double(kSymbolMin);
      not_max.value_mut()[size_t(i)] = mx ? 0.0 : 1.0;
      is_max.value_mut()[size_t(i)] = mx ? 1.0 : 0.0;
      not_min.value_mut()[size_t(i)] = mn ? 0.0 : 1.0;
    }
    p = sub(add(mul(hi, not_max), is_max), mul(lo, not_min));
  } else {
    p = sub(hi, lo);
  }
  return clamp(p, kLikelihoodFloor, 1.0);
}

GaussianParams slice_conditioning(const Tensor& ctx,
                                  std::span<const Tensor> decoded_slices,
                                  const CodecModel& m, int slice_index) {
  const ArchConfig& a = m.arch();
  check(slice_index >= 0 && slice_index < a.n_slices,
        "slice_conditioning: slice index out of range");
  check(int(decoded_slices.size()) == slice_index,
        "slice_conditioning: expected exactly the earlier slices, in order");
  check_shape(ctx.defined() && ctx.rank() == 4 &&
                  ctx.dim(1) == a.ctx_channels,
              "slice_conditioning: bad context shape");
  const int64_t sc = a.slice_channels();
  for (const Tensor& s : decoded_slices) {
    check_shape(s.rank() == 4 && s.dim(1) == sc && s.dim(2) == ctx.dim(2) &&
                    s.dim(3) == ctx.dim(3),
                "slice_conditioning: slice does not match context grid");
  }

  std::vector<Tensor> parts;
  parts.reserve(decoded_slices.size() + 1);
  parts.push_back(ctx);
  for (const Tensor& s : decoded_slices) parts.push_back(s);
  Tensor in = parts.size() == 1 ? ctx : concat_channels(parts);

  const SliceNetParams& net = m.slices()[size_t(slice_index)];
  Tensor t = relu(conv2d(in, net.c1.kernel, net.c1.bias, 1, 0));
  t = relu(conv2d(t, net.c2.kernel, net.c2.bias, 1, 1));
  t = conv2d(t, net.c3.kernel, net.c3.bias, 1, 0);

  GaussianParams gp;
  gp.mu = slice_channels(t, 0, sc);
  gp.sigma = clamp(softplus(slice_channels(t, sc, 2 * sc)), kSigmaMin,
                   std::numeric_limits<double>::infinity());
  return gp;
}

GaussianParams z_prior_params(const CodecModel& m) {
  GaussianParams gp;
  gp.mu = m.zprior().loc;
  gp.sigma = clamp(softplus(m.zprior().scale_raw), kSigmaMin,
                   std::numeric_limits<double>::infinity());
  return gp;
}

Tensor z_likelihood(const Tensor& z_vals, const CodecModel& m,
                    bool absorb_tails) {
  check_shape(z_vals.defined() && z_vals.rank() == 4 &&
                  z_vals.dim(1) == m.arch().hyper_channels,
              "z_likelihood: hyper channel mismatch");
  return gaussian_likelihood(z_vals, z_prior_params(m), absorb_tails);
}

Tensor rate_bits(std::span<const Tensor> likelihoods) {
  check(!likelihoods.empty(), "rate_bits: no likelihoods");
  Tensor total;
  for (const Tensor& lik : likelihoods) {
    for (double p : lik.value()) {
      check(p > 0.0 && p <= 1.0, "rate_bits: probability outside (0,1]");
    }
    Tensor s = sum(log(lik));
    total = total.defined() ? add(total, s) : s;
  }
  constexpr double kInvLn2 = 1.4426950408889634;
  return mul_scalar(total, -kInvLn2);
}

double bpp(double rate_bits, int64_t h, int64_t w) {
  check(h > 0 && w > 0, "bpp: empty image");
  return rate_bits / double(h * w);
}

std::vector<Tensor> split_slices(const Tensor& y, const ArchConfig& arch) {
  check_shape(y.defined() && y.rank() == 4 &&
                  y.dim(1) == arch.latent_channels,
              "split_slices: latent channel mismatch");
  const int64_t sc = arch.slice_channels();
  std::vector<Tensor> out;
  out.reserve(size_t(arch.n_slices));
  for (int i = 0; i < arch.n_slices; ++i) {
    out.push_back(slice_channels(y, i * sc, (i + 1) * sc));
  }
  return out;
}

}  // namespace hp
