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

#include "heliopress/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "heliopress/util.hpp"

namespace hp {

double mse255(const Tensor& x, const Tensor& xp) {
  check_shape(x.defined() && xp.defined() && x.shape() == xp.shape(),
              "mse255: shape mismatch");
  const double* a = x.value().data();
  const double* b = xp.value().data();
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return 65025.0 * acc / double(x.numel());
}

double psnr(const Tensor& x, const Tensor& xp) {
  const double m = mse255(x, xp);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(65025.0 / m);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01, kSsimK2 = 0.03;  // dynamic range L = 1
constexpr std::array<double, 5> kMsssimWeights = {0.0448, 0.2856, 0.3001,
                                                  0.2363, 0.1333};

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w;
  const int half = kSsimWindow / 2;
  double s = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = double(i - half);
    w[size_t(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    s += w[size_t(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

struct Plane {
  int64_t h = 0, w = 0;
  std::vector<double> v;
};

// Separable valid-region Gaussian filter.
Plane blur(const Plane& p, const std::array<double, kSsimWindow>& win) {
  Plane tmp;  // horizontal pass
  tmp.h = p.h;
  tmp.w = p.w - kSsimWindow + 1;
  tmp.v.resize(size_t(tmp.h * tmp.w));
  for (int64_t y = 0; y < p.h; ++y) {
    for (int64_t x = 0; x < tmp.w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        acc += win[size_t(k)] * p.v[size_t(y * p.w + x + k)];
      tmp.v[size_t(y * tmp.w + x)] = acc;
    }
  }
  Plane out;
  out.h = p.h - kSsimWindow + 1;
  out.w = tmp.w;
  out.v.resize(size_t(out.h * out.w));
  for (int64_t y = 0; y < out.h; ++y) {
    for (int64_t x = 0; x < out.w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        acc += win[size_t(k)] * tmp.v[size_t((y + k) * tmp.w + x)];
      out.v[size_t(y * out.w + x)] = acc;
    }
  }
  return out;
}

Plane downsample2(const Plane& p) {
  Plane out;
  out.h = p.h / 2;
  out.w = p.w / 2;
  out.v.resize(size_t(out.h * out.w));
  for (int64_t y = 0; y < out.h; ++y) {
    for (int64_t x = 0; x < out.w; ++x) {
      out.v[size_t(y * out.w + x)] =
          0.25 * (p.v[size_t(2 * y * p.w + 2 * x)] +
                  p.v[size_t(2 * y * p.w + 2 * x + 1)] +
                  p.v[size_t((2 * y + 1) * p.w + 2 * x)] +
                  p.v[size_t((2 * y + 1) * p.w + 2 * x + 1)]);
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

// Mean luminance and contrast-structure terms at one scale.
void ssim_scale(const Plane& x, const Plane& y,
                const std::array<double, kSsimWindow>& win, double* l_out,
                double* cs_out) {
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  Plane mx = blur(x, win), my = blur(y, win);
  Plane mxx = blur(product(x, x), win);
  Plane myy = blur(product(y, y), win);
  Plane mxy = blur(product(x, y), win);
  double l_acc = 0.0, cs_acc = 0.0;
  for (size_t i = 0; i < mx.v.size(); ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = mxx.v[i] - ux * ux;
    const double vy = myy.v[i] - uy * uy;
    const double vxy = mxy.v[i] - ux * uy;
    l_acc += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
    cs_acc += (2.0 * vxy + c2) / (vx + vy + c2);
  }
  *l_out = l_acc / double(mx.v.size());
  *cs_out = cs_acc / double(mx.v.size());
}

double msssim_plane(Plane x, Plane y, bool allow_reduced) {
  int scales = 0;
  int64_t side = std::min(x.h, x.w);
  while (scales < 5 && (side >> scales) >= kSsimWindow) ++scales;
  if (scales == 0) throw ShapeError("ms_ssim: image smaller than the window");
  if (scales < 5 && !allow_reduced) {
    throw ShapeError(
        "ms_ssim: extents support fewer than 5 scales; pass the "
        "reduced-scale flag");
  }
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsssimWeights[size_t(s)];

  const auto win = gaussian_window();
  double m = 1.0;
  for (int s = 0; s < scales; ++s) {
    double l = 0.0, cs = 0.0;
    ssim_scale(x, y, win, &l, &cs);
    const double w = kMsssimWeights[size_t(s)] / weight_sum;
    const double base = (s == scales - 1) ? std::max(l * cs, 0.0)
                                          : std::max(cs, 0.0);
    m *= std::pow(base, w);
    if (s + 1 < scales) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return m;
}

}  // namespace

double ms_ssim(const Tensor& x, const Tensor& xp, bool allow_reduced_scales) {
  check_shape(x.defined() && xp.defined() && x.shape() == xp.shape() &&
                  x.rank() == 4,
              "ms_ssim: expected matching [N,C,H,W] tensors");
  const int64_t planes = x.dim(0) * x.dim(1);
  const int64_t H = x.dim(2), W = x.dim(3);
  double acc = 0.0;
  for (int64_t p = 0; p < planes; ++p) {
    Plane a{H, W,
            std::vector<double>(x.value().begin() + p * H * W,
                                x.value().begin() + (p + 1) * H * W)};
    Plane b{H, W,
            std::vector<double>(xp.value().begin() + p * H * W,
                                xp.value().begin() + (p + 1) * H * W)};
    acc += msssim_plane(std::move(a), std::move(b), allow_reduced_scales);
  }
  return acc / double(planes);
}

double msssim_db(double m) {
  if (m >= 1.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(1.0 - m);
}

namespace {

constexpr uint64_t kPercSeed = 0x48454C494F500137ull;

struct PercExtractor {
  std::array<Tensor, 3> kernels;  // 1->8, 8->8, 8->8, all 3x3 stride 2
  PercExtractor() {
    Rng rng(kPercSeed);
    const std::array<std::pair<int64_t, int64_t>, 3> dims = {
        std::pair<int64_t, int64_t>{8, 1}, {8, 8}, {8, 8}};
    for (size_t s = 0; s < 3; ++s) {
      const auto [co, ci] = dims[s];
      std::vector<double> data(size_t(co * ci * 9));
      const double scale = 1.0 / std::sqrt(double(ci * 9));
      for (double& v : data) v = rng.normal(0.0, scale);
      kernels[s] = Tensor::from_vector({co, ci, 3, 3}, std::move(data));
    }
  }
};

const PercExtractor& perc_extractor() {
  static PercExtractor e;
  return e;
}

Tensor unit_normalize(const Tensor& f) {
  const int64_t C = f.dim(1);
  Tensor sum_sq = mul_scalar(channel_reduce(square(f), PoolKind::kAvg),
                             double(C));
  Tensor nrm = sqrt(add_scalar(sum_sq, 1e-12));
  return div(f, tile_channels(nrm, C));
}

}  // namespace

Tensor perc_distance(const Tensor& x, const Tensor& xp) {
  check_shape(x.defined() && xp.defined() && x.shape() == xp.shape() &&
                  x.rank() == 4 && x.dim(1) == 1,
              "perc_distance: expected matching [N,1,H,W] tensors");
  const PercExtractor& e = perc_extractor();
  Tensor fa = x, fb = xp;
  Tensor total;
  for (size_t s = 0; s < 3; ++s) {
    fa = softplus(conv2d(fa, e.kernels[s], Tensor(), 2, 1));
    fb = softplus(conv2d(fb, e.kernels[s], Tensor(), 2, 1));
    Tensor diff = sub(unit_normalize(fa), unit_normalize(fb));
    const double denom = double(fa.dim(0) * fa.dim(2) * fa.dim(3));
    Tensor d = mul_scalar(sum(square(diff)), 1.0 / denom);
    total = total.defined() ? add(total, d) : d;
  }
  return mul_scalar(total, 1.0 / 3.0);
}

DistortionParts distortion_loss(const Tensor& x, const Tensor& xp,
                                const Tensor& disc_out, double lambda_recon,
                                double lambda_perc, double lambda_adv) {
  check(lambda_recon >= 0 && lambda_perc >= 0 && lambda_adv >= 0,
        "distortion_loss: weights must be non-negative");
  DistortionParts parts;
  parts.mse = mul_scalar(mean(square(sub(x, xp))), 65025.0);
  parts.total = mul_scalar(parts.mse, lambda_recon);
  if (lambda_perc != 0.0) {
    parts.perc = perc_distance(x, xp);
    parts.total = add(parts.total, mul_scalar(parts.perc, lambda_perc));
  }
  if (lambda_adv != 0.0) {
    check(disc_out.defined(),
          "distortion_loss: adversarial weight set but no discriminator "
          "output");
    parts.adv = neg(mean(log(disc_out)));
    parts.total = add(parts.total, mul_scalar(parts.adv, lambda_adv));
  }
  return parts;
}

Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake) {
  check(d_real.defined() && d_fake.defined(),
        "discriminator_loss: missing inputs");
  Tensor real_term = neg(mean(log(d_real)));
  Tensor fake_term = neg(mean(log(sub(Tensor::scalar(1.0), d_fake))));
  return add(real_term, fake_term);
}

Tensor rd_objective(const Tensor& rate_bpp, const Tensor& distortion,
                    double lambda) {
  check(lambda >= 0, "rd_objective: lambda must be non-negative");
  return add(rate_bpp, mul_scalar(distortion, lambda));
}

double rd_objective(double rate_bpp, double distortion, double lambda) {
  check(lambda >= 0, "rd_objective: lambda must be non-negative");
  return rate_bpp + lambda * distortion;
}

}  // namespace hp
