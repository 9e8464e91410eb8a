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

#include "heliopress/selftest.hpp"

#include <cmath>

#include "heliopress/codec.hpp"
#include "heliopress/data.hpp"
#include "heliopress/metrics.hpp"
#include "heliopress/rans.hpp"

namespace hp {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.value_mut()) v = rng.uniform(lo, hi);
  return t;
}

// Direct six-loop cross-correlation, independent of the im2col path.
Tensor conv_reference(const Tensor& x, const Tensor& k, int stride, int pad) {
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int64_t oh = (H + 2 * pad - kh) / stride + 1;
  const int64_t ow = (W + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({N, Co, oh, ow});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xw = 0; xw < ow; ++xw) {
          double acc = 0;
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t dy = 0; dy < kh; ++dy)
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t iy = y * stride - pad + dy;
                const int64_t ix = xw * stride - pad + dx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.value()[size_t(((n * Ci + ci) * H + iy) * W + ix)] *
                       k.value()[size_t(((co * Ci + ci) * kh + dy) * kw +
                                        dx)];
              }
          out.value_mut()[size_t(((n * Co + co) * oh + y) * ow + xw)] = acc;
        }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst,
                     std::abs(a.value()[size_t(i)] - b.value()[size_t(i)]));
  }
  return worst;
}

bool check_conv_oracle() {
  Rng rng(11);
  Tensor x = random_tensor({1, 3, 8, 8}, rng);
  Tensor k = random_tensor({4, 3, 3, 3}, rng);
  Tensor got = conv2d(x, k, Tensor(), 1, 1);
  Tensor want = conv_reference(x, k, 1, 1);
  return max_abs_diff(got, want) < 1e-12;
}

bool check_conv_adjoint() {
  Rng rng(12);
  Tensor a = random_tensor({1, 2, 8, 8}, rng);
  Tensor k = random_tensor({3, 2, 4, 4}, rng);
  Tensor ca = conv2d(a, k, Tensor(), 2, 1);
  Tensor b = random_tensor(Shape(ca.shape()), rng);
  Tensor tb = conv2d_transpose(b, k, Tensor(), 2, 1);
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < ca.numel(); ++i)
    lhs += ca.value()[size_t(i)] * b.value()[size_t(i)];
  for (int64_t i = 0; i < a.numel(); ++i)
    rhs += a.value()[size_t(i)] * tb.value()[size_t(i)];
  return std::abs(lhs - rhs) < 1e-10;
}

bool check_wnlam_brute_force() {
  Rng rng(13);
  const int C = 4, C2 = 2, w = 4;
  Tensor x = random_tensor({1, C, 8, 8}, rng);
  WnlamParams p;
  p.w_theta = random_tensor({C2, C, 1, 1}, rng);
  p.w_phi = random_tensor({C2, C, 1, 1}, rng);
  p.w_g = random_tensor({C2, C, 1, 1}, rng);
  p.w_z = random_tensor({C, C2, 1, 1}, rng);
  Tensor got = wnlam_forward(x, p, w);

  // Direct O(n^2) evaluation over each window.
  const int64_t H = 8, W = 8;
  auto embed = [&](const Tensor& kmat, int64_t c2, int64_t yy, int64_t xx,
                   std::vector<double>& out_vec) {
    out_vec.assign(size_t(c2), 0.0);
    for (int64_t o = 0; o < c2; ++o) {
      for (int64_t ci = 0; ci < C; ++ci) {
        out_vec[size_t(o)] += kmat.value()[size_t(o * C + ci)] *
                              x.value()[size_t((ci * H + yy) * W + xx)];
      }
    }
  };
  double worst = 0;
  for (int64_t ty = 0; ty < H / w; ++ty) {
    for (int64_t tx = 0; tx < W / w; ++tx) {
      std::vector<std::pair<int64_t, int64_t>> pos;
      for (int64_t dy = 0; dy < w; ++dy)
        for (int64_t dx = 0; dx < w; ++dx)
          pos.emplace_back(ty * w + dy, tx * w + dx);
      for (const auto& [iy, ix] : pos) {
        std::vector<double> th, ph, gk;
        embed(p.w_theta, C2, iy, ix, th);
        std::vector<double> weights;
        double denom = 0;
        for (const auto& [ky, kx] : pos) {
          embed(p.w_phi, C2, ky, kx, ph);
          double dot = 0;
          for (int64_t c = 0; c < C2; ++c) dot += th[size_t(c)] * ph[size_t(c)];
          weights.push_back(std::exp(dot));
          denom += weights.back();
        }
        std::vector<double> y(size_t(C2), 0.0);
        for (size_t kidx = 0; kidx < pos.size(); ++kidx) {
          embed(p.w_g, C2, pos[kidx].first, pos[kidx].second, gk);
          for (int64_t c = 0; c < C2; ++c)
            y[size_t(c)] += weights[kidx] / denom * gk[size_t(c)];
        }
        for (int64_t c = 0; c < C; ++c) {
          double z = x.value()[size_t((c * H + iy) * W + ix)];
          for (int64_t c2 = 0; c2 < C2; ++c2)
            z += p.w_z.value()[size_t(c * C2 + c2)] * y[size_t(c2)];
          worst = std::max(
              worst,
              std::abs(z - got.value()[size_t((c * H + iy) * W + ix)]));
        }
      }
    }
  }
  return worst < 1e-10;
}

bool check_gradients() {
  Rng rng(14);
  // GDN.
  {
    Tensor x = random_tensor({1, 3, 4, 4}, rng);
    GdnParams p;
    p.beta = Tensor::full({3}, 0.7);
    p.gamma = random_tensor({3, 3, 1, 1}, rng, 0.0, 0.3);
    auto f = [&](const Tensor& t) { return sum(gdn_forward(t, p)); };
    if (grad_check(f, x, 1e-4) >= 1e-4) return false;
  }
  // WNLAM + WCBAM through a residual attention block.
  {
    ArchConfig a;
    CodecModel m(a, 99);
    Tensor x = random_tensor({1, a.n_channels, 8, 8}, rng, 0.0, 1.0);
    auto f = [&](const Tensor& t) {
      return sum(residual_attention_block(t, m.ga().attn_a));
    };
    if (grad_check(f, x, 1e-4, 40, 7) >= 1e-4) return false;
  }
  // Likelihood-to-rate path w.r.t. mu.
  {
    Tensor k = quantize_round(random_tensor({1, 2, 3, 3}, rng, -3.0, 3.0));
    Tensor sigma = Tensor::full({1, 2, 3, 3}, 0.8);
    auto f = [&](const Tensor& mu) {
      GaussianParams gp{mu, sigma};
      std::array<Tensor, 1> lik = {gaussian_likelihood(k, gp, true)};
      return rate_bits(lik);
    };
    Tensor mu0 = random_tensor({1, 2, 3, 3}, rng, -0.5, 0.5);
    if (grad_check(f, mu0, 1e-4) >= 1e-4) return false;
  }
  return true;
}

bool check_coder_roundtrip() {
  Rng rng(15);
  for (int run = 0; run < 5; ++run) {
    const size_t n = 10000;
    std::vector<CdfTable> pool;
    for (int i = 0; i < 32; ++i) {
      pool.push_back(
          build_cdf(rng.uniform(-20.0, 20.0), rng.uniform(0.11, 8.0)));
    }
    std::vector<int> symbols(n);
    std::vector<CdfTable> cdfs(n);
    for (size_t i = 0; i < n; ++i) {
      const size_t pick = size_t(rng.uniform_int(0, 31));
      cdfs[i] = pool[pick];
      symbols[i] = int(rng.uniform_int(-24, 24));
    }
    auto bytes = rans_encode(symbols, cdfs);
    auto back = rans_decode(bytes, cdfs, n);
    if (back != symbols) return false;
  }
  return true;
}

bool check_codec_parity() {
  ArchConfig a;
  CodecModel m(a, 3);
  Tensor img = synthetic_sun_image(5, 0, 64);
  Bitstream bs = compress_image(m, img);
  Tensor x1 = decompress_image(m, bs);
  EvalResult er = eval_forward(m, img);
  if (max_abs_diff(x1, er.recon) != 0.0) return false;
  Bitstream bs2 = compress_image(m, img);
  return serialize_bitstream(bs) == serialize_bitstream(bs2);
}

bool check_fault_detected() {
  // An op whose backward is deliberately wrong (3x instead of 2x); the
  // checker must flag it.
  auto broken_square = [](const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i)
      out.value_mut()[size_t(i)] =
          a.value()[size_t(i)] * a.value()[size_t(i)];
    if (grad_enabled_for({&a})) {
      out.set_requires_grad(true);
      auto ai = a.impl_ptr(), oi = out.impl_ptr();
      Tape::active()->record([=]() {
        if (oi->grad.empty()) return;
        if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
        for (size_t i = 0; i < ai->value.size(); ++i)
          ai->grad[i] += 3.0 * ai->value[i] * oi->grad[i];
      });
    }
    return out;
  };
  Rng rng(16);
  Tensor x = random_tensor({8}, rng, 0.5, 2.0);
  auto f = [&](const Tensor& t) { return sum(broken_square(t)); };
  return grad_check(f, x, 1e-4) > 1e-4;
}

}  // namespace

SelftestResult selftest(bool inject_gradient_fault, std::ostream* out) {
  SelftestResult r;
  auto run = [&](const std::string& name, bool (*fn)()) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception&) {
      ok = false;
    }
    r.checks.emplace_back(name, ok);
    if (out != nullptr) {
      (*out) << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
    }
  };
  run("conv2d vs direct-loop oracle", check_conv_oracle);
  run("conv2d_transpose adjoint identity", check_conv_adjoint);
  run("wnlam vs O(n^2) brute force", check_wnlam_brute_force);
  run("gradient checks (gdn, attention, rate)", check_gradients);
  run("rans encode/decode round trip", check_coder_roundtrip);
  run("codec parity and determinism", check_codec_parity);
  if (inject_gradient_fault) {
    run("injected gradient fault detected", check_fault_detected);
  }
  return r;
}

}  // namespace hp
