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

#include "heliopress/attention.hpp"

namespace hp {

namespace {

void check_window(const Tensor& x, int w, const char* who) {
  check_shape(x.defined() && x.rank() == 4,
              std::string(who) + ": expected [N,C,H,W]");
  check(w >= 1, std::string(who) + ": window must be >= 1");
  check_shape(x.dim(2) % w == 0 && x.dim(3) % w == 0,
              std::string(who) + ": window does not divide spatial extents");
}

}  // namespace

Tensor window_partition(const Tensor& x, int w) {
  check_window(x, w, "window_partition");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t TH = H / w, TW = W / w, nW = TH * TW;
  Tensor out = Tensor::zeros({N * nW, C, w, w});
  const double* px = x.value().data();
  double* po = out.value_mut().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t t = 0; t < nW; ++t) {
      const int64_t tr = t / TW, tc = t % TW;
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t dy = 0; dy < w; ++dy) {
          const double* srow = px + ((n * C + c) * H + tr * w + dy) * W +
                               tc * w;
          double* drow = po + (((n * nW + t) * C + c) * w + dy) * w;
          std::copy(srow, srow + w, drow);
        }
      }
    }
  }
  if (grad_enabled_for({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      const double* g = oi->grad.data();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t t = 0; t < nW; ++t) {
          const int64_t tr = t / TW, tc = t % TW;
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t dy = 0; dy < w; ++dy) {
              double* drow = xi->grad.data() +
                             ((n * C + c) * H + tr * w + dy) * W + tc * w;
              const double* grow =
                  g + (((n * nW + t) * C + c) * w + dy) * w;
              for (int64_t dx = 0; dx < w; ++dx) drow[dx] += grow[dx];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor window_merge(const Tensor& x, int w, int64_t H, int64_t W) {
  check_shape(x.defined() && x.rank() == 4 && x.dim(2) == w && x.dim(3) == w,
              "window_merge: expected [N*nW,C,w,w]");
  check_shape(H % w == 0 && W % w == 0,
              "window_merge: target extents not divisible by window");
  const int64_t TH = H / w, TW = W / w, nW = TH * TW;
  check_shape(x.dim(0) % nW == 0, "window_merge: batch not a window multiple");
  const int64_t N = x.dim(0) / nW, C = x.dim(1);
  Tensor out = Tensor::zeros({N, C, H, W});
  const double* px = x.value().data();
  double* po = out.value_mut().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t t = 0; t < nW; ++t) {
      const int64_t tr = t / TW, tc = t % TW;
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t dy = 0; dy < w; ++dy) {
          const double* srow =
              px + (((n * nW + t) * C + c) * w + dy) * w;
          double* drow =
              po + ((n * C + c) * H + tr * w + dy) * W + tc * w;
          std::copy(srow, srow + w, drow);
        }
      }
    }
  }
  if (grad_enabled_for({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      const double* g = oi->grad.data();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t t = 0; t < nW; ++t) {
          const int64_t tr = t / TW, tc = t % TW;
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t dy = 0; dy < w; ++dy) {
              double* drow = xi->grad.data() +
                             (((n * nW + t) * C + c) * w + dy) * w;
              const double* grow =
                  g + ((n * C + c) * H + tr * w + dy) * W + tc * w;
              for (int64_t dx = 0; dx < w; ++dx) drow[dx] += grow[dx];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor wnlam_forward(const Tensor& x, const WnlamParams& p, int w) {
  check_window(x, w, "wnlam_forward");
  const int64_t H = x.dim(2), W = x.dim(3);
  check_shape(p.w_theta.shape() == p.w_phi.shape() &&
                  p.w_phi.shape() == p.w_g.shape() &&
                  p.w_z.dim(1) == p.w_theta.dim(0) &&
                  p.w_z.dim(0) == p.w_theta.dim(1),
              "wnlam_forward: embedding kernels disagree on channels");

  Tensor part = window_partition(x, w);
  const int64_t B = part.dim(0), C2 = p.w_theta.dim(0);
  const int64_t P = int64_t(w) * w;

  Tensor theta = conv2d(part, p.w_theta, Tensor(), 1, 0);
  Tensor phi = conv2d(part, p.w_phi, Tensor(), 1, 0);
  Tensor g = conv2d(part, p.w_g, Tensor(), 1, 0);

  Tensor th3 = reshape(theta, {B, C2, P});
  Tensor ph3 = reshape(phi, {B, C2, P});
  Tensor g3 = reshape(g, {B, C2, P});

  // scores[b,i,k] = theta(x_i)^T phi(x_k); weights per query i sum to 1.
  Tensor scores = bmm(th3, ph3, /*trans_a=*/true, /*trans_b=*/false);
  Tensor attn = softmax_axis(scores, 2);
  Tensor y3 = bmm(g3, attn, /*trans_a=*/false, /*trans_b=*/true);
  Tensor y4 = reshape(y3, {B, C2, int64_t(w), int64_t(w)});

  Tensor z = add(conv2d(y4, p.w_z, Tensor(), 1, 0), part);
  return window_merge(z, w, H, W);
}

namespace {

// Shared two-layer net F applied to a pooled [B,C,1,1] descriptor.
Tensor wcbam_mlp(const Tensor& v, const WcbamParams& p) {
  return conv2d(relu(conv2d(v, p.fc1, p.fc1_bias, 1, 0)), p.fc2, p.fc2_bias,
                1, 0);
}

}  // namespace

Tensor wcbam_channel_attention(const Tensor& x_window, const WcbamParams& p) {
  check_shape(x_window.defined() && x_window.rank() == 4,
              "wcbam_channel_attention: expected [B,C,w,w]");
  Tensor avg = pool_global(x_window, PoolKind::kAvg);
  Tensor mx = pool_global(x_window, PoolKind::kMax);
  return sigmoid(add(wcbam_mlp(avg, p), wcbam_mlp(mx, p)));
}

Tensor wcbam_spatial_attention(const Tensor& x_ca, const WcbamParams& p) {
  check_shape(x_ca.defined() && x_ca.rank() == 4,
              "wcbam_spatial_attention: expected [N,C,H,W]");
  Tensor avg = channel_reduce(x_ca, PoolKind::kAvg);
  Tensor mx = channel_reduce(x_ca, PoolKind::kMax);
  std::array<Tensor, 2> maps = {avg, mx};
  Tensor cat = concat_channels(maps);
  const int k = int(p.spatial.dim(2));
  check_shape(k % 2 == 1, "wcbam_spatial_attention: kernel must be odd");
  return sigmoid(conv2d(cat, p.spatial, p.spatial_bias, 1, (k - 1) / 2));
}

Tensor wcbam_forward(const Tensor& x, const WcbamParams& p) {
  check_window(x, p.window, "wcbam_forward");
  const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor part = window_partition(x, p.window);
  Tensor ca = wcbam_channel_attention(part, p);
  Tensor gated = mul(part, upsample_nearest(ca, p.window));
  Tensor merged = window_merge(gated, p.window, H, W);
  Tensor sa = wcbam_spatial_attention(merged, p);
  return mul(merged, tile_channels(sa, C));
}

Tensor residual_block(const Tensor& x, const ResidualBlockParams& p) {
  return add(x, conv2d(relu(conv2d(x, p.k1, p.b1, 1, 1)), p.k2, p.b2, 1, 1));
}

Tensor residual_attention_block(const Tensor& x,
                                const AttentionBlockParams& p) {
  Tensor trunk = x;
  for (const auto& rb : p.trunk) trunk = residual_block(trunk, rb);
  Tensor m = x;
  for (const auto& rb : p.mask) m = residual_block(m, rb);
  m = wnlam_forward(m, p.wnlam, p.window);
  m = wcbam_forward(m, p.wcbam);
  Tensor gate = sigmoid(conv2d(m, p.proj, p.proj_bias, 1, 0));
  return add(x, mul(trunk, gate));
}

}  // namespace hp
