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

#include "heliopress/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace hp {

namespace {

bool g_checked_mode = true;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

enum class BKind { kSame, kAScalar, kBScalar, kAChan, kBChan };

// Channel broadcasting pairs a rank-1 [C] vector with a rank-4 [N,C,H,W]
// tensor; anything else outside equal shapes / single-element operands is a
// shape error.
BKind resolve_broadcast(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return BKind::kSame;
  if (a.numel() == 1) return BKind::kAScalar;
  if (b.numel() == 1) return BKind::kBScalar;
  if (a.rank() == 1 && b.rank() == 4 && a.dim(0) == b.dim(1))
    return BKind::kAChan;
  if (b.rank() == 1 && a.rank() == 4 && b.dim(0) == a.dim(1))
    return BKind::kBChan;
  throw ShapeError("incompatible shapes for broadcast: " +
                   shape_to_string(a.shape()) + " vs " +
                   shape_to_string(b.shape()));
}

template <typename F, typename DFA, typename DFB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DFA dfa, DFB dfb) {
  BKind kind = resolve_broadcast(a, b);
  const Tensor& big = (kind == BKind::kAScalar || kind == BKind::kAChan) ? b
                                                                         : a;
  Tensor out = Tensor::zeros(big.shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.value_mut().data();
  const int64_t n = out.numel();

  switch (kind) {
    case BKind::kSame:
      for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
      break;
    case BKind::kAScalar:
      for (int64_t i = 0; i < n; ++i) po[i] = f(pa[0], pb[i]);
      break;
    case BKind::kBScalar:
      for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[0]);
      break;
    case BKind::kAChan:
    case BKind::kBChan: {
      const Tensor& t4 = (kind == BKind::kAChan) ? b : a;
      const int64_t N = t4.dim(0), C = t4.dim(1), HW = t4.dim(2) * t4.dim(3);
      for (int64_t nn = 0; nn < N; ++nn) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (nn * C + c) * HW;
          if (kind == BKind::kAChan) {
            for (int64_t i = 0; i < HW; ++i)
              po[base + i] = f(pa[c], pb[base + i]);
          } else {
            for (int64_t i = 0; i < HW; ++i)
              po[base + i] = f(pa[base + i], pb[c]);
          }
        }
      }
      break;
    }
  }

  if (grad_enabled_for({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    const bool areq = a.requires_grad(), breq = b.requires_grad();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      const double* ga = ai->value.data();
      const double* gb = bi->value.data();
      const double* go = oi->grad.data();
      const int64_t cnt = int64_t(oi->value.size());
      auto acc = [](TensorImpl* t) {
        if (t->grad.empty()) t->grad.assign(t->value.size(), 0.0);
      };
      if (areq) acc(ai.get());
      if (breq) acc(bi.get());
      switch (kind) {
        case BKind::kSame:
          for (int64_t i = 0; i < cnt; ++i) {
            if (areq) ai->grad[i] += dfa(ga[i], gb[i]) * go[i];
            if (breq) bi->grad[i] += dfb(ga[i], gb[i]) * go[i];
          }
          break;
        case BKind::kAScalar:
          for (int64_t i = 0; i < cnt; ++i) {
            if (areq) ai->grad[0] += dfa(ga[0], gb[i]) * go[i];
            if (breq) bi->grad[i] += dfb(ga[0], gb[i]) * go[i];
          }
          break;
        case BKind::kBScalar:
          for (int64_t i = 0; i < cnt; ++i) {
            if (areq) ai->grad[i] += dfa(ga[i], gb[0]) * go[i];
            if (breq) bi->grad[0] += dfb(ga[i], gb[0]) * go[i];
          }
          break;
        case BKind::kAChan:
        case BKind::kBChan: {
          const TensorImpl* t4 = (kind == BKind::kAChan) ? bi.get() : ai.get();
          const int64_t N = t4->shape[0], C = t4->shape[1],
                        HW = t4->shape[2] * t4->shape[3];
          for (int64_t nn = 0; nn < N; ++nn) {
            for (int64_t c = 0; c < C; ++c) {
              const int64_t base = (nn * C + c) * HW;
              for (int64_t i = 0; i < HW; ++i) {
                const int64_t j = base + i;
                if (kind == BKind::kAChan) {
                  if (areq) ai->grad[c] += dfa(ga[c], gb[j]) * go[j];
                  if (breq) bi->grad[j] += dfb(ga[c], gb[j]) * go[j];
                } else {
                  if (areq) ai->grad[j] += dfa(ga[j], gb[c]) * go[j];
                  if (breq) bi->grad[c] += dfb(ga[j], gb[c]) * go[j];
                }
              }
            }
          }
          break;
        }
      }
    });
  }
  return out;
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df_xy) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.value().data();
  double* po = out.value_mut().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);

  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      const int64_t cnt = int64_t(oi->value.size());
      for (int64_t i = 0; i < cnt; ++i) {
        ai->grad[i] += df_xy(ai->value[i], oi->value[i]) * oi->grad[i];
      }
    });
  }
  return out;
}

}  // namespace

void set_checked_mode(bool enabled) { g_checked_mode = enabled; }
bool checked_mode() { return g_checked_mode; }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b,
      [](double x, double y) {
        if (g_checked_mode && y == 0.0)
          throw ContractError("division by exact zero");
        return x / y;
      },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        // Stable in both tails.
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  return unary_op(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) {
        return (x >= lo && x <= hi) ? 1.0 : 0.0;
      });
}

Tensor erf(const Tensor& a) {
  constexpr double kTwoOverSqrtPi = 1.1283791670955126;
  return unary_op(
      a, [](double x) { return std::erf(x); },
      [](double x, double) { return kTwoOverSqrtPi * std::exp(-x * x); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
      },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor softmax_axis(const Tensor& a, int axis) {
  check(axis >= 0 && axis < a.rank(), "softmax_axis: axis out of range");
  const auto& shape = a.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[size_t(i)];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= shape[size_t(i)];
  const int64_t k = shape[size_t(axis)];

  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.value().data();
  double* po = out.value_mut().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * k * inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < k; ++j) m = std::max(m, pa[base + j * inner]);
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        double e = std::exp(pa[base + j * inner] - m);
        po[base + j * inner] = e;
        s += e;
      }
      for (int64_t j = 0; j < k; ++j) po[base + j * inner] /= s;
    }
  }

  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      const double* y = oi->value.data();
      const double* g = oi->grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * k * inner + i;
          double dot = 0.0;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t idx = base + j * inner;
            dot += g[idx] * y[idx];
          }
          for (int64_t j = 0; j < k; ++j) {
            const int64_t idx = base + j * inner;
            ai->grad[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

namespace {

void require_nchw(const Tensor& t, const char* who) {
  check_shape(t.defined() && t.rank() == 4,
              std::string(who) + ": expected a rank-4 [N,C,H,W] tensor");
}

}  // namespace

Tensor pool_window(const Tensor& x, PoolKind kind, int wh, int ww,
                   bool pad_allowed) {
  require_nchw(x, "pool_window");
  check(wh >= 1 && ww >= 1, "pool_window: window must be positive");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (!pad_allowed && (H % wh != 0 || W % ww != 0)) {
    throw ShapeError("pool_window: window does not divide spatial extents");
  }
  const int64_t OH = (H + wh - 1) / wh, OW = (W + ww - 1) / ww;
  Tensor out = Tensor::zeros({N, C, OH, OW});
  const double* px = x.value().data();
  double* po = out.value_mut().data();
  const double denom = double(wh) * double(ww);

  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double* plane = px + (n * C + c) * H * W;
      double* oplane = po + (n * C + c) * OH * OW;
      for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = (kind == PoolKind::kAvg)
                           ? 0.0
                           : -std::numeric_limits<double>::infinity();
          for (int dy = 0; dy < wh; ++dy) {
            for (int dx = 0; dx < ww; ++dx) {
              const int64_t ih = oh * wh + dy, iw = ow * ww + dx;
              const double v =
                  (ih < H && iw < W) ? plane[ih * W + iw] : 0.0;
              if (kind == PoolKind::kAvg) {
                acc += v;
              } else if (v > acc) {
                acc = v;
              }
            }
          }
          oplane[oh * OW + ow] =
              (kind == PoolKind::kAvg) ? acc / denom : acc;
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
      const double* val = xi->value.data();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t pbase = (n * C + c) * H * W;
          const int64_t obase = (n * C + c) * OH * OW;
          for (int64_t oh = 0; oh < OH; ++oh) {
            for (int64_t ow = 0; ow < OW; ++ow) {
              const double go = g[obase + oh * OW + ow];
              if (kind == PoolKind::kAvg) {
                for (int dy = 0; dy < wh; ++dy) {
                  for (int dx = 0; dx < ww; ++dx) {
                    const int64_t ih = oh * wh + dy, iw = ow * ww + dx;
                    if (ih < H && iw < W)
                      xi->grad[pbase + ih * W + iw] += go / denom;
                  }
                }
              } else {
                // First occurrence in row-major window order takes the
                // gradient; virtual zero-pad cells can win and then the
                // gradient is dropped.
                double best = -std::numeric_limits<double>::infinity();
                int64_t best_idx = -1;
                for (int dy = 0; dy < wh; ++dy) {
                  for (int dx = 0; dx < ww; ++dx) {
                    const int64_t ih = oh * wh + dy, iw = ow * ww + dx;
                    const double v =
                        (ih < H && iw < W) ? val[pbase + ih * W + iw] : 0.0;
                    if (v > best) {
                      best = v;
                      best_idx =
                          (ih < H && iw < W) ? pbase + ih * W + iw : -1;
                    }
                  }
                }
                if (best_idx >= 0) xi->grad[best_idx] += go;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor pool_global(const Tensor& x, PoolKind kind) {
  require_nchw(x, "pool_global");
  return pool_window(x, kind, int(x.dim(2)), int(x.dim(3)));
}

Tensor channel_reduce(const Tensor& x, PoolKind kind) {
  require_nchw(x, "channel_reduce");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({N, 1, x.dim(2), x.dim(3)});
  const double* px = x.value().data();
  double* po = out.value_mut().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t i = 0; i < HW; ++i) {
      double acc = (kind == PoolKind::kAvg)
                       ? 0.0
                       : -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < C; ++c) {
        const double v = px[(n * C + c) * HW + i];
        if (kind == PoolKind::kAvg) {
          acc += v;
        } else if (v > acc) {
          acc = v;
        }
      }
      po[n * HW + i] = (kind == PoolKind::kAvg) ? acc / double(C) : acc;
    }
  }

  if (grad_enabled_for({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      const double* g = oi->grad.data();
      const double* val = xi->value.data();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t i = 0; i < HW; ++i) {
          const double go = g[n * HW + i];
          if (kind == PoolKind::kAvg) {
            for (int64_t c = 0; c < C; ++c)
              xi->grad[(n * C + c) * HW + i] += go / double(C);
          } else {
            double best = -std::numeric_limits<double>::infinity();
            int64_t best_c = 0;
            for (int64_t c = 0; c < C; ++c) {
              const double v = val[(n * C + c) * HW + i];
              if (v > best) {
                best = v;
                best_c = c;
              }
            }
            xi->grad[(n * C + best_c) * HW + i] += go;
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct ConvGeom {
  int64_t N, Cin, H, W, Cout;
  int kh, kw, stride, pad;
  int64_t oh, ow;
  int64_t ckk() const { return Cin * kh * kw; }
  int64_t patches() const { return oh * ow; }
};

// Gathers conv patches: cols is [Cin*kh*kw, oh*ow] row-major. Out-of-bounds
// reads are zeros (explicit zero padding).
void im2col(const double* src, const ConvGeom& g, double* cols) {
  const int64_t P = g.patches();
  for (int64_t c = 0; c < g.Cin; ++c) {
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        double* dst = cols + ((c * g.kh + dy) * g.kw + dx) * P;
        for (int64_t oh = 0; oh < g.oh; ++oh) {
          const int64_t ih = oh * g.stride - g.pad + dy;
          double* drow = dst + oh * g.ow;
          if (ih < 0 || ih >= g.H) {
            std::fill(drow, drow + g.ow, 0.0);
            continue;
          }
          const double* srow = src + (c * g.H + ih) * g.W;
          for (int64_t ow = 0; ow < g.ow; ++ow) {
            const int64_t iw = ow * g.stride - g.pad + dx;
            drow[ow] = (iw >= 0 && iw < g.W) ? srow[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
void col2im_add(const double* cols, const ConvGeom& g, double* dst) {
  const int64_t P = g.patches();
  for (int64_t c = 0; c < g.Cin; ++c) {
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        const double* src = cols + ((c * g.kh + dy) * g.kw + dx) * P;
        for (int64_t oh = 0; oh < g.oh; ++oh) {
          const int64_t ih = oh * g.stride - g.pad + dy;
          if (ih < 0 || ih >= g.H) continue;
          double* drow = dst + (c * g.H + ih) * g.W;
          const double* srow = src + oh * g.ow;
          for (int64_t ow = 0; ow < g.ow; ++ow) {
            const int64_t iw = ow * g.stride - g.pad + dx;
            if (iw >= 0 && iw < g.W) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

ConvGeom conv_geometry(const Tensor& input, int64_t cin, int64_t cout, int kh,
                       int kw, int stride, int pad) {
  check(stride >= 1, "conv: stride must be >= 1");
  check(pad >= 0, "conv: pad must be >= 0");
  ConvGeom g;
  g.N = input.dim(0);
  g.Cin = cin;
  g.H = input.dim(2);
  g.W = input.dim(3);
  g.Cout = cout;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.pad = pad;
  check_shape(kh <= g.H + 2 * pad && kw <= g.W + 2 * pad,
              "conv: kernel exceeds padded extents");
  g.oh = (g.H + 2 * pad - kh) / stride + 1;
  g.ow = (g.W + 2 * pad - kw) / stride + 1;
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
  require_nchw(input, "conv2d");
  check_shape(kernel.defined() && kernel.rank() == 4,
              "conv2d: kernel must be [Cout,Cin,kh,kw]");
  check_shape(kernel.dim(1) == input.dim(1),
              "conv2d: input channels do not match kernel");
  const int64_t Cout = kernel.dim(0);
  if (bias.defined()) {
    check_shape(bias.rank() == 1 && bias.dim(0) == Cout,
                "conv2d: bias must be [Cout]");
  }
  ConvGeom g = conv_geometry(input, input.dim(1), Cout, int(kernel.dim(2)),
                             int(kernel.dim(3)), stride, pad);

  Tensor out = Tensor::zeros({g.N, Cout, g.oh, g.ow});
  const int64_t ckk = g.ckk(), P = g.patches();
  std::vector<double> cols(size_t(ckk * P));
  CMapRM K(kernel.value().data(), Cout, ckk);
  for (int64_t n = 0; n < g.N; ++n) {
    im2col(input.value().data() + n * g.Cin * g.H * g.W, g, cols.data());
    CMapRM C(cols.data(), ckk, P);
    MapRM O(out.value_mut().data() + n * Cout * P, Cout, P);
    O.noalias() = K * C;
    if (bias.defined()) {
      const double* b = bias.value().data();
      for (int64_t co = 0; co < Cout; ++co) O.row(co).array() += b[co];
    }
  }

  if (grad_enabled_for({&input, &kernel, &bias})) {
    out.set_requires_grad(true);
    auto xi = input.impl_ptr(), ki = kernel.impl_ptr(), oi = out.impl_ptr();
    auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
    const bool xreq = input.requires_grad(), kreq = kernel.requires_grad();
    const bool breq = bias.defined() && bias.requires_grad();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      const int64_t ckk2 = ckk, P2 = P;
      std::vector<double> cols2(size_t(ckk2 * P2));
      if (xreq && xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      if (kreq && ki->grad.empty()) ki->grad.assign(ki->value.size(), 0.0);
      if (breq && bi->grad.empty()) bi->grad.assign(bi->value.size(), 0.0);
      CMapRM K2(ki->value.data(), Cout, ckk2);
      for (int64_t n = 0; n < g.N; ++n) {
        CMapRM G(oi->grad.data() + n * Cout * P2, Cout, P2);
        if (kreq || xreq) {
          im2col(xi->value.data() + n * g.Cin * g.H * g.W, g, cols2.data());
        }
        if (kreq) {
          CMapRM C(cols2.data(), ckk2, P2);
          MapRM dK(ki->grad.data(), Cout, ckk2);
          dK.noalias() += G * C.transpose();
        }
        if (breq) {
          for (int64_t co = 0; co < Cout; ++co)
            bi->grad[size_t(co)] += G.row(co).sum();
        }
        if (xreq) {
          RowMat dcols = K2.transpose() * G;
          col2im_add(dcols.data(), g,
                     xi->grad.data() + n * g.Cin * g.H * g.W);
        }
      }
    });
  }
  return out;
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int pad) {
  require_nchw(input, "conv2d_transpose");
  check_shape(kernel.defined() && kernel.rank() == 4,
              "conv2d_transpose: kernel must be [Cs,Cout,kh,kw]");
  check_shape(kernel.dim(0) == input.dim(1),
              "conv2d_transpose: input channels do not match kernel");
  check(stride >= 1, "conv2d_transpose: stride must be >= 1");
  check(pad >= 0, "conv2d_transpose: pad must be >= 0");
  const int64_t Cs = kernel.dim(0), Cout = kernel.dim(1);
  const int kh = int(kernel.dim(2)), kw = int(kernel.dim(3));
  if (bias.defined()) {
    check_shape(bias.rank() == 1 && bias.dim(0) == Cout,
                "conv2d_transpose: bias must be [Cout]");
  }
  const int64_t N = input.dim(0), Hin = input.dim(2), Win = input.dim(3);
  const int64_t Hout = (Hin - 1) * stride - 2 * pad + kh;
  const int64_t Wout = (Win - 1) * stride - 2 * pad + kw;
  check_shape(Hout >= 1 && Wout >= 1,
              "conv2d_transpose: empty output extents");

  // The output plays the role of the conv input in this geometry.
  ConvGeom g;
  g.N = N;
  g.Cin = Cout;
  g.H = Hout;
  g.W = Wout;
  g.Cout = Cs;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.pad = pad;
  g.oh = Hin;
  g.ow = Win;

  Tensor out = Tensor::zeros({N, Cout, Hout, Wout});
  const int64_t ckk = g.ckk(), Pin = Hin * Win;
  CMapRM K(kernel.value().data(), Cs, ckk);
  for (int64_t n = 0; n < N; ++n) {
    CMapRM X(input.value().data() + n * Cs * Pin, Cs, Pin);
    RowMat cols = K.transpose() * X;
    double* oslice = out.value_mut().data() + n * Cout * Hout * Wout;
    col2im_add(cols.data(), g, oslice);
    if (bias.defined()) {
      const double* b = bias.value().data();
      for (int64_t co = 0; co < Cout; ++co) {
        double* plane = oslice + co * Hout * Wout;
        for (int64_t i = 0; i < Hout * Wout; ++i) plane[i] += b[co];
      }
    }
  }

  if (grad_enabled_for({&input, &kernel, &bias})) {
    out.set_requires_grad(true);
    auto xi = input.impl_ptr(), ki = kernel.impl_ptr(), oi = out.impl_ptr();
    auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
    const bool xreq = input.requires_grad(), kreq = kernel.requires_grad();
    const bool breq = bias.defined() && bias.requires_grad();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (xreq && xi->grad.empty()) xi->grad.assign(xi->value.size(), 0.0);
      if (kreq && ki->grad.empty()) ki->grad.assign(ki->value.size(), 0.0);
      if (breq && bi->grad.empty()) bi->grad.assign(bi->value.size(), 0.0);
      std::vector<double> cols_g(size_t(ckk * Pin));
      CMapRM K2(ki->value.data(), Cs, ckk);
      for (int64_t n = 0; n < N; ++n) {
        const double* gslice = oi->grad.data() + n * Cout * Hout * Wout;
        im2col(gslice, g, cols_g.data());
        CMapRM CG(cols_g.data(), ckk, Pin);
        if (xreq) {
          MapRM dX(xi->grad.data() + n * Cs * Pin, Cs, Pin);
          dX.noalias() += K2 * CG;
        }
        if (kreq) {
          CMapRM X(xi->value.data() + n * Cs * Pin, Cs, Pin);
          MapRM dK(ki->grad.data(), Cs, ckk);
          dK.noalias() += X * CG.transpose();
        }
        if (breq) {
          for (int64_t co = 0; co < Cout; ++co) {
            const double* plane = gslice + co * Hout * Wout;
            double s = 0.0;
            for (int64_t i = 0; i < Hout * Wout; ++i) s += plane[i];
            bi->grad[size_t(co)] += s;
          }
        }
      }
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check_shape(a.defined() && b.defined() && a.rank() == 3 && b.rank() == 3,
              "bmm: expected rank-3 tensors");
  check_shape(a.dim(0) == b.dim(0), "bmm: batch sizes differ");
  const int64_t B = a.dim(0);
  const int64_t a1 = a.dim(1), a2 = a.dim(2), b1 = b.dim(1), b2 = b.dim(2);
  const int64_t m = trans_a ? a2 : a1;
  const int64_t ka = trans_a ? a1 : a2;
  const int64_t kb = trans_b ? b2 : b1;
  const int64_t n = trans_b ? b1 : b2;
  check_shape(ka == kb, "bmm: inner dimensions differ");

  Tensor out = Tensor::zeros({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    CMapRM A(a.value().data() + i * a1 * a2, a1, a2);
    CMapRM Bm(b.value().data() + i * b1 * b2, b1, b2);
    MapRM O(out.value_mut().data() + i * m * n, m, n);
    if (!trans_a && !trans_b)
      O.noalias() = A * Bm;
    else if (trans_a && !trans_b)
      O.noalias() = A.transpose() * Bm;
    else if (!trans_a && trans_b)
      O.noalias() = A * Bm.transpose();
    else
      O.noalias() = A.transpose() * Bm.transpose();
  }

  if (grad_enabled_for({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    const bool areq = a.requires_grad(), breq = b.requires_grad();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (areq && ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      if (breq && bi->grad.empty()) bi->grad.assign(bi->value.size(), 0.0);
      for (int64_t i = 0; i < B; ++i) {
        CMapRM A(ai->value.data() + i * a1 * a2, a1, a2);
        CMapRM Bm(bi->value.data() + i * b1 * b2, b1, b2);
        CMapRM G(oi->grad.data() + i * m * n, m, n);
        if (areq) {
          MapRM dA(ai->grad.data() + i * a1 * a2, a1, a2);
          if (!trans_a) {
            if (!trans_b)
              dA.noalias() += G * Bm.transpose();
            else
              dA.noalias() += G * Bm;
          } else {
            if (!trans_b)
              dA.noalias() += Bm * G.transpose();
            else
              dA.noalias() += Bm.transpose() * G.transpose();
          }
        }
        if (breq) {
          MapRM dB(bi->grad.data() + i * b1 * b2, b1, b2);
          if (!trans_b) {
            if (!trans_a)
              dB.noalias() += A.transpose() * G;
            else
              dB.noalias() += A * G;
          } else {
            if (!trans_a)
              dB.noalias() += G.transpose() * A;
            else
              dB.noalias() += G.transpose() * A.transpose();
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;  // sequential row-major
  Tensor out = Tensor::scalar(s);
  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      const double g = oi->grad[0];
      for (double& d : ai->grad) d += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  check(a.numel() > 0, "mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / double(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape_numel(shape) == a.numel(),
              "reshape: element count mismatch");
  Tensor out = Tensor::from_vector(
      std::move(shape),
      std::vector<double>(a.value().begin(), a.value().end()));
  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      accumulate_grad(ai.get(), oi->grad);
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1) {
  require_nchw(a, "slice_channels");
  check_shape(0 <= c0 && c0 < c1 && c1 <= a.dim(1),
              "slice_channels: bad channel range");
  const int64_t N = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  const int64_t Cs = c1 - c0;
  Tensor out = Tensor::zeros({N, Cs, a.dim(2), a.dim(3)});
  const double* pa = a.value().data();
  double* po = out.value_mut().data();
  for (int64_t n = 0; n < N; ++n) {
    std::copy(pa + (n * C + c0) * HW, pa + (n * C + c1) * HW,
              po + n * Cs * HW);
  }
  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      for (int64_t n = 0; n < N; ++n) {
        const double* g = oi->grad.data() + n * Cs * HW;
        double* d = ai->grad.data() + (n * C + c0) * HW;
        for (int64_t i = 0; i < Cs * HW; ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  check(!parts.empty(), "concat_channels: no inputs");
  require_nchw(parts[0], "concat_channels");
  const int64_t N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int64_t C = 0;
  for (const Tensor& t : parts) {
    require_nchw(t, "concat_channels");
    check_shape(t.dim(0) == N && t.dim(2) == H && t.dim(3) == W,
                "concat_channels: mismatched extents");
    C += t.dim(1);
  }
  const int64_t HW = H * W;
  Tensor out = Tensor::zeros({N, C, H, W});
  double* po = out.value_mut().data();
  int64_t c_off = 0;
  for (const Tensor& t : parts) {
    const int64_t Ct = t.dim(1);
    const double* pt = t.value().data();
    for (int64_t n = 0; n < N; ++n) {
      std::copy(pt + n * Ct * HW, pt + (n + 1) * Ct * HW,
                po + (n * C + c_off) * HW);
    }
    c_off += Ct;
  }

  bool any_grad = false;
  for (const Tensor& t : parts) any_grad |= t.requires_grad();
  if (Tape::active() != nullptr && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<bool> reqs;
    for (const Tensor& t : parts) {
      impls.push_back(t.impl_ptr());
      reqs.push_back(t.requires_grad());
    }
    auto oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      int64_t off = 0;
      for (size_t p = 0; p < impls.size(); ++p) {
        const int64_t Ct = impls[p]->shape[1];
        if (reqs[p]) {
          if (impls[p]->grad.empty())
            impls[p]->grad.assign(impls[p]->value.size(), 0.0);
          for (int64_t n = 0; n < N; ++n) {
            const double* g = oi->grad.data() + (n * C + off) * HW;
            double* d = impls[p]->grad.data() + n * Ct * HW;
            for (int64_t i = 0; i < Ct * HW; ++i) d[i] += g[i];
          }
        }
        off += Ct;
      }
    });
  }
  return out;
}

Tensor upsample_nearest(const Tensor& a, int factor) {
  require_nchw(a, "upsample_nearest");
  check(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int64_t OH = H * factor, OW = W * factor;
  Tensor out = Tensor::zeros({N, C, OH, OW});
  const double* pa = a.value().data();
  double* po = out.value_mut().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* plane = pa + nc * H * W;
    double* oplane = po + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh) {
      const double* srow = plane + (oh / factor) * W;
      double* drow = oplane + oh * OW;
      for (int64_t ow = 0; ow < OW; ++ow) drow[ow] = srow[ow / factor];
    }
  }
  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      const double* g = oi->grad.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* gplane = g + nc * OH * OW;
        double* dplane = ai->grad.data() + nc * H * W;
        for (int64_t oh = 0; oh < OH; ++oh) {
          double* drow = dplane + (oh / factor) * W;
          const double* grow = gplane + oh * OW;
          for (int64_t ow = 0; ow < OW; ++ow) drow[ow / factor] += grow[ow];
        }
      }
    });
  }
  return out;
}

Tensor tile_channels(const Tensor& a, int64_t channels) {
  require_nchw(a, "tile_channels");
  check_shape(a.dim(1) == 1, "tile_channels: input must have one channel");
  check(channels >= 1, "tile_channels: channels must be >= 1");
  const int64_t N = a.dim(0), HW = a.dim(2) * a.dim(3);
  Tensor out = Tensor::zeros({N, channels, a.dim(2), a.dim(3)});
  const double* pa = a.value().data();
  double* po = out.value_mut().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < channels; ++c) {
      std::copy(pa + n * HW, pa + (n + 1) * HW, po + (n * channels + c) * HW);
    }
  }
  if (grad_enabled_for({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::active()->record([=]() {
      if (oi->grad.empty()) return;
      if (ai->grad.empty()) ai->grad.assign(ai->value.size(), 0.0);
      const double* g = oi->grad.data();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < channels; ++c) {
          const double* grow = g + (n * channels + c) * HW;
          double* drow = ai->grad.data() + n * HW;
          for (int64_t i = 0; i < HW; ++i) drow[i] += grow[i];
        }
      }
    });
  }
  return out;
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  check(tape != nullptr, "backward: no active tape");
  tape->backward(loss);
}

GradPause::GradPause() { saved_ = detail::swap_active_tape(nullptr); }
GradPause::~GradPause() { detail::swap_active_tape(saved_); }

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double h, int64_t max_coords,
                  uint64_t seed) {
  const double inf = std::numeric_limits<double>::infinity();

  // Analytic gradients over every coordinate.
  Tensor p = point.detach();
  p.set_requires_grad(true);
  std::vector<double> analytic(size_t(p.numel()), 0.0);
  {
    Tape tape;
    Tensor loss = f(p);
    check(loss.defined() && loss.numel() == 1,
          "grad_check: f must be scalar-valued");
    if (!std::isfinite(loss.item())) return inf;
    tape.backward(loss);
    if (p.has_grad()) {
      auto g = p.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
  }

  std::vector<int64_t> coords(size_t(point.numel()));
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords >= 0 && int64_t(coords.size()) > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(size_t(max_coords));
    std::sort(coords.begin(), coords.end());
  }

  GradPause pause;
  std::vector<double> base(point.value().begin(), point.value().end());
  double worst = 0.0;
  for (int64_t i : coords) {
    const double step = h * std::max(1.0, std::abs(base[size_t(i)]));
    auto eval_at = [&](double v) {
      std::vector<double> data = base;
      data[size_t(i)] = v;
      Tensor q = Tensor::from_vector(point.shape(), std::move(data));
      return f(q).item();
    };
    const double fp = eval_at(base[size_t(i)] + step);
    const double fm = eval_at(base[size_t(i)] - step);
    if (!std::isfinite(fp) || !std::isfinite(fm)) return inf;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[size_t(i)];
    const double rel = std::abs(a - numeric) /
                       std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace hp
