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

#ifndef HELIOPRESS_OPS_HPP_
#define HELIOPRESS_OPS_HPP_

#include <functional>

#include "heliopress/tensor.hpp"

namespace hp {

// Primitive operations.  All are pure w.r.t. their inputs; when a Tape is
// active and an operand requires gradients, a backward step is recorded.
// Reductions accumulate sequentially in row-major order so repeated runs
// are bit-identical.
//
// Broadcasting in binary ops is limited to: equal shapes, single-element
// tensor against anything, and a rank-1 [C] vector against [N,C,H,W].

// When enabled (the default), div() rejects a denominator that is exactly
// zero instead of producing a non-finite value.
void set_checked_mode(bool enabled);
bool checked_mode();

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);  // subgradient 0 at the origin
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor erf(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

// Softmax along `axis`, computed with max subtraction.  Rows sum to 1 and
// are invariant to a constant shift of the logits.
Tensor softmax_axis(const Tensor& a, int axis);

enum class PoolKind { kAvg, kMax };

// Per-window reduction over non-overlapping wh x ww tiles.  The window must
// divide the spatial extents unless pad_allowed is set, in which case the
// input is zero-padded up to the next multiple.  Max ties go to the first
// element in row-major window order.
Tensor pool_window(const Tensor& x, PoolKind kind, int wh, int ww,
                   bool pad_allowed = false);
Tensor pool_global(const Tensor& x, PoolKind kind);  // -> [N,C,1,1]

// Reduction across the channel axis: [N,C,H,W] -> [N,1,H,W].
Tensor channel_reduce(const Tensor& x, PoolKind kind);

// Cross-correlation with explicit zero padding.
//   input  [N,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout] or undefined.
//   H' = floor((H + 2*pad - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);

// Exact adjoint of conv2d under the same geometry.
//   input  [N,Cs,Hin,Win], kernel [Cs,Cout,kh,kw], bias [Cout] or undefined.
//   Hout = (Hin - 1)*stride - 2*pad + kh.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int pad);

// Batched matrix product over [B,m,k] x [B,k,n] with optional transposes of
// the last two axes.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false,
           bool trans_b = false);

Tensor sum(const Tensor& a);   // -> rank-0 scalar
Tensor mean(const Tensor& a);  // -> rank-0 scalar

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1);
Tensor concat_channels(std::span<const Tensor> parts);
Tensor upsample_nearest(const Tensor& a, int factor);
Tensor tile_channels(const Tensor& a, int64_t channels);  // [N,1,H,W]->[N,C,H,W]

// Replays the active tape: each requires-grad leaf reachable from `loss`
// receives d(loss)/d(leaf), summed over all its consumers.  Repeated calls
// without zeroing accumulate.
void backward(const Tensor& loss);

// Temporarily disables tape recording (RAII), e.g. for evaluation passes.
class GradPause {
 public:
  GradPause();
  ~GradPause();
  GradPause(const GradPause&) = delete;
  GradPause& operator=(const GradPause&) = delete;

 private:
  Tape* saved_;
};

// Compares analytic gradients of the scalar function f against central
// finite differences with per-coordinate step h*max(1,|x_i|).  Returns the
// maximum over checked coordinates of
//   |analytic - numeric| / max(1, |analytic|, |numeric|),
// or +inf if any evaluation is non-finite.  When max_coords >= 0 and the
// point has more coordinates than that, a seeded random subset is checked
// (the analytic side always covers every coordinate).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double h, int64_t max_coords = -1,
                  uint64_t seed = 1);

}  // namespace hp

#endif  // HELIOPRESS_OPS_HPP_
