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

#ifndef HELIOPRESS_ATTENTION_HPP_
#define HELIOPRESS_ATTENTION_HPP_

#include <array>

#include "heliopress/ops.hpp"
#include "heliopress/tensor.hpp"

namespace hp {

// Window-based non-local attention.  theta/phi/g embed into a C/2
// bottleneck; w_z restores C channels.  All four are 1x1 convolutions
// without bias.
struct WnlamParams {
  Tensor w_theta;  // [C2, C, 1, 1]
  Tensor w_phi;    // [C2, C, 1, 1]
  Tensor w_g;      // [C2, C, 1, 1]
  Tensor w_z;      // [C, C2, 1, 1]
};

// Window-based CBAM.  The two fully connected layers (as 1x1 convs) are
// shared between the Avg and Max branches; the spatial gate is a 2-in /
// 1-out conv with zero padding that preserves H x W.
struct WcbamParams {
  Tensor fc1, fc1_bias;          // [C/r, C, 1, 1], [C/r]
  Tensor fc2, fc2_bias;          // [C, C/r, 1, 1], [C]
  Tensor spatial, spatial_bias;  // [1, 2, k, k], [1]
  int window = 4;
};

// conv3x3 -> ReLU -> conv3x3 with skip connection.
struct ResidualBlockParams {
  Tensor k1, b1;  // [C, C, 3, 3], [C]
  Tensor k2, b2;
};

// Trunk/mask attention wrapper: out = x + trunk(x) * sigmoid(mask(x)).
// Trunk is 3 residual blocks; mask is 3 residual blocks -> WNLAM -> WCBAM
// -> 1x1 projection.
struct AttentionBlockParams {
  std::array<ResidualBlockParams, 3> trunk;
  std::array<ResidualBlockParams, 3> mask;
  WnlamParams wnlam;
  WcbamParams wcbam;
  Tensor proj, proj_bias;  // [C, C, 1, 1], [C]
  int window = 4;
};

// Splits [N,C,H,W] into non-overlapping w x w tiles in row-major tile
// order: [N*nW, C, w, w].  window_merge is the exact inverse.
Tensor window_partition(const Tensor& x, int w);
Tensor window_merge(const Tensor& x, int w, int64_t H, int64_t W);

// Within each window independently:
//   y_i = sum_k softmax_k(theta(x_i)^T phi(x_k)) g(x_k),  z_i = W_z y_i + x_i.
Tensor wnlam_forward(const Tensor& x, const WnlamParams& p, int w);

// CA_w = sigmoid(F(Avg(X_w)) + F(Max(X_w))), one weight per channel per
// window, for windows stacked along the batch axis.
Tensor wcbam_channel_attention(const Tensor& x_window, const WcbamParams& p);

// SA = sigmoid(Conv([Avg_c(X), Max_c(X)])) with channel-axis pooling.
Tensor wcbam_spatial_attention(const Tensor& x_ca, const WcbamParams& p);

// Per-window channel gating followed by global spatial gating.
Tensor wcbam_forward(const Tensor& x, const WcbamParams& p);

Tensor residual_block(const Tensor& x, const ResidualBlockParams& p);

Tensor residual_attention_block(const Tensor& x,
                                const AttentionBlockParams& p);

}  // namespace hp

#endif  // HELIOPRESS_ATTENTION_HPP_
