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

#include "heliopress/transforms.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "heliopress/util.hpp"

namespace hp {

void ArchConfig::validate() const {
  auto bad = [](const std::string& msg) { throw ConfigError(msg); };
  if (n_channels < 1 || latent_channels < 1 || hyper_channels < 1 ||
      ctx_channels < 1)
    bad("channel counts must be positive");
  if (downscale_factor != 16) bad("downscale factor is fixed at 16");
  if (window < 1) bad("window size must be positive");
  if (n_slices < 1 || latent_channels % n_slices != 0)
    bad("latent channels must divide evenly into slices");
  if (enc_kernel < 3 || enc_kernel % 2 == 0)
    bad("encoder kernel must be odd and >= 3");
  if (dec_kernel < 2 || dec_kernel % 2 != 0)
    bad("decoder kernel must be even and >= 2");
  if (hyper_kernel_a % 2 == 0 || hyper_kernel_b % 2 == 0)
    bad("hyper kernels must be odd");
  if (disc_kernel % 2 == 0) bad("discriminator kernel must be odd");
  if (spatial_attn_kernel % 2 == 0) bad("spatial attention kernel must be odd");
  if (wcbam_reduction < 1) bad("wcbam reduction must be >= 1");
}

namespace {
constexpr double kSoftplusInvOne = 0.5413248546129181;  // softplus(x) == 1
}  // namespace

class ModelBuilder {
 public:
  ModelBuilder(CodecModel* m, uint64_t seed) : m_(m), rng_(seed) {}

  Tensor kernel(const std::string& name, int64_t co, int64_t ci, int kh,
                int kw) {
    std::vector<double> data(static_cast<size_t>(co * ci * kh * kw));
    const double scale = 1.0 / std::sqrt(double(ci * kh * kw));
    for (double& v : data) v = rng_.normal(0.0, scale);
    return add(name, Tensor::from_vector({co, ci, kh, kw}, std::move(data)),
               ParamConstraint::kNone);
  }

  Tensor bias(const std::string& name, int64_t c) {
    return add(name, Tensor::zeros({c}), ParamConstraint::kNone);
  }

  ConvLayer conv(const std::string& prefix, int64_t co, int64_t ci, int k) {
    return ConvLayer{kernel(prefix + ".kernel", co, ci, k, k),
                     bias(prefix + ".bias", co)};
  }

  GdnParams gdn(const std::string& prefix, int64_t c) {
    GdnParams p;
    p.beta = add(prefix + ".beta", Tensor::full({c}, 1.0),
                 ParamConstraint::kBetaFloor);
    Tensor gamma = Tensor::zeros({c, c, 1, 1});
    for (int64_t i = 0; i < c; ++i) gamma.value_mut()[size_t(i * c + i)] = 0.1;
    p.gamma = add(prefix + ".gamma", gamma, ParamConstraint::kNonNegative);
    return p;
  }

  ResidualBlockParams rb(const std::string& prefix, int64_t c) {
    ResidualBlockParams p;
    p.k1 = kernel(prefix + ".k1", c, c, 3, 3);
    p.b1 = bias(prefix + ".b1", c);
    p.k2 = kernel(prefix + ".k2", c, c, 3, 3);
    p.b2 = bias(prefix + ".b2", c);
    return p;
  }

  WnlamParams wnlam(const std::string& prefix, int64_t c) {
    const int64_t c2 = std::max<int64_t>(c / 2, 1);
    WnlamParams p;
    p.w_theta = kernel(prefix + ".theta", c2, c, 1, 1);
    p.w_phi = kernel(prefix + ".phi", c2, c, 1, 1);
    p.w_g = kernel(prefix + ".g", c2, c, 1, 1);
    p.w_z = kernel(prefix + ".z", c, c2, 1, 1);
    return p;
  }

  WcbamParams wcbam(const std::string& prefix, int64_t c, int r, int k,
                    int window) {
    const int64_t cr = std::max<int64_t>(c / r, 1);
    WcbamParams p;
    p.fc1 = kernel(prefix + ".fc1", cr, c, 1, 1);
    p.fc1_bias = bias(prefix + ".fc1_bias", cr);
    p.fc2 = kernel(prefix + ".fc2", c, cr, 1, 1);
    p.fc2_bias = bias(prefix + ".fc2_bias", c);
    p.spatial = kernel(prefix + ".spatial", 1, 2, k, k);
    p.spatial_bias = bias(prefix + ".spatial_bias", 1);
    p.window = window;
    return p;
  }

  AttentionBlockParams attn(const std::string& prefix, int64_t c,
                            const ArchConfig& a) {
    AttentionBlockParams p;
    for (int i = 0; i < 3; ++i) {
      p.trunk[size_t(i)] = rb(prefix + ".trunk" + std::to_string(i + 1), c);
    }
    for (int i = 0; i < 3; ++i) {
      p.mask[size_t(i)] = rb(prefix + ".mask" + std::to_string(i + 1), c);
    }
    p.wnlam = wnlam(prefix + ".wnlam", c);
    p.wcbam = wcbam(prefix + ".wcbam", c, a.wcbam_reduction,
                    a.spatial_attn_kernel, a.window);
    p.proj = kernel(prefix + ".proj", c, c, 1, 1);
    p.proj_bias = bias(prefix + ".proj_bias", c);
    p.window = a.window;
    return p;
  }

  Tensor add(const std::string& name, Tensor t, ParamConstraint constraint) {
    t.set_requires_grad(true);
    m_->params_.push_back(ParamEntry{name, t, constraint});
    return t;
  }

 private:
  CodecModel* m_;
  Rng rng_;
};

CodecModel::CodecModel(const ArchConfig& arch, uint64_t seed) : arch_(arch) {
  arch_.validate();
  ModelBuilder b(this, seed);
  const int64_t N = arch_.n_channels, M = arch_.latent_channels;
  const int64_t Hc = arch_.hyper_channels, Cc = arch_.ctx_channels;
  const int ek = arch_.enc_kernel, dk = arch_.dec_kernel;

  // Analysis: four stride-2 stages, GDN after 1-3, one residual block per
  // stage, attention after stages 2 and 4.
  ga_.stage[0] = b.conv("ga.s1", N, 1, ek);
  ga_.gdn[0] = b.gdn("ga.gdn1", N);
  ga_.rb[0] = b.rb("ga.rb1", N);
  ga_.stage[1] = b.conv("ga.s2", N, N, ek);
  ga_.gdn[1] = b.gdn("ga.gdn2", N);
  ga_.rb[1] = b.rb("ga.rb2", N);
  ga_.attn_a = b.attn("ga.attn_a", N, arch_);
  ga_.stage[2] = b.conv("ga.s3", N, N, ek);
  ga_.gdn[2] = b.gdn("ga.gdn3", N);
  ga_.rb[2] = b.rb("ga.rb3", N);
  ga_.stage[3] = b.conv("ga.s4", M, N, ek);
  ga_.rb[3] = b.rb("ga.rb4", M);
  ga_.attn_b = b.attn("ga.attn_b", M, arch_);

  // Synthesis mirrors in reverse; transposed kernels are [Cin,Cout,k,k].
  gs_.stage[0] = ConvLayer{b.kernel("gs.s1.kernel", M, N, dk, dk),
                           b.bias("gs.s1.bias", N)};
  gs_.igdn[0] = b.gdn("gs.igdn1", N);
  gs_.rb[0] = b.rb("gs.rb1", N);
  gs_.attn_a = b.attn("gs.attn_a", N, arch_);
  gs_.stage[1] = ConvLayer{b.kernel("gs.s2.kernel", N, N, dk, dk),
                           b.bias("gs.s2.bias", N)};
  gs_.igdn[1] = b.gdn("gs.igdn2", N);
  gs_.rb[1] = b.rb("gs.rb2", N);
  gs_.stage[2] = ConvLayer{b.kernel("gs.s3.kernel", N, N, dk, dk),
                           b.bias("gs.s3.bias", N)};
  gs_.igdn[2] = b.gdn("gs.igdn3", N);
  gs_.rb[2] = b.rb("gs.rb3", N);
  gs_.attn_b = b.attn("gs.attn_b", N, arch_);
  gs_.rb[3] = b.rb("gs.rb4", N);
  gs_.stage[3] = ConvLayer{b.kernel("gs.s4.kernel", N, 1, dk, dk),
                           b.bias("gs.s4.bias", 1)};

  ha_.c1 = b.conv("ha.c1", Hc, M, arch_.hyper_kernel_a);
  ha_.c2 = b.conv("ha.c2", Hc, Hc, arch_.hyper_kernel_b);

  hs_.d1 = ConvLayer{b.kernel("hs.d1.kernel", Hc, Cc, dk, dk),
                     b.bias("hs.d1.bias", Cc)};
  hs_.d2 = ConvLayer{b.kernel("hs.d2.kernel", Cc, Cc, dk, dk),
                     b.bias("hs.d2.bias", Cc)};

  // Slice nets: slice i conditions on ctx plus slices 0..i-1.
  const int64_t sc = arch_.slice_channels();
  const int64_t hidden = Cc;
  slices_.resize(size_t(arch_.n_slices));
  for (int i = 0; i < arch_.n_slices; ++i) {
    const std::string prefix = "slice." + std::to_string(i);
    const int64_t in_ch = Cc + int64_t(i) * sc;
    SliceNetParams& s = slices_[size_t(i)];
    s.c1 = b.conv(prefix + ".c1", hidden, in_ch, 1);
    s.c2 = b.conv(prefix + ".c2", hidden, hidden, 3);
    s.c3 = b.conv(prefix + ".c3", 2 * sc, hidden, 1);
    // Raw sigma starts at softplus^-1(1) so initial scales are ~1.
    auto bv = s.c3.bias.value_mut();
    for (int64_t c = sc; c < 2 * sc; ++c) bv[size_t(c)] = kSoftplusInvOne;
  }

  zprior_.loc = b.add("zprior.loc", Tensor::zeros({Hc}),
                      ParamConstraint::kNone);
  zprior_.scale_raw =
      b.add("zprior.scale_raw", Tensor::full({Hc}, kSoftplusInvOne),
            ParamConstraint::kNone);

  const int64_t cc = arch_.disc_cond_channels();
  disc_.cond_proj = b.conv("disc.proj", cc, M, 1);
  disc_.stage[0] = b.conv("disc.s1", N, 1 + cc, arch_.disc_kernel);
  disc_.stage[1] = b.conv("disc.s2", 2 * N, N, arch_.disc_kernel);
  disc_.stage[2] = b.conv("disc.s3", 4 * N, 2 * N, arch_.disc_kernel);
  disc_.stage[3] = b.conv("disc.s4", 1, 4 * N, arch_.disc_kernel);
}

std::vector<ParamEntry*> CodecModel::generator_params() {
  std::vector<ParamEntry*> out;
  for (ParamEntry& p : params_) {
    if (p.name.rfind("disc.", 0) != 0) out.push_back(&p);
  }
  return out;
}

std::vector<ParamEntry*> CodecModel::discriminator_params() {
  std::vector<ParamEntry*> out;
  for (ParamEntry& p : params_) {
    if (p.name.rfind("disc.", 0) == 0) out.push_back(&p);
  }
  return out;
}

void CodecModel::set_requires_grad(bool b) {
  for (ParamEntry& p : params_) p.tensor.set_requires_grad(b);
}

void CodecModel::zero_grads() {
  for (ParamEntry& p : params_) p.tensor.zero_grad();
}

namespace {

void push_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
}
void push_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t(x >> (8 * i)));
}
void push_f64(std::vector<uint8_t>& v, double d) {
  uint64_t x = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) v.push_back(uint8_t(x >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> b) : b_(b) {}
  uint16_t u16() { return uint16_t(u8() | (uint16_t(u8()) << 8)); }
  uint32_t u32() {
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= uint32_t(u8()) << (8 * i);
    return x;
  }
  double f64() {
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= uint64_t(u8()) << (8 * i);
    return std::bit_cast<double>(x);
  }
  uint8_t u8() {
    if (pos_ >= b_.size()) throw DecodeError("truncated model file");
    return b_[pos_++];
  }
  std::string str(size_t n) {
    if (pos_ + n > b_.size()) throw DecodeError("truncated model file");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }

 private:
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

std::vector<uint8_t> serialize_param_table(
    std::span<const ParamEntry> params) {
  std::vector<uint8_t> out;
  for (const ParamEntry& p : params) {
    push_u16(out, uint16_t(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    out.push_back(uint8_t(p.tensor.rank()));
    for (int i = 0; i < p.tensor.rank(); ++i)
      push_u32(out, uint32_t(p.tensor.dim(i)));
    for (double v : p.tensor.value()) push_f64(out, v);
  }
  return out;
}

std::vector<uint32_t> arch_block(const ArchConfig& a, uint32_t param_count) {
  return {1u,
          uint32_t(a.n_channels),
          uint32_t(a.latent_channels),
          uint32_t(a.hyper_channels),
          uint32_t(a.ctx_channels),
          uint32_t(a.downscale_factor),
          uint32_t(a.window),
          uint32_t(a.n_slices),
          uint32_t(a.enc_kernel),
          uint32_t(a.dec_kernel),
          uint32_t(a.hyper_kernel_a),
          uint32_t(a.hyper_kernel_b),
          uint32_t(a.disc_kernel),
          uint32_t(a.spatial_attn_kernel),
          uint32_t(a.wcbam_reduction),
          param_count};
}

}  // namespace

uint64_t CodecModel::digest() const {
  return digest64(serialize_param_table(params_));
}

std::vector<uint8_t> CodecModel::serialize() const {
  std::vector<uint8_t> out = {'S', 'D', 'W', '1'};
  for (uint32_t v : arch_block(arch_, uint32_t(params_.size())))
    push_u32(out, v);
  std::vector<uint8_t> table = serialize_param_table(params_);
  out.insert(out.end(), table.begin(), table.end());
  const uint32_t crc = crc32(std::span<const uint8_t>(out).subspan(4));
  push_u32(out, crc);
  return out;
}

void CodecModel::save(const std::string& path) const {
  atomic_write_file(path, serialize());
}

CodecModel CodecModel::deserialize(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4 + 16 * 4 + 4 ||
      std::memcmp(bytes.data(), "SDW1", 4) != 0) {
    throw DecodeError("not an SDW model file");
  }
  const uint32_t stored_crc =
      uint32_t(bytes[bytes.size() - 4]) |
      (uint32_t(bytes[bytes.size() - 3]) << 8) |
      (uint32_t(bytes[bytes.size() - 2]) << 16) |
      (uint32_t(bytes[bytes.size() - 1]) << 24);
  const uint32_t actual_crc =
      crc32(bytes.subspan(4, bytes.size() - 8));
  if (stored_crc != actual_crc) throw DecodeError("model file CRC mismatch");

  ByteReader r(bytes.subspan(4, bytes.size() - 8));
  const uint32_t version = r.u32();
  if (version != 1) throw DecodeError("unsupported SDW version");
  ArchConfig a;
  a.n_channels = int(r.u32());
  a.latent_channels = int(r.u32());
  a.hyper_channels = int(r.u32());
  a.ctx_channels = int(r.u32());
  a.downscale_factor = int(r.u32());
  a.window = int(r.u32());
  a.n_slices = int(r.u32());
  a.enc_kernel = int(r.u32());
  a.dec_kernel = int(r.u32());
  a.hyper_kernel_a = int(r.u32());
  a.hyper_kernel_b = int(r.u32());
  a.disc_kernel = int(r.u32());
  a.spatial_attn_kernel = int(r.u32());
  a.wcbam_reduction = int(r.u32());
  const uint32_t count = r.u32();

  CodecModel m(a, /*seed=*/0);
  if (count != m.params_.size())
    throw DecodeError("model parameter count mismatch");
  for (ParamEntry& p : m.params_) {
    const std::string name = r.str(r.u16());
    if (name != p.name) throw DecodeError("unexpected parameter: " + name);
    const int rank = r.u8();
    if (rank != p.tensor.rank())
      throw DecodeError("parameter rank mismatch: " + name);
    for (int i = 0; i < rank; ++i) {
      if (int64_t(r.u32()) != p.tensor.dim(i))
        throw DecodeError("parameter extent mismatch: " + name);
    }
    for (double& v : p.tensor.value_mut()) v = r.f64();
  }
  return m;
}

CodecModel CodecModel::load(const std::string& path) {
  return deserialize(read_file(path));
}

Tensor gdn_forward(const Tensor& x, const GdnParams& p) {
  return div(x, conv2d(abs(x), p.gamma, p.beta, 1, 0));
}

Tensor igdn_forward(const Tensor& x, const GdnParams& p) {
  return mul(x, conv2d(abs(x), p.gamma, p.beta, 1, 0));
}

Tensor analysis_transform(const Tensor& x, const CodecModel& m) {
  check_shape(x.defined() && x.rank() == 4 && x.dim(1) == 1,
              "analysis_transform: expected [N,1,H,W]");
  check_shape(x.dim(2) % 16 == 0 && x.dim(3) % 16 == 0,
              "analysis_transform: extents must be divisible by 16");
  const AnalysisParams& g = m.ga();
  const int pad = (m.arch().enc_kernel - 1) / 2;

  Tensor t = conv2d(x, g.stage[0].kernel, g.stage[0].bias, 2, pad);
  t = gdn_forward(t, g.gdn[0]);
  t = residual_block(t, g.rb[0]);

  t = conv2d(t, g.stage[1].kernel, g.stage[1].bias, 2, pad);
  t = gdn_forward(t, g.gdn[1]);
  t = residual_block(t, g.rb[1]);
  t = residual_attention_block(t, g.attn_a);

  t = conv2d(t, g.stage[2].kernel, g.stage[2].bias, 2, pad);
  t = gdn_forward(t, g.gdn[2]);
  t = residual_block(t, g.rb[2]);

  t = conv2d(t, g.stage[3].kernel, g.stage[3].bias, 2, pad);
  t = residual_block(t, g.rb[3]);
  t = residual_attention_block(t, g.attn_b);
  return t;
}

Tensor synthesis_transform(const Tensor& y_hat, const CodecModel& m) {
  check_shape(y_hat.defined() && y_hat.rank() == 4 &&
                  y_hat.dim(1) == m.arch().latent_channels,
              "synthesis_transform: latent channel mismatch");
  const SynthesisParams& g = m.gs();
  const int pad = (m.arch().dec_kernel - 2) / 2;

  Tensor t =
      conv2d_transpose(y_hat, g.stage[0].kernel, g.stage[0].bias, 2, pad);
  t = igdn_forward(t, g.igdn[0]);
  t = residual_block(t, g.rb[0]);
  t = residual_attention_block(t, g.attn_a);

  t = conv2d_transpose(t, g.stage[1].kernel, g.stage[1].bias, 2, pad);
  t = igdn_forward(t, g.igdn[1]);
  t = residual_block(t, g.rb[1]);

  t = conv2d_transpose(t, g.stage[2].kernel, g.stage[2].bias, 2, pad);
  t = igdn_forward(t, g.igdn[2]);
  t = residual_block(t, g.rb[2]);
  t = residual_attention_block(t, g.attn_b);

  t = residual_block(t, g.rb[3]);
  t = conv2d_transpose(t, g.stage[3].kernel, g.stage[3].bias, 2, pad);
  return clamp(t, 0.0, 1.0);
}

Tensor hyper_analysis(const Tensor& y, const CodecModel& m) {
  check_shape(y.defined() && y.rank() == 4 &&
                  y.dim(1) == m.arch().latent_channels,
              "hyper_analysis: latent channel mismatch");
  check_shape(y.dim(2) % 4 == 0 && y.dim(3) % 4 == 0,
              "hyper_analysis: latent extents must be divisible by 4");
  const HyperAnalysisParams& h = m.ha();
  Tensor t = conv2d(y, h.c1.kernel, h.c1.bias, 2,
                    (m.arch().hyper_kernel_a - 1) / 2);
  t = relu(t);
  return conv2d(t, h.c2.kernel, h.c2.bias, 2,
                (m.arch().hyper_kernel_b - 1) / 2);
}

Tensor hyper_synthesis(const Tensor& z_hat, const CodecModel& m) {
  check_shape(z_hat.defined() && z_hat.rank() == 4 &&
                  z_hat.dim(1) == m.arch().hyper_channels,
              "hyper_synthesis: hyper channel mismatch");
  const HyperSynthesisParams& h = m.hs();
  const int pad = (m.arch().dec_kernel - 2) / 2;
  Tensor t = conv2d_transpose(z_hat, h.d1.kernel, h.d1.bias, 2, pad);
  t = relu(t);
  return conv2d_transpose(t, h.d2.kernel, h.d2.bias, 2, pad);
}

Tensor discriminator_forward(const Tensor& x_in, const Tensor& y,
                             const CodecModel& m) {
  check_shape(x_in.defined() && x_in.rank() == 4 && x_in.dim(1) == 1,
              "discriminator_forward: expected [N,1,H,W] image");
  check_shape(y.defined() && y.rank() == 4 &&
                  y.dim(1) == m.arch().latent_channels &&
                  y.dim(0) == x_in.dim(0) && y.dim(2) * 16 == x_in.dim(2) &&
                  y.dim(3) * 16 == x_in.dim(3),
              "discriminator_forward: latent does not match image geometry");
  const DiscriminatorParams& d = m.disc();
  const int pad = (m.arch().disc_kernel - 1) / 2;
  constexpr double kSlope = 0.2;

  Tensor cond = conv2d(y, d.cond_proj.kernel, d.cond_proj.bias, 1, 0);
  Tensor up = upsample_nearest(cond, 16);
  std::array<Tensor, 2> both = {x_in, up};
  Tensor t = concat_channels(both);
  t = leaky_relu(conv2d(t, d.stage[0].kernel, d.stage[0].bias, 2, pad),
                 kSlope);
  t = leaky_relu(conv2d(t, d.stage[1].kernel, d.stage[1].bias, 2, pad),
                 kSlope);
  t = leaky_relu(conv2d(t, d.stage[2].kernel, d.stage[2].bias, 2, pad),
                 kSlope);
  return sigmoid(conv2d(t, d.stage[3].kernel, d.stage[3].bias, 2, pad));
}

}  // namespace hp
