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

#include "heliopress/codec.hpp"

#include <cmath>
#include <cstring>

#include "heliopress/util.hpp"

namespace hp {

namespace {

void push_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t(x >> (8 * i)));
}
void push_u64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(uint8_t(x >> (8 * i)));
}
uint32_t read_u32(const uint8_t* p) {
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= uint32_t(p[i]) << (8 * i);
  return x;
}
uint64_t read_u64(const uint8_t* p) {
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= uint64_t(p[i]) << (8 * i);
  return x;
}

}  // namespace

std::vector<uint8_t> serialize_bitstream(const Bitstream& bs) {
  std::vector<uint8_t> out = {'S', 'D', 'O', 'C'};
  out.push_back(1);  // version
  push_u64(out, bs.model_digest);
  push_u32(out, bs.orig_width);
  push_u32(out, bs.orig_height);
  push_u32(out, bs.padded_width);
  push_u32(out, bs.padded_height);
  push_u32(out, uint32_t(bs.z_bytes.size()));
  push_u32(out, uint32_t(bs.y_bytes.size()));
  std::vector<uint8_t> payload;
  payload.reserve(bs.z_bytes.size() + bs.y_bytes.size());
  payload.insert(payload.end(), bs.z_bytes.begin(), bs.z_bytes.end());
  payload.insert(payload.end(), bs.y_bytes.begin(), bs.y_bytes.end());
  push_u32(out, crc32(payload));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bitstream parse_bitstream(std::span<const uint8_t> bytes) {
  if (bytes.size() < Bitstream::kHeaderBytes ||
      std::memcmp(bytes.data(), "SDOC", 4) != 0) {
    throw DecodeError("not an SDC bitstream");
  }
  if (bytes[4] != 1) throw DecodeError("unsupported SDC version");
  Bitstream bs;
  const uint8_t* p = bytes.data() + 5;
  bs.model_digest = read_u64(p);
  p += 8;
  bs.orig_width = read_u32(p);
  bs.orig_height = read_u32(p + 4);
  bs.padded_width = read_u32(p + 8);
  bs.padded_height = read_u32(p + 12);
  const uint32_t z_len = read_u32(p + 16);
  const uint32_t y_len = read_u32(p + 20);
  const uint32_t stored_crc = read_u32(p + 24);
  if (bytes.size() != Bitstream::kHeaderBytes + size_t(z_len) + y_len)
    throw DecodeError("SDC section lengths disagree with stream size");
  auto payload = bytes.subspan(Bitstream::kHeaderBytes);
  if (crc32(payload) != stored_crc)
    throw DecodeError("SDC payload CRC mismatch");
  bs.z_bytes.assign(payload.begin(), payload.begin() + z_len);
  bs.y_bytes.assign(payload.begin() + z_len, payload.end());
  return bs;
}

void write_bitstream(const std::string& path, const Bitstream& bs) {
  atomic_write_file(path, serialize_bitstream(bs));
}

Bitstream read_bitstream(const std::string& path) {
  return parse_bitstream(read_file(path));
}

Tensor pad_to_multiple(const Tensor& img, int multiple) {
  check_shape(img.defined() && img.rank() == 4 && img.dim(0) == 1 &&
                  img.dim(1) == 1,
              "pad_to_multiple: expected [1,1,H,W]");
  check(multiple >= 1, "pad_to_multiple: bad multiple");
  const int64_t H = img.dim(2), W = img.dim(3);
  const int64_t PH = (H + multiple - 1) / multiple * multiple;
  const int64_t PW = (W + multiple - 1) / multiple * multiple;
  if (PH == H && PW == W) return img;
  Tensor out = Tensor::zeros({1, 1, PH, PW});
  const double* src = img.value().data();
  double* dst = out.value_mut().data();
  for (int64_t h = 0; h < PH; ++h) {
    const int64_t sh = std::min(h, H - 1);
    for (int64_t w = 0; w < PW; ++w) {
      dst[h * PW + w] = src[sh * W + std::min(w, W - 1)];
    }
  }
  return out;
}

Tensor crop_spatial(const Tensor& img, int64_t height, int64_t width) {
  check_shape(img.defined() && img.rank() == 4,
              "crop_spatial: expected rank-4");
  const int64_t N = img.dim(0), C = img.dim(1), H = img.dim(2),
                W = img.dim(3);
  check_shape(height <= H && width <= W, "crop_spatial: crop exceeds image");
  if (height == H && width == W) return img;
  Tensor out = Tensor::zeros({N, C, height, width});
  const double* src = img.value().data();
  double* dst = out.value_mut().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    for (int64_t h = 0; h < height; ++h) {
      std::memcpy(dst + (nc * height + h) * width,
                  src + (nc * H + h) * W, size_t(width) * sizeof(double));
    }
  }
  return out;
}

namespace {

std::vector<CdfTable> z_channel_tables(const CodecModel& m) {
  GradPause pause;
  GaussianParams zp = z_prior_params(m);
  const int64_t C = m.arch().hyper_channels;
  std::vector<CdfTable> tables;
  tables.reserve(size_t(C));
  for (int64_t c = 0; c < C; ++c) {
    tables.push_back(build_cdf(zp.mu.value()[size_t(c)],
                               zp.sigma.value()[size_t(c)]));
  }
  return tables;
}

}  // namespace

Bitstream compress_image(const CodecModel& m, const Tensor& x) {
  check_shape(x.defined() && x.rank() == 4 && x.dim(0) == 1 && x.dim(1) == 1,
              "compress_image: expected [1,1,H,W]");
  GradPause pause;
  const int64_t H = x.dim(2), W = x.dim(3);
  Tensor padded = pad_to_multiple(x, 64);
  const int64_t PH = padded.dim(2), PW = padded.dim(3);

  Tensor y = analysis_transform(padded, m);
  Tensor z = hyper_analysis(y, m);
  Tensor z_hat = quantize_round(z);

  // Hyper-latent stream under the per-channel prior, row-major (c, h, w).
  std::vector<CdfTable> ztab = z_channel_tables(m);
  RansEncoder zenc;
  {
    const int64_t C = z_hat.dim(1), hw = z_hat.dim(2) * z_hat.dim(3);
    const double* pz = z_hat.value().data();
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t i = 0; i < hw; ++i) {
        zenc.put(int(pz[c * hw + i]), ztab[size_t(c)]);
      }
    }
  }

  // Latent slices in decode order; conditioning sees the rounded earlier
  // slices so encoder and decoder derive bit-identical (mu, sigma).
  Tensor ctx = hyper_synthesis(z_hat, m);
  std::vector<Tensor> y_slices = split_slices(y, m.arch());
  std::vector<Tensor> rounded;
  RansEncoder yenc;
  for (int i = 0; i < m.arch().n_slices; ++i) {
    GaussianParams gp = slice_conditioning(ctx, rounded, m, i);
    Tensor q = quantize_round(y_slices[size_t(i)]);
    const double* pq = q.value().data();
    const double* pmu = gp.mu.value().data();
    const double* psig = gp.sigma.value().data();
    for (int64_t j = 0; j < q.numel(); ++j) {
      yenc.put(int(pq[j]), build_cdf(pmu[j], psig[j]));
    }
    rounded.push_back(q);
  }

  Bitstream bs;
  bs.model_digest = m.digest();
  bs.orig_width = uint32_t(W);
  bs.orig_height = uint32_t(H);
  bs.padded_width = uint32_t(PW);
  bs.padded_height = uint32_t(PH);
  bs.z_bytes = zenc.finish();
  bs.y_bytes = yenc.finish();
  return bs;
}

Tensor decompress_image(const CodecModel& m, const Bitstream& bs) {
  if (bs.model_digest != m.digest()) {
    throw WrongModelError("bitstream was produced by a different model");
  }
  check_shape(bs.padded_width % 64 == 0 && bs.padded_height % 64 == 0 &&
                  bs.padded_width >= bs.orig_width &&
                  bs.padded_height >= bs.orig_height,
              "decompress_image: inconsistent header extents");
  GradPause pause;
  const ArchConfig& a = m.arch();
  const int64_t zh = bs.padded_height / 64, zw = bs.padded_width / 64;

  std::vector<CdfTable> ztab = z_channel_tables(m);
  Tensor z_hat = Tensor::zeros({1, a.hyper_channels, zh, zw});
  {
    RansDecoder dec(bs.z_bytes);
    double* pz = z_hat.value_mut().data();
    const int64_t hw = zh * zw;
    for (int64_t c = 0; c < a.hyper_channels; ++c) {
      for (int64_t i = 0; i < hw; ++i) {
        pz[c * hw + i] = double(dec.get(ztab[size_t(c)]));
      }
    }
    dec.finish();
  }

  Tensor ctx = hyper_synthesis(z_hat, m);
  std::vector<Tensor> slices;
  {
    RansDecoder dec(bs.y_bytes);
    const int64_t sc = a.slice_channels();
    const int64_t lh = bs.padded_height / 16, lw = bs.padded_width / 16;
    for (int i = 0; i < a.n_slices; ++i) {
      GaussianParams gp = slice_conditioning(ctx, slices, m, i);
      Tensor s = Tensor::zeros({1, sc, lh, lw});
      double* ps = s.value_mut().data();
      const double* pmu = gp.mu.value().data();
      const double* psig = gp.sigma.value().data();
      for (int64_t j = 0; j < s.numel(); ++j) {
        ps[j] = double(dec.get(build_cdf(pmu[j], psig[j])));
      }
      slices.push_back(s);
    }
    dec.finish();
  }

  Tensor y_hat = concat_channels(slices);
  Tensor recon = synthesis_transform(y_hat, m);
  return crop_spatial(recon, bs.orig_height, bs.orig_width);
}

EvalResult eval_forward(const CodecModel& m, const Tensor& padded) {
  check_shape(padded.defined() && padded.rank() == 4 &&
                  padded.dim(2) % 64 == 0 && padded.dim(3) % 64 == 0,
              "eval_forward: extents must be divisible by 64");
  GradPause pause;
  EvalResult r;
  r.latents.y = analysis_transform(padded, m);
  r.latents.z = hyper_analysis(r.latents.y, m);
  r.latents.z_hat = quantize_round(r.latents.z);

  Tensor ctx = hyper_synthesis(r.latents.z_hat, m);
  std::vector<Tensor> y_slices = split_slices(r.latents.y, m.arch());
  std::vector<Tensor> rounded;
  std::vector<Tensor> likelihoods;
  for (int i = 0; i < m.arch().n_slices; ++i) {
    GaussianParams gp = slice_conditioning(ctx, rounded, m, i);
    Tensor q = quantize_round(y_slices[size_t(i)]);
    likelihoods.push_back(gaussian_likelihood(q, gp, /*absorb_tails=*/true));
    rounded.push_back(q);
  }
  likelihoods.push_back(
      z_likelihood(r.latents.z_hat, m, /*absorb_tails=*/true));

  r.latents.y_hat = concat_channels(rounded);
  r.recon = synthesis_transform(r.latents.y_hat, m);
  r.rate_bits = rate_bits(likelihoods).item();
  return r;
}

}  // namespace hp
