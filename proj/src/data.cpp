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

#include "heliopress/data.hpp"

#include "heliopress/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hp {

namespace {

// PGM header tokens, skipping whitespace and '#' comments.
class PgmScanner {
 public:
  explicit PgmScanner(std::span<const uint8_t> b) : b_(b) {}

  std::string token() {
    skip_space_and_comments();
    std::string t;
    while (pos_ < b_.size() && !std::isspace(b_[pos_])) {
      t.push_back(char(b_[pos_++]));
    }
    if (t.empty()) throw IoError("PGM: truncated header");
    return t;
  }

  int token_int() {
    const std::string t = token();
    try {
      return std::stoi(t);
    } catch (const std::exception&) {
      throw IoError("PGM: bad header integer '" + t + "'");
    }
  }

  // Consumes the single whitespace byte that terminates the header.
  size_t data_offset() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
      throw IoError("PGM: missing header terminator");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

}  // namespace

Tensor parse_pgm(std::span<const uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw IoError("not a P5 PGM file");
  PgmScanner s(bytes.subspan(2));
  const int w = s.token_int();
  const int h = s.token_int();
  const int maxval = s.token_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw IoError("PGM: bad dimensions or maxval");
  const size_t offset = 2 + s.data_offset();
  const int bytes_per = maxval > 255 ? 2 : 1;
  const size_t need = size_t(w) * size_t(h) * size_t(bytes_per);
  if (bytes.size() < offset + need) throw IoError("PGM: truncated pixel data");

  Tensor img = Tensor::zeros({1, 1, h, w});
  double* d = img.value_mut().data();
  const uint8_t* p = bytes.data() + offset;
  const double inv = 1.0 / double(maxval);
  for (int64_t i = 0; i < int64_t(w) * h; ++i) {
    uint32_t v = bytes_per == 2 ? (uint32_t(p[2 * i]) << 8) | p[2 * i + 1]
                                : p[i];
    d[i] = double(v) * inv;
  }
  return img;
}

Tensor read_pgm(const std::string& path) { return parse_pgm(read_file(path)); }

std::vector<uint8_t> serialize_pgm(const Tensor& img) {
  check_shape(img.defined() && img.rank() == 4 && img.dim(0) == 1 &&
                  img.dim(1) == 1,
              "serialize_pgm: expected [1,1,H,W]");
  const int64_t h = img.dim(2), w = img.dim(3);
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) +
                       "\n65535\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + size_t(2 * h * w));
  for (double v : img.value()) {
    const double c = std::min(std::max(v, 0.0), 1.0);
    const uint32_t q = uint32_t(std::lround(c * 65535.0));
    out.push_back(uint8_t(q >> 8));
    out.push_back(uint8_t(q & 0xFF));
  }
  return out;
}

void write_pgm(const std::string& path, const Tensor& img) {
  atomic_write_file(path, serialize_pgm(img));
}

Tensor read_sdt(const std::string& path) {
  std::vector<uint8_t> b = read_file(path);
  if (b.size() < 5 || std::memcmp(b.data(), "SDT1", 4) != 0)
    throw IoError("not an SDT file");
  size_t pos = 4;
  const int rank = b[pos++];
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    if (pos + 4 > b.size()) throw IoError("SDT: truncated extents");
    uint32_t e = 0;
    for (int k = 0; k < 4; ++k) e |= uint32_t(b[pos++]) << (8 * k);
    shape.push_back(int64_t(e));
  }
  const int64_t n = shape_numel(shape);
  if (pos + size_t(n) * 8 != b.size()) throw IoError("SDT: size mismatch");
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    uint64_t x = 0;
    for (int k = 0; k < 8; ++k) x |= uint64_t(b[pos++]) << (8 * k);
    std::memcpy(&data[size_t(i)], &x, 8);
  }
  return Tensor::from_vector(std::move(shape), std::move(data));
}

void write_sdt(const std::string& path, const Tensor& t) {
  std::vector<uint8_t> out = {'S', 'D', 'T', '1'};
  out.push_back(uint8_t(t.rank()));
  for (int i = 0; i < t.rank(); ++i) {
    const uint32_t e = uint32_t(t.dim(i));
    for (int k = 0; k < 4; ++k) out.push_back(uint8_t(e >> (8 * k)));
  }
  for (double v : t.value()) {
    uint64_t x;
    std::memcpy(&x, &v, 8);
    for (int k = 0; k < 8; ++k) out.push_back(uint8_t(x >> (8 * k)));
  }
  atomic_write_file(path, out);
}

Tensor read_image(const std::string& path) {
  std::vector<uint8_t> b = read_file(path);
  if (b.size() >= 2 && b[0] == 'P' && b[1] == '5') return parse_pgm(b);
  if (b.size() >= 4 && std::memcmp(b.data(), "SDT1", 4) == 0) {
    // Re-read through the SDT path for shape validation.
    Tensor t = read_sdt(path);
    if (t.rank() == 2) {
      return reshape(t, {1, 1, t.dim(0), t.dim(1)});
    }
    check_shape(t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1,
                "read_image: SDT tensor is not a single grayscale image");
    return t;
  }
  throw IoError("unrecognized image format: " + path);
}

MonthSplit month_split(std::span<const DatasetRecord> records) {
  MonthSplit out;
  std::vector<std::pair<std::string, Timestamp>> train, test;
  for (const DatasetRecord& r : records) {
    Timestamp ts;
    bool ok = r.timestamp_text.empty()
                  ? parse_dataset_filename(r.path, &ts)
                  : parse_timestamp(r.timestamp_text, &ts);
    if (!ok) {
      out.warnings.push_back("unparseable timestamp: " + r.path);
      continue;
    }
    if (ts.month <= 8) {
      train.emplace_back(r.path, ts);
    } else {
      test.emplace_back(r.path, ts);
    }
  }
  auto order = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  };
  std::sort(train.begin(), train.end(), order);
  std::sort(test.begin(), test.end(), order);
  out.train.records = std::move(train);
  out.test.records = std::move(test);
  return out;
}

std::vector<DatasetRecord> scan_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<DatasetRecord> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".pgm") {
      out.push_back(DatasetRecord{e.path().string(), ""});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

std::vector<DatasetRecord> read_manifest_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    std::string p = comma == std::string::npos ? line : line.substr(0, comma);
    std::string t = comma == std::string::npos ? "" : line.substr(comma + 1);
    if (first && p == "path") {  // header row
      first = false;
      continue;
    }
    first = false;
    out.push_back(DatasetRecord{p, t});
  }
  return out;
}

namespace {

double smoothstep(double t) {
  t = std::min(std::max(t, 0.0), 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Tensor synthetic_sun_image(uint64_t seed, int64_t index, int size) {
  check(size >= 8, "synthetic_sun: size too small");
  Rng rng(mix_seed(seed, uint64_t(index)));

  // Low-frequency background: a coarse value grid, cosine-interpolated.
  const int grid = 6;
  const double bg_amp = rng.uniform(0.01, 0.05);
  std::vector<double> nodes(size_t(grid * grid));
  for (double& v : nodes) v = rng.uniform(0.0, 1.0);

  const double cx = double(size) * (0.5 + rng.uniform(-0.03, 0.03));
  const double cy = double(size) * (0.5 + rng.uniform(-0.03, 0.03));
  const double radius = rng.uniform(0.35, 0.45) * double(size);
  const double i0 = rng.uniform(0.55, 0.9);
  const double limb_u = rng.uniform(0.4, 0.8);

  struct Blob {
    double x, y, sigma, amp;
  };
  const int n_blobs = int(rng.uniform_int(0, 5));
  std::vector<Blob> blobs;
  for (int b = 0; b < n_blobs; ++b) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double rad = rng.uniform(0.0, 0.8 * radius);
    Blob bl;
    bl.x = cx + rad * std::cos(ang);
    bl.y = cy + rad * std::sin(ang);
    bl.sigma = rng.uniform(0.01, 0.04) * double(size);
    bl.amp = rng.uniform(0.1, 0.3);
    blobs.push_back(bl);
  }
  const double shot_scale = rng.uniform(0.004, 0.015);

  Tensor img = Tensor::zeros({1, 1, size, size});
  double* d = img.value_mut().data();
  const double cell = double(size) / double(grid - 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // Background.
      const double gx = std::min(double(x) / cell, double(grid - 1) - 1e-9);
      const double gy = std::min(double(y) / cell, double(grid - 1) - 1e-9);
      const int ix = int(gx), iy = int(gy);
      const double fx = smoothstep(gx - ix), fy = smoothstep(gy - iy);
      const double v00 = nodes[size_t(iy * grid + ix)];
      const double v01 = nodes[size_t(iy * grid + ix + 1)];
      const double v10 = nodes[size_t((iy + 1) * grid + ix)];
      const double v11 = nodes[size_t((iy + 1) * grid + ix + 1)];
      double v = bg_amp * ((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                           (v10 * (1 - fx) + v11 * fx) * fy);

      // Limb-darkened disk: I(r) = I0 (1 - u (1 - cos theta)).
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double r = std::sqrt(dx * dx + dy * dy);
      if (r < radius + 1.5) {
        const double rr = std::min(r / radius, 1.0);
        const double cos_theta = std::sqrt(std::max(1.0 - rr * rr, 0.0));
        const double edge = smoothstep((radius + 1.5 - r) / 3.0);
        v += edge * i0 * (1.0 - limb_u * (1.0 - cos_theta));
      }

      // Active-region proxies.
      for (const Blob& b : blobs) {
        const double bx = double(x) - b.x, by = double(y) - b.y;
        v += b.amp * std::exp(-(bx * bx + by * by) / (2.0 * b.sigma * b.sigma));
      }
      d[y * size + x] = v;
    }
  }

  // Intensity-scaled shot noise, then clamp into [0,1].
  for (int64_t i = 0; i < img.numel(); ++i) {
    const double base = std::max(d[i], 0.0);
    d[i] += std::sqrt(base) * shot_scale * rng.normal();
    d[i] = std::min(std::max(d[i], 0.0), 1.0);
  }
  return img;
}

std::vector<Tensor> synthetic_sun(uint64_t seed, int size, int count) {
  std::vector<Tensor> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(synthetic_sun_image(seed, i, size));
  }
  return out;
}

Tensor random_crop(const Tensor& image, int crop, Rng& rng) {
  check_shape(image.defined() && image.rank() == 4,
              "random_crop: expected [N,C,H,W]");
  const int64_t H = image.dim(2), W = image.dim(3);
  check(crop >= 1 && crop <= H && crop <= W,
        "random_crop: crop exceeds image extents");
  const int64_t oy = rng.uniform_int(0, H - crop);  // row offset first
  const int64_t ox = rng.uniform_int(0, W - crop);
  const int64_t N = image.dim(0), C = image.dim(1);
  Tensor out = Tensor::zeros({N, C, crop, crop});
  const double* src = image.value().data();
  double* dst = out.value_mut().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    for (int64_t y = 0; y < crop; ++y) {
      std::memcpy(dst + (nc * crop + y) * crop,
                  src + (nc * H + oy + y) * W + ox,
                  size_t(crop) * sizeof(double));
    }
  }
  return out;
}

}  // namespace hp
