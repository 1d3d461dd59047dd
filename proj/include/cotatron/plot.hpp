// Copyright 2026 The Cotatron C++ Authors. All rights reserved.
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

#pragma once

// Minimal PNG writer for heatmaps. Pixels go out as stored (uncompressed)
// deflate blocks, which every decoder accepts and which keeps this file
// dependency-free; alignment plots are tiny, so size is irrelevant.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "cotatron/audio_io.hpp"
#include "cotatron/tensor.hpp"

namespace cota {

namespace detail {

inline std::uint32_t crc32_png(const std::uint8_t* data, std::size_t n,
                               std::uint32_t crc = 0xffffffffu) {
  static const auto table = [] {
    std::vector<std::uint32_t> t(256);
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc;
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char* type,
                      const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc =
      crc32_png(out.data() + crc_start, out.size() - crc_start) ^ 0xffffffffu;
  put_be32(out, crc);
}

// zlib wrapper around stored deflate blocks
inline std::vector<std::uint8_t> zlib_stored(const std::vector<std::uint8_t>& raw) {
  std::vector<std::uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t pos = 0;
  do {
    std::size_t n = std::min<std::size_t>(raw.size() - pos, 65535);
    bool final = pos + n == raw.size();
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<std::uint8_t>(n & 0xff));
    z.push_back(static_cast<std::uint8_t>(n >> 8));
    z.push_back(static_cast<std::uint8_t>(~n & 0xff));
    z.push_back(static_cast<std::uint8_t>((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
             raw.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  } while (pos < raw.size());
  std::uint32_t a = 1, b = 0;
  for (std::uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  put_be32(z, (b << 16) | a);
  return z;
}

// Dark blue through violet to yellow, three linear stops.
inline void heat_color(double v, std::uint8_t* rgb) {
  v = std::min(1.0, std::max(0.0, v));
  double r, g, b;
  if (v < 0.5) {
    double a = v / 0.5;
    r = 10.0 + a * (170.0 - 10.0);
    g = 12.0 + a * (40.0 - 12.0);
    b = 80.0 + a * (120.0 - 80.0);
  } else {
    double a = (v - 0.5) / 0.5;
    r = 170.0 + a * (250.0 - 170.0);
    g = 40.0 + a * (225.0 - 40.0);
    b = 120.0 + a * (40.0 - 120.0);
  }
  rgb[0] = static_cast<std::uint8_t>(r);
  rgb[1] = static_cast<std::uint8_t>(g);
  rgb[2] = static_cast<std::uint8_t>(b);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png_rgb(const std::vector<std::uint8_t>& pixels,
                                                std::int64_t width, std::int64_t height) {
  COTA_CHECK(width > 0 && height > 0 &&
                 static_cast<std::int64_t>(pixels.size()) == width * height * 3,
             "png: pixel buffer does not match ", width, "x", height);
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height * (1 + width * 3)));
  for (std::int64_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    const std::uint8_t* row = pixels.data() + y * width * 3;
    raw.insert(raw.end(), row, row + width * 3);
  }

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", detail::zlib_stored(raw));
  detail::png_chunk(out, "IEND", {});
  return out;
}

// Renders a matrix as a heatmap, rows bottom-up so row 0 sits at the lower
// edge like an axis origin. `cell` scales each matrix entry to a square of
// pixels.
inline void write_heatmap_png(const Tensor& m, const std::string& path, int cell = 4) {
  COTA_CHECK(m.rank() == 2 && m.dim(0) > 0 && m.dim(1) > 0, "heatmap: want a matrix");
  COTA_CHECK(cell >= 1 && cell <= 64, "heatmap: cell size 1..64");
  double lo = m.data[0], hi = m.data[0];
  for (double v : m.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span = hi - lo;
  if (span <= 0.0) span = 1.0;

  std::int64_t rows = m.dim(0), cols = m.dim(1);
  std::int64_t W = cols * cell, H = rows * cell;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W * H * 3));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      std::uint8_t rgb[3];
      detail::heat_color((m.at(r, c) - lo) / span, rgb);
      for (int dy = 0; dy < cell; ++dy)
        for (int dx = 0; dx < cell; ++dx) {
          std::int64_t y = (rows - 1 - r) * cell + dy;
          std::int64_t x = c * cell + dx;
          std::uint8_t* p = px.data() + (y * W + x) * 3;
          p[0] = rgb[0];
          p[1] = rgb[1];
          p[2] = rgb[2];
        }
    }
  write_file_bytes(path, encode_png_rgb(px, W, H));
}

// Alignment comes in as [frames, symbols]; the plot puts symbols on the
// vertical axis and frames on the horizontal one.
inline void write_alignment_png(const Tensor& alignment, const std::string& path,
                                int cell = 3) {
  COTA_CHECK(alignment.rank() == 2, "alignment plot: want [frames, symbols]");
  std::int64_t T = alignment.dim(0), N = alignment.dim(1);
  Tensor flipped({N, T});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t n = 0; n < N; ++n) flipped.at(n, t) = alignment.at(t, n);
  write_heatmap_png(flipped, path, cell);
}

}  // namespace cota
