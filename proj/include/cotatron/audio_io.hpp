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

// Audio file handling: WAV (PCM and IEEE float) in both directions, a
// decode-only FLAC reader covering the subframe types real encoders emit,
// a rational windowed-sinc resampler, and the canonicalizing loader that
// the rest of the pipeline builds on (22.05 kHz mono, peak 0.95).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cotatron/common.hpp"

namespace cota {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  COTA_CHECK_IO(f.good(), "cannot open file: ", path);
  f.seekg(0, std::ios::end);
  std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  COTA_CHECK_IO(f.good(), "short read: ", path);
  return buf;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  COTA_CHECK_IO(f.good(), "cannot open file for writing: ", path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  COTA_CHECK_IO(f.good(), "short write: ", path);
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t rd_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32le(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}
inline void wr_u16le(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace detail

// Multi-channel audio is averaged down to mono.
inline Waveform read_wav(const std::string& path) {
  auto buf = read_file_bytes(path);
  COTA_CHECK_IO(buf.size() >= 44 && std::memcmp(buf.data(), "RIFF", 4) == 0 &&
                    std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
                "not a RIFF/WAVE file: ", path);
  std::size_t pos = 12;
  int fmt = 0, channels = 0, bits = 0, rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= buf.size()) {
    const std::uint8_t* ch = buf.data() + pos;
    std::uint32_t len = detail::rd_u32le(ch + 4);
    const std::uint8_t* body = ch + 8;
    COTA_CHECK_IO(pos + 8 + len <= buf.size(), "truncated WAV chunk: ", path);
    if (std::memcmp(ch, "fmt ", 4) == 0) {
      COTA_CHECK_IO(len >= 16, "malformed fmt chunk: ", path);
      fmt = detail::rd_u16le(body);
      channels = detail::rd_u16le(body + 2);
      rate = static_cast<int>(detail::rd_u32le(body + 4));
      bits = detail::rd_u16le(body + 14);
      if (fmt == 0xFFFE && len >= 40)  // WAVE_FORMAT_EXTENSIBLE
        fmt = detail::rd_u16le(body + 24);
    } else if (std::memcmp(ch, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);  // chunks are word-aligned
  }
  COTA_CHECK_IO(data && channels > 0 && rate > 0, "missing fmt/data chunk: ", path);
  COTA_CHECK_IO(fmt == 1 || fmt == 3, "unsupported WAV format tag ", fmt, ": ", path);

  std::size_t bytes_per = static_cast<std::size_t>(bits) / 8;
  COTA_CHECK_IO(bytes_per >= 1 && bits % 8 == 0, "unsupported bit depth ", bits);
  std::size_t n_total = data_len / (bytes_per * static_cast<std::size_t>(channels));
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n_total);
  for (std::size_t i = 0; i < n_total; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::uint8_t* p =
          data + (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) *
                     bytes_per;
      double v = 0.0;
      if (fmt == 1) {
        if (bits == 8) {
          v = (static_cast<int>(p[0]) - 128) / 128.0;
        } else if (bits == 16) {
          std::int16_t s = static_cast<std::int16_t>(detail::rd_u16le(p));
          v = s / 32768.0;
        } else if (bits == 24) {
          std::int32_t s = static_cast<std::int32_t>(
              (static_cast<std::uint32_t>(p[0]) << 8) |
              (static_cast<std::uint32_t>(p[1]) << 16) |
              (static_cast<std::uint32_t>(p[2]) << 24));
          v = (s >> 8) / 8388608.0;
        } else if (bits == 32) {
          std::int32_t s = static_cast<std::int32_t>(detail::rd_u32le(p));
          v = s / 2147483648.0;
        } else {
          COTA_CHECK_IO(false, "unsupported PCM bit depth ", bits);
        }
      } else {  // IEEE float
        if (bits == 32) {
          float fv;
          std::uint32_t u = detail::rd_u32le(p);
          std::memcpy(&fv, &u, 4);
          v = fv;
        } else if (bits == 64) {
          double dv;
          std::uint64_t u = static_cast<std::uint64_t>(detail::rd_u32le(p)) |
                            (static_cast<std::uint64_t>(detail::rd_u32le(p + 4)) << 32);
          std::memcpy(&dv, &u, 8);
          v = dv;
        } else {
          COTA_CHECK_IO(false, "unsupported float bit depth ", bits);
        }
      }
      acc += v;
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

namespace detail {
inline void write_wav_header(std::vector<std::uint8_t>& out, int rate, int bits,
                             int fmt, std::size_t n) {
  std::size_t bytes = n * static_cast<std::size_t>(bits / 8);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  wr_u32le(out, static_cast<std::uint32_t>(36 + bytes));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr_u32le(out, 16);
  wr_u16le(out, static_cast<std::uint16_t>(fmt));
  wr_u16le(out, 1);  // mono
  wr_u32le(out, static_cast<std::uint32_t>(rate));
  wr_u32le(out, static_cast<std::uint32_t>(rate * bits / 8));
  wr_u16le(out, static_cast<std::uint16_t>(bits / 8));
  wr_u16le(out, static_cast<std::uint16_t>(bits));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  wr_u32le(out, static_cast<std::uint32_t>(bytes));
}
}  // namespace detail

inline void write_wav16(const std::string& path, const Waveform& w) {
  std::vector<std::uint8_t> out;
  detail::write_wav_header(out, w.sample_rate, 16, 1, w.samples.size());
  for (double s : w.samples) {
    long q = std::lrint(std::clamp(s, -1.0, 1.0) * 32768.0);
    q = std::clamp<long>(q, -32768, 32767);
    detail::wr_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  write_file_bytes(path, out);
}

inline void write_wav_f32(const std::string& path, const Waveform& w) {
  std::vector<std::uint8_t> out;
  detail::write_wav_header(out, w.sample_rate, 32, 3, w.samples.size());
  for (double s : w.samples) {
    float f = static_cast<float>(s);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    detail::wr_u32le(out, u);
  }
  write_file_bytes(path, out);
}

// ---------------------------------------------------------------------------
// FLAC (decode only)
// ---------------------------------------------------------------------------

namespace flac {

struct BitReader {
  const std::uint8_t* p;
  std::size_t nbytes;
  std::size_t bit = 0;  // absolute bit position, MSB-first

  bool eof() const { return bit >= nbytes * 8; }
  std::size_t byte_pos() const { return bit / 8; }

  std::uint64_t ubits(int k) {
    std::uint64_t v = 0;
    for (int i = 0; i < k; ++i) {
      COTA_CHECK_IO(bit < nbytes * 8, "flac: bitstream overrun");
      std::size_t by = bit / 8, off = bit % 8;
      v = (v << 1) | ((p[by] >> (7 - off)) & 1);
      ++bit;
    }
    return v;
  }

  std::int64_t sbits(int k) {
    std::uint64_t v = ubits(k);
    if (k > 0 && (v & (1ull << (k - 1))))
      return static_cast<std::int64_t>(v) - (1ll << k);
    return static_cast<std::int64_t>(v);
  }

  std::uint64_t unary() {
    std::uint64_t q = 0;
    while (ubits(1) == 0) ++q;
    return q;
  }

  void align() { bit = (bit + 7) / 8 * 8; }
};

inline std::uint8_t crc8(const std::uint8_t* p, std::size_t n) {
  std::uint8_t c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    c ^= p[i];
    for (int b = 0; b < 8; ++b) c = (c & 0x80) ? static_cast<std::uint8_t>((c << 1) ^ 0x07) : static_cast<std::uint8_t>(c << 1);
  }
  return c;
}

inline std::uint16_t crc16(const std::uint8_t* p, std::size_t n) {
  std::uint16_t c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    c ^= static_cast<std::uint16_t>(p[i]) << 8;
    for (int b = 0; b < 8; ++b)
      c = (c & 0x8000) ? static_cast<std::uint16_t>((c << 1) ^ 0x8005)
                       : static_cast<std::uint16_t>(c << 1);
  }
  return c;
}

struct StreamInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  std::uint64_t total_samples = 0;
};

inline std::uint64_t read_coded_number(BitReader& br) {
  std::uint64_t b0 = br.ubits(8);
  if (b0 < 0x80) return b0;
  int ones = 0;
  for (int i = 7; i >= 0 && ((b0 >> i) & 1); --i) ++ones;
  COTA_CHECK_IO(ones >= 2 && ones <= 7, "flac: bad coded number");
  int extra = ones - 1;
  std::uint64_t v = b0 & (0x7Full >> ones);
  for (int i = 0; i < extra; ++i) {
    std::uint64_t b = br.ubits(8);
    COTA_CHECK_IO((b & 0xC0) == 0x80, "flac: bad coded number continuation");
    v = (v << 6) | (b & 0x3F);
  }
  return v;
}

inline void decode_residual(BitReader& br, int order, int blocksize,
                            std::vector<std::int64_t>& res) {
  int method = static_cast<int>(br.ubits(2));
  COTA_CHECK_IO(method == 0 || method == 1, "flac: unknown residual method");
  int pbits = method == 0 ? 4 : 5;
  int escape = method == 0 ? 0xF : 0x1F;
  int po = static_cast<int>(br.ubits(4));
  int parts = 1 << po;
  COTA_CHECK_IO(blocksize % parts == 0, "flac: partition size mismatch");
  res.clear();
  res.reserve(static_cast<std::size_t>(blocksize - order));
  for (int pi = 0; pi < parts; ++pi) {
    int count = blocksize / parts - (pi == 0 ? order : 0);
    COTA_CHECK_IO(count >= 0, "flac: negative partition count");
    int rp = static_cast<int>(br.ubits(pbits));
    if (rp == escape) {
      int raw = static_cast<int>(br.ubits(5));
      for (int i = 0; i < count; ++i) res.push_back(raw == 0 ? 0 : br.sbits(raw));
    } else {
      for (int i = 0; i < count; ++i) {
        std::uint64_t q = br.unary();
        std::uint64_t low = rp == 0 ? 0 : br.ubits(rp);
        std::uint64_t u = (q << rp) | low;
        res.push_back(static_cast<std::int64_t>(u >> 1) ^
                      -static_cast<std::int64_t>(u & 1));
      }
    }
  }
}

inline void decode_subframe(BitReader& br, int blocksize, int bps,
                            std::vector<std::int64_t>& out) {
  COTA_CHECK_IO(br.ubits(1) == 0, "flac: subframe padding bit set");
  int type = static_cast<int>(br.ubits(6));
  int wasted = 0;
  if (br.ubits(1) == 1) wasted = static_cast<int>(br.unary()) + 1;
  int eff = bps - wasted;
  out.assign(static_cast<std::size_t>(blocksize), 0);
  std::vector<std::int64_t> res;
  if (type == 0) {  // constant
    std::int64_t v = br.sbits(eff);
    for (auto& s : out) s = v;
  } else if (type == 1) {  // verbatim
    for (auto& s : out) s = br.sbits(eff);
  } else if (type >= 8 && type <= 12) {  // fixed, order 0-4
    int order = type - 8;
    for (int i = 0; i < order; ++i) out[static_cast<std::size_t>(i)] = br.sbits(eff);
    decode_residual(br, order, blocksize, res);
    for (int i = order; i < blocksize; ++i) {
      std::int64_t p = 0;
      auto x = [&](int d) { return out[static_cast<std::size_t>(i - d)]; };
      switch (order) {
        case 0: p = 0; break;
        case 1: p = x(1); break;
        case 2: p = 2 * x(1) - x(2); break;
        case 3: p = 3 * x(1) - 3 * x(2) + x(3); break;
        case 4: p = 4 * x(1) - 6 * x(2) + 4 * x(3) - x(4); break;
      }
      out[static_cast<std::size_t>(i)] = p + res[static_cast<std::size_t>(i - order)];
    }
  } else if (type >= 32) {  // LPC, order 1-32
    int order = (type & 31) + 1;
    for (int i = 0; i < order; ++i) out[static_cast<std::size_t>(i)] = br.sbits(eff);
    int prec = static_cast<int>(br.ubits(4));
    COTA_CHECK_IO(prec != 15, "flac: invalid LPC precision");
    prec += 1;
    int shift = static_cast<int>(br.sbits(5));
    COTA_CHECK_IO(shift >= 0, "flac: negative LPC shift");
    std::vector<std::int64_t> coef(static_cast<std::size_t>(order));
    for (auto& c : coef) c = br.sbits(prec);
    decode_residual(br, order, blocksize, res);
    for (int i = order; i < blocksize; ++i) {
      __int128 acc = 0;
      for (int j = 0; j < order; ++j)
        acc += static_cast<__int128>(coef[static_cast<std::size_t>(j)]) *
               out[static_cast<std::size_t>(i - 1 - j)];
      out[static_cast<std::size_t>(i)] =
          static_cast<std::int64_t>(acc >> shift) + res[static_cast<std::size_t>(i - order)];
    }
  } else {
    COTA_CHECK_IO(false, "flac: reserved subframe type ", type);
  }
  if (wasted > 0)
    for (auto& s : out) s <<= wasted;
}

inline Waveform decode(const std::vector<std::uint8_t>& buf, const std::string& path) {
  COTA_CHECK_IO(buf.size() > 42 && std::memcmp(buf.data(), "fLaC", 4) == 0,
                "not a FLAC file: ", path);
  std::size_t pos = 4;
  StreamInfo info;
  bool last = false, have_info = false;
  while (!last) {
    COTA_CHECK_IO(pos + 4 <= buf.size(), "flac: truncated metadata: ", path);
    last = (buf[pos] & 0x80) != 0;
    int type = buf[pos] & 0x7F;
    std::size_t len = (static_cast<std::size_t>(buf[pos + 1]) << 16) |
                      (static_cast<std::size_t>(buf[pos + 2]) << 8) | buf[pos + 3];
    pos += 4;
    COTA_CHECK_IO(pos + len <= buf.size(), "flac: truncated metadata block");
    if (type == 0) {
      COTA_CHECK_IO(len >= 34, "flac: short STREAMINFO");
      const std::uint8_t* s = buf.data() + pos;
      info.sample_rate = (s[10] << 12) | (s[11] << 4) | (s[12] >> 4);
      info.channels = ((s[12] >> 1) & 0x7) + 1;
      info.bits = (((s[12] & 1) << 4) | (s[13] >> 4)) + 1;
      info.total_samples = (static_cast<std::uint64_t>(s[13] & 0xF) << 32) |
                           (static_cast<std::uint64_t>(s[14]) << 24) |
                           (static_cast<std::uint64_t>(s[15]) << 16) |
                           (static_cast<std::uint64_t>(s[16]) << 8) | s[17];
      have_info = true;
    }
    pos += len;
  }
  COTA_CHECK_IO(have_info && info.sample_rate > 0, "flac: missing STREAMINFO");
  COTA_CHECK_IO(info.channels >= 1 && info.channels <= 8, "flac: channel count");

  BitReader br{buf.data(), buf.size(), pos * 8};
  std::vector<std::vector<std::int64_t>> ch(
      static_cast<std::size_t>(info.channels));
  Waveform w;
  w.sample_rate = info.sample_rate;
  double denom = std::pow(2.0, info.bits - 1);

  while (!br.eof() &&
         (info.total_samples == 0 || w.samples.size() < info.total_samples)) {
    std::size_t frame_start = br.byte_pos();
    std::uint64_t sync = br.ubits(14);
    COTA_CHECK_IO(sync == 0x3FFE, "flac: lost frame sync");
    br.ubits(1);  // reserved
    br.ubits(1);  // blocking strategy
    int bs_code = static_cast<int>(br.ubits(4));
    int sr_code = static_cast<int>(br.ubits(4));
    int ch_code = static_cast<int>(br.ubits(4));
    int ss_code = static_cast<int>(br.ubits(3));
    br.ubits(1);  // reserved
    read_coded_number(br);
    int blocksize = 0;
    switch (bs_code) {
      case 1: blocksize = 192; break;
      case 2: case 3: case 4: case 5: blocksize = 576 << (bs_code - 2); break;
      case 6: blocksize = static_cast<int>(br.ubits(8)) + 1; break;
      case 7: blocksize = static_cast<int>(br.ubits(16)) + 1; break;
      default:
        COTA_CHECK_IO(bs_code >= 8, "flac: reserved blocksize code");
        blocksize = 256 << (bs_code - 8);
    }
    if (sr_code == 12) br.ubits(8);
    else if (sr_code == 13 || sr_code == 14) br.ubits(16);
    int bps = info.bits;
    switch (ss_code) {
      case 0: break;
      case 1: bps = 8; break;
      case 2: bps = 12; break;
      case 4: bps = 16; break;
      case 5: bps = 20; break;
      case 6: bps = 24; break;
      case 7: bps = 32; break;
      default: COTA_CHECK_IO(false, "flac: reserved sample size code");
    }
    // header CRC-8 covers everything up to and including this byte's predecessor
    std::size_t hdr_end = br.byte_pos();
    std::uint8_t want_crc8 = static_cast<std::uint8_t>(br.ubits(8));
    COTA_CHECK_IO(crc8(buf.data() + frame_start, hdr_end - frame_start) == want_crc8,
                  "flac: frame header CRC mismatch");

    int nch = info.channels;
    bool left_side = false, right_side = false, mid_side = false;
    if (ch_code <= 7) {
      COTA_CHECK_IO(ch_code + 1 == nch, "flac: channel assignment mismatch");
    } else if (ch_code == 8) {
      left_side = true;
      COTA_CHECK_IO(nch == 2, "flac: stereo decorrelation on non-stereo");
    } else if (ch_code == 9) {
      right_side = true;
      COTA_CHECK_IO(nch == 2, "flac: stereo decorrelation on non-stereo");
    } else if (ch_code == 10) {
      mid_side = true;
      COTA_CHECK_IO(nch == 2, "flac: stereo decorrelation on non-stereo");
    } else {
      COTA_CHECK_IO(false, "flac: reserved channel assignment");
    }

    for (int c = 0; c < nch; ++c) {
      int cbps = bps;
      if ((left_side && c == 1) || (right_side && c == 0) || (mid_side && c == 1))
        cbps += 1;
      decode_subframe(br, blocksize, cbps, ch[static_cast<std::size_t>(c)]);
    }
    br.align();
    std::size_t frame_end = br.byte_pos();
    std::uint16_t want_crc16 = static_cast<std::uint16_t>(br.ubits(16));
    COTA_CHECK_IO(crc16(buf.data() + frame_start, frame_end - frame_start) == want_crc16,
                  "flac: frame CRC mismatch");

    if (left_side) {
      for (int i = 0; i < blocksize; ++i)
        ch[1][static_cast<std::size_t>(i)] =
            ch[0][static_cast<std::size_t>(i)] - ch[1][static_cast<std::size_t>(i)];
    } else if (right_side) {
      for (int i = 0; i < blocksize; ++i)
        ch[0][static_cast<std::size_t>(i)] += ch[1][static_cast<std::size_t>(i)];
    } else if (mid_side) {
      for (int i = 0; i < blocksize; ++i) {
        std::int64_t side = ch[1][static_cast<std::size_t>(i)];
        std::int64_t m2 = (ch[0][static_cast<std::size_t>(i)] << 1) | (side & 1);
        ch[0][static_cast<std::size_t>(i)] = (m2 + side) >> 1;
        ch[1][static_cast<std::size_t>(i)] = (m2 - side) >> 1;
      }
    }

    std::size_t take = static_cast<std::size_t>(blocksize);
    if (info.total_samples > 0)
      take = std::min<std::size_t>(take, static_cast<std::size_t>(info.total_samples -
                                                                  w.samples.size()));
    for (std::size_t i = 0; i < take; ++i) {
      double acc = 0.0;
      for (int c = 0; c < nch; ++c)
        acc += static_cast<double>(ch[static_cast<std::size_t>(c)][i]) / denom;
      w.samples.push_back(acc / nch);
    }
  }
  return w;
}

}  // namespace flac

inline Waveform read_flac(const std::string& path) {
  return flac::decode(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

// Rational-rate conversion via a windowed-sinc interpolation filter
// (Blackman window, 16 zero crossings each side at the lower of the two
// rates). Output length follows len_out = round(len_in * fs_out / fs_in).
inline std::vector<double> resample(const std::vector<double>& x, int fs_in,
                                    int fs_out) {
  COTA_CHECK(fs_in > 0 && fs_out > 0, "resample: bad rates");
  if (fs_in == fs_out) return x;
  if (x.empty()) return {};
  double ratio = static_cast<double>(fs_out) / fs_in;
  std::int64_t len_out = std::llround(static_cast<double>(x.size()) * ratio);
  std::vector<double> y(static_cast<std::size_t>(len_out));

  // cutoff in cycles per input sample
  double fc = 0.5 * std::min(1.0, ratio);
  const double zc = 16.0;               // zero crossings per side
  double half_width = zc / (2.0 * fc);  // in input samples
  std::int64_t n = static_cast<std::int64_t>(x.size());

  for (std::int64_t j = 0; j < len_out; ++j) {
    double t = static_cast<double>(j) / ratio;  // position in input samples
    std::int64_t k0 = static_cast<std::int64_t>(std::ceil(t - half_width));
    std::int64_t k1 = static_cast<std::int64_t>(std::floor(t + half_width));
    double acc = 0.0;
    for (std::int64_t k = std::max<std::int64_t>(k0, 0);
         k <= std::min<std::int64_t>(k1, n - 1); ++k) {
      double d = t - static_cast<double>(k);
      double sinc = d == 0.0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * d) / (M_PI * d);
      double u = d / half_width;  // in [-1, 1]
      double win = 0.42 + 0.5 * std::cos(M_PI * u) + 0.08 * std::cos(2.0 * M_PI * u);
      acc += x[static_cast<std::size_t>(k)] * sinc * win;
    }
    y[static_cast<std::size_t>(j)] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Canonical loader
// ---------------------------------------------------------------------------

inline constexpr int kSampleRate = 22050;
inline constexpr double kPeakTarget = 0.95;

namespace detail {
inline bool ends_with_ci(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  for (std::size_t i = 0; i < suf.size(); ++i) {
    char a = s[s.size() - suf.size() + i], b = suf[i];
    if (std::tolower(static_cast<unsigned char>(a)) != b) return false;
  }
  return true;
}
}  // namespace detail

// Decode, downmix to mono, resample to 22.05 kHz, scale the peak to 0.95.
// No silence trimming. Re-loading an already-canonical file is a no-op.
inline Waveform load_audio(const std::string& path) {
  Waveform w;
  if (detail::ends_with_ci(path, ".flac"))
    w = read_flac(path);
  else if (detail::ends_with_ci(path, ".wav"))
    w = read_wav(path);
  else
    COTA_CHECK_IO(false, "unsupported audio extension: ", path);
  COTA_CHECK(!w.samples.empty(), "zero-length audio: ", path);
  if (w.sample_rate != kSampleRate) {
    w.samples = resample(w.samples, w.sample_rate, kSampleRate);
    w.sample_rate = kSampleRate;
    COTA_CHECK(!w.samples.empty(), "audio vanished in resampling: ", path);
  }
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0 && std::abs(peak - kPeakTarget) > 1e-6) {
    double scale = kPeakTarget / peak;
    for (double& s : w.samples) s *= scale;
  }
  return w;
}

}  // namespace cota
