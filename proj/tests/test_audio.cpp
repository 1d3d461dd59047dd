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

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>

#include "cotatron/audio_frontend.hpp"
#include "cotatron/audio_io.hpp"
#include "cotatron/rng.hpp"

using namespace cota;

namespace {

std::string tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cota_audio_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Waveform sine(double freq, double amp, int fs, std::int64_t n) {
  Waveform w;
  w.sample_rate = fs;
  w.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    w.samples[static_cast<std::size_t>(i)] =
        amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / fs);
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

TEST_CASE("wav: 16-bit round trip") {
  Waveform w = sine(440.0, 0.7, 22050, 4000);
  auto p = tmp_path("rt16.wav");
  write_wav16(p, w);
  Waveform r = read_wav(p);
  REQUIRE(r.sample_rate == 22050);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    CHECK(std::abs(r.samples[i] - w.samples[i]) < 1.0 / 32000.0);
}

TEST_CASE("wav: float32 round trip is exact at float precision") {
  Waveform w = sine(100.0, 0.4, 16000, 2000);
  auto p = tmp_path("rtf32.wav");
  write_wav_f32(p, w);
  Waveform r = read_wav(p);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    CHECK(r.samples[i] == static_cast<double>(static_cast<float>(w.samples[i])));
}

TEST_CASE("wav: stereo downmix averages channels") {
  // hand-built interleaved stereo, 16-bit: L = 16384, R = -16384 -> mono 0
  std::vector<std::uint8_t> bytes;
  auto push16 = [&](std::int16_t v) {
    bytes.push_back(static_cast<std::uint8_t>(v & 0xff));
    bytes.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  };
  const int n = 100;
  bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
  std::uint32_t dlen = n * 4;
  for (std::uint32_t x = 36 + dlen, i = 0; i < 4; ++i) bytes.push_back((x >> (8 * i)) & 0xff);
  bytes.insert(bytes.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' ',
                             16, 0, 0, 0, 1, 0, 2, 0});
  for (std::uint32_t x = 8000, i = 0; i < 4; ++i) bytes.push_back((x >> (8 * i)) & 0xff);
  for (std::uint32_t x = 8000 * 4, i = 0; i < 4; ++i) bytes.push_back((x >> (8 * i)) & 0xff);
  bytes.insert(bytes.end(), {4, 0, 16, 0, 'd', 'a', 't', 'a'});
  for (std::uint32_t x = dlen, i = 0; i < 4; ++i) bytes.push_back((x >> (8 * i)) & 0xff);
  for (int i = 0; i < n; ++i) {
    push16(16384);
    push16(-16384);
  }
  auto p = tmp_path("stereo.wav");
  write_file_bytes(p, bytes);
  Waveform r = read_wav(p);
  REQUIRE(r.samples.size() == n);
  CHECK(r.sample_rate == 8000);
  for (double s : r.samples) CHECK(s == 0.0);
}

// ---------------------------------------------------------------------------
// FLAC: bit-level encoder for test vectors
// ---------------------------------------------------------------------------

namespace {

struct BitWriter {
  std::vector<std::uint8_t> bytes;
  int fill = 0;  // bits used in the last byte

  void put(std::uint64_t v, int k) {
    for (int i = k - 1; i >= 0; --i) {
      if (fill == 0) bytes.push_back(0);
      if ((v >> i) & 1) bytes.back() |= static_cast<std::uint8_t>(0x80 >> fill);
      fill = (fill + 1) % 8;
    }
  }
  void put_signed(std::int64_t v, int k) {
    put(static_cast<std::uint64_t>(v) & ((k == 64 ? ~0ull : (1ull << k) - 1)), k);
  }
  void align() { fill = 0; }
};

void put_rice(BitWriter& bw, std::int64_t v, int r) {
  std::uint64_t u = v >= 0 ? (static_cast<std::uint64_t>(v) << 1)
                           : ((static_cast<std::uint64_t>(-v) << 1) - 1);
  std::uint64_t q = u >> r;
  for (std::uint64_t i = 0; i < q; ++i) bw.put(0, 1);
  bw.put(1, 1);
  if (r > 0) bw.put(u & ((1ull << r) - 1), r);
}

std::vector<std::uint8_t> flac_stream(int fs, int channels, int bps,
                                      std::uint64_t total,
                                      const std::vector<std::uint8_t>& frames) {
  BitWriter bw;
  bw.bytes.insert(bw.bytes.end(), {'f', 'L', 'a', 'C'});
  // single metadata block: STREAMINFO, last=1
  bw.bytes.push_back(0x80);
  bw.bytes.insert(bw.bytes.end(), {0, 0, 34});
  bw.put(16, 16);     // min blocksize
  bw.put(65535, 16);  // max blocksize
  bw.put(0, 24);
  bw.put(0, 24);
  bw.put(static_cast<std::uint64_t>(fs), 20);
  bw.put(static_cast<std::uint64_t>(channels - 1), 3);
  bw.put(static_cast<std::uint64_t>(bps - 1), 5);
  bw.put(total, 36);
  for (int i = 0; i < 16; ++i) bw.put(0, 8);
  bw.bytes.insert(bw.bytes.end(), frames.begin(), frames.end());
  return bw.bytes;
}

// Frame with externally supplied subframe payload writer.
template <typename F>
std::vector<std::uint8_t> flac_frame(int blocksize, int ch_code, int frame_no,
                                     F&& write_subframes) {
  BitWriter bw;
  bw.put(0x3FFE, 14);
  bw.put(0, 1);
  bw.put(0, 1);        // fixed blocksize stream
  bw.put(7, 4);        // 16-bit blocksize-1 follows
  bw.put(0, 4);        // sample rate from STREAMINFO
  bw.put(static_cast<std::uint64_t>(ch_code), 4);
  bw.put(4, 3);        // 16 bits per sample
  bw.put(0, 1);
  REQUIRE(frame_no < 0x80);
  bw.put(static_cast<std::uint64_t>(frame_no), 8);  // coded number, 1 byte
  bw.put(static_cast<std::uint64_t>(blocksize - 1), 16);
  std::uint8_t c8 = flac::crc8(bw.bytes.data(), bw.bytes.size());
  bw.put(c8, 8);
  write_subframes(bw);
  bw.align();
  std::uint16_t c16 = flac::crc16(bw.bytes.data(), bw.bytes.size());
  bw.put(c16, 16);
  return bw.bytes;
}

}  // namespace

TEST_CASE("flac: verbatim and constant subframes") {
  const int bs = 16;
  std::vector<std::int64_t> data(bs);
  Rng rng(21);
  for (int i = 0; i < bs; ++i)
    data[static_cast<std::size_t>(i)] =
        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i), 60000)) - 30000;

  auto f0 = flac_frame(bs, 0, 0, [&](BitWriter& bw) {
    bw.put(0, 1);
    bw.put(1, 6);  // verbatim
    bw.put(0, 1);
    for (auto v : data) bw.put_signed(v, 16);
  });
  auto f1 = flac_frame(bs, 0, 1, [&](BitWriter& bw) {
    bw.put(0, 1);
    bw.put(0, 6);  // constant
    bw.put(0, 1);
    bw.put_signed(-1234, 16);
  });
  std::vector<std::uint8_t> frames = f0;
  frames.insert(frames.end(), f1.begin(), f1.end());
  auto stream = flac_stream(22050, 1, 16, 2 * bs, frames);
  auto p = tmp_path("vc.flac");
  write_file_bytes(p, stream);

  Waveform w = read_flac(p);
  REQUIRE(w.sample_rate == 22050);
  REQUIRE(w.samples.size() == 2 * bs);
  for (int i = 0; i < bs; ++i)
    CHECK(w.samples[static_cast<std::size_t>(i)] ==
          Catch::Approx(static_cast<double>(data[static_cast<std::size_t>(i)]) / 32768.0)
              .margin(1e-12));
  for (int i = bs; i < 2 * bs; ++i)
    CHECK(w.samples[static_cast<std::size_t>(i)] ==
          Catch::Approx(-1234.0 / 32768.0).margin(1e-12));
}

TEST_CASE("flac: fixed-predictor subframe with rice residuals") {
  const int bs = 32;
  // make a smooth signal so order-2 residuals stay small
  std::vector<std::int64_t> x(bs);
  for (int i = 0; i < bs; ++i)
    x[static_cast<std::size_t>(i)] =
        static_cast<std::int64_t>(std::lrint(5000.0 * std::sin(0.2 * i)));
  std::vector<std::int64_t> res;
  for (int i = 2; i < bs; ++i)
    res.push_back(x[static_cast<std::size_t>(i)] - 2 * x[static_cast<std::size_t>(i - 1)] +
                  x[static_cast<std::size_t>(i - 2)]);

  auto f = flac_frame(bs, 0, 0, [&](BitWriter& bw) {
    bw.put(0, 1);
    bw.put(10, 6);  // fixed, order 2
    bw.put(0, 1);
    bw.put_signed(x[0], 16);
    bw.put_signed(x[1], 16);
    bw.put(0, 2);  // rice method 0
    bw.put(0, 4);  // partition order 0
    bw.put(8, 4);  // rice parameter
    for (auto r : res) put_rice(bw, r, 8);
  });
  auto stream = flac_stream(22050, 1, 16, bs, f);
  auto p = tmp_path("fixed.flac");
  write_file_bytes(p, stream);
  Waveform w = read_flac(p);
  REQUIRE(w.samples.size() == bs);
  for (int i = 0; i < bs; ++i)
    CHECK(w.samples[static_cast<std::size_t>(i)] ==
          Catch::Approx(static_cast<double>(x[static_cast<std::size_t>(i)]) / 32768.0)
              .margin(1e-12));
}

TEST_CASE("flac: lpc subframe and left/side stereo") {
  const int bs = 24;
  // LPC: x[i] = ((2*x[i-1] - 1*x[i-2]) >> 1) + res[i], coefs {2,-1}, shift 1
  std::vector<std::int64_t> left(bs), right(bs);
  Rng rng(33);
  left[0] = 100;
  left[1] = 180;
  std::vector<std::int64_t> res;
  for (int i = 2; i < bs; ++i) {
    std::int64_t r =
        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i), 10)) - 5;
    std::int64_t pred = (2 * left[static_cast<std::size_t>(i - 1)] -
                         left[static_cast<std::size_t>(i - 2)]) >> 1;
    left[static_cast<std::size_t>(i)] = pred + r;
    res.push_back(r);
  }
  for (int i = 0; i < bs; ++i)
    right[static_cast<std::size_t>(i)] = left[static_cast<std::size_t>(i)] - 7;

  auto f = flac_frame(bs, 8 /*left-side*/, 0, [&](BitWriter& bw) {
    // channel 0: left as LPC order 2, 16 bps
    bw.put(0, 1);
    bw.put(33, 6);  // 100001 -> lpc order 2
    bw.put(0, 1);
    bw.put_signed(left[0], 16);
    bw.put_signed(left[1], 16);
    bw.put(11, 4);       // precision 12
    bw.put_signed(1, 5); // shift
    bw.put_signed(2, 12);
    bw.put_signed(-1, 12);
    bw.put(0, 2);
    bw.put(0, 4);
    bw.put(4, 4);
    for (auto r : res) put_rice(bw, r, 4);
    // channel 1: side = left - right = 7, constant, 17 bps
    bw.put(0, 1);
    bw.put(0, 6);
    bw.put(0, 1);
    bw.put_signed(7, 17);
  });
  auto stream = flac_stream(8000, 2, 16, bs, f);
  auto p = tmp_path("lpc.flac");
  write_file_bytes(p, stream);
  Waveform w = read_flac(p);
  REQUIRE(w.samples.size() == bs);
  for (int i = 0; i < bs; ++i) {
    double want = (static_cast<double>(left[static_cast<std::size_t>(i)]) +
                   static_cast<double>(right[static_cast<std::size_t>(i)])) /
                  2.0 / 32768.0;
    CHECK(w.samples[static_cast<std::size_t>(i)] == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("flac: corrupted CRC is rejected") {
  const int bs = 16;
  auto f = flac_frame(bs, 0, 0, [&](BitWriter& bw) {
    bw.put(0, 1);
    bw.put(0, 6);
    bw.put(0, 1);
    bw.put_signed(42, 16);
  });
  f[f.size() - 1] ^= 0xFF;  // clobber CRC-16
  auto stream = flac_stream(22050, 1, 16, bs, f);
  auto p = tmp_path("bad.flac");
  write_file_bytes(p, stream);
  CHECK_THROWS_AS(read_flac(p), IoError);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

TEST_CASE("resample: length law") {
  Rng rng(7);
  for (int case_i = 0; case_i < 20; ++case_i) {
    int fs_in = std::vector<int>{8000, 16000, 22050, 44100, 48000}[
        rng.below(static_cast<std::uint64_t>(case_i) * 2, 5)];
    std::int64_t n =
        1000 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(case_i) * 2 + 1, 50000));
    std::vector<double> x(static_cast<std::size_t>(n), 0.1);
    auto y = resample(x, fs_in, 22050);
    CHECK(static_cast<std::int64_t>(y.size()) ==
          std::llround(static_cast<double>(n) * 22050.0 / fs_in));
  }
  // the canonical example: 1 s at 44.1 kHz -> exactly 22050 samples
  std::vector<double> sec(44100, 0.0);
  CHECK(resample(sec, 44100, 22050).size() == 22050);
  // same-rate passthrough is bit-identical
  std::vector<double> x = {0.1, -0.2, 0.3};
  CHECK(resample(x, 22050, 22050) == x);
}

TEST_CASE("resample: sine survives 2:1 decimation cleanly") {
  Waveform w = sine(1000.0, 0.5, 44100, 44100);
  auto y = resample(w.samples, 44100, 22050);
  REQUIRE(y.size() == 22050);
  // compare against the ideal decimated sine away from the edges
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 500; i + 500 < y.size(); ++i) {
    double ideal = 0.5 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 22050.0);
    err += (y[i] - ideal) * (y[i] - ideal);
    ref += ideal * ideal;
  }
  CHECK(10.0 * std::log10(ref / err) > 60.0);  // dB
}

// ---------------------------------------------------------------------------
// load_audio
// ---------------------------------------------------------------------------

TEST_CASE("load_audio: canonicalizes rate, channels, peak") {
  // 44.1 kHz mono file, amplitude well below peak target
  Waveform w = sine(440.0, 0.3, 44100, 44100);
  auto p = tmp_path("canon.wav");
  write_wav_f32(p, w);
  Waveform r = load_audio(p);
  CHECK(r.sample_rate == 22050);
  CHECK(r.samples.size() == 22050);
  double peak = 0.0;
  for (double s : r.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak == Catch::Approx(0.95).margin(1e-12));
}

TEST_CASE("load_audio: canonical input loads unchanged") {
  Waveform w = sine(220.0, 1.0, 22050, 22050);
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  for (double& s : w.samples) s *= 0.95 / peak;
  auto p = tmp_path("canon2.wav");
  write_wav_f32(p, w);
  Waveform r1 = load_audio(p);
  // write what we loaded and load again: must be bit-identical
  auto p2 = tmp_path("canon3.wav");
  write_wav_f32(p2, r1);
  Waveform r2 = load_audio(p2);
  REQUIRE(r1.samples.size() == r2.samples.size());
  for (std::size_t i = 0; i < r1.samples.size(); ++i)
    CHECK(r1.samples[i] == r2.samples[i]);
}

TEST_CASE("load_audio: rejects the unloadable") {
  CHECK_THROWS_AS(load_audio(tmp_path("missing.wav")), IoError);
  CHECK_THROWS_AS(load_audio(tmp_path("x.mp3")), IoError);
  Waveform empty;
  empty.sample_rate = 22050;
  auto p = tmp_path("empty.wav");
  write_wav16(p, empty);
  CHECK_THROWS_AS(load_audio(p), ValidationError);
}

// ---------------------------------------------------------------------------
// Mel spectrogram
// ---------------------------------------------------------------------------

TEST_CASE("mel: frame-count law") {
  Rng rng(31);
  MelConfig cfg;
  for (int i = 0; i < 8; ++i) {
    std::int64_t n = 1024 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i), 30000));
    Waveform w = sine(330.0, 0.5, 22050, n);
    Tensor m = mel_spectrogram(w, cfg);
    CHECK(m.dim(0) == n / 256 + 1);
    CHECK(m.dim(1) == 80);
  }
  Waveform sec = sine(330.0, 0.5, 22050, 22050);
  CHECK(mel_spectrogram(sec, cfg).dim(0) == 87);
}

TEST_CASE("mel: silence hits the clamp floor exactly") {
  Waveform w;
  w.sample_rate = 22050;
  w.samples.assign(4096, 0.0);
  Tensor m = mel_spectrogram(w);
  for (std::int64_t i = 0; i < m.numel(); ++i)
    CHECK(m.data[i] == std::log(1e-5));
}

TEST_CASE("mel: 1 kHz sine peaks at the filter centered nearest 1 kHz") {
  MelConfig cfg;
  int want = 0;
  double best = 1e18;
  for (int i = 0; i < cfg.n_mels; ++i) {
    double d = std::abs(mel_filter_center_hz(cfg, i) - 1000.0);
    if (d < best) {
      best = d;
      want = i;
    }
  }
  Waveform w = sine(1000.0, 0.8, 22050, 22050);
  Tensor m = mel_spectrogram(w, cfg);
  std::int64_t t = m.dim(0) / 2;
  int got = 0;
  for (int k = 1; k < 80; ++k)
    if (m.at(t, k) > m.at(t, got)) got = k;
  CHECK(got == want);
}

TEST_CASE("mel: scaling down never raises a cell") {
  Rng rng(77);
  Waveform w;
  w.sample_rate = 22050;
  w.samples.resize(8000);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.9 * (2.0 * rng.uniform(i) - 1.0);
  Waveform half = w;
  for (double& s : half.samples) s *= 0.35;
  Tensor a = mel_spectrogram(w), b = mel_spectrogram(half);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(b.data[i] <= a.data[i] + 1e-12);
}

TEST_CASE("mel: first frame matches a direct windowed DFT") {
  Waveform w = sine(523.25, 0.6, 22050, 3000);
  MelConfig cfg;
  Tensor mag = stft_magnitude(w, cfg);
  auto padded = reflect_pad_signal(w.samples, 512);
  auto win = hann_window(1024);
  // frame 3 starts at sample 3*256 of the padded signal
  std::int64_t t = 3;
  for (int k : {0, 1, 23, 100, 256, 512}) {
    std::complex<double> acc(0.0, 0.0);
    for (int i = 0; i < 1024; ++i) {
      double ang = -2.0 * M_PI * static_cast<double>(k) * i / 1024.0;
      acc += padded[static_cast<std::size_t>(t * 256 + i)] * win[static_cast<std::size_t>(i)] *
             std::complex<double>(std::cos(ang), std::sin(ang));
    }
    CHECK(mag.at(t, k) == Catch::Approx(std::abs(acc)).margin(1e-9));
  }
}

TEST_CASE("mel: too-short audio is rejected") {
  Waveform w = sine(330.0, 0.5, 22050, 1000);
  CHECK_THROWS_AS(mel_spectrogram(w), ValidationError);
}

// ---------------------------------------------------------------------------
// MFCC
// ---------------------------------------------------------------------------

TEST_CASE("mfcc: constant frame concentrates in coefficient zero") {
  Tensor mel({2, 80});
  for (std::int64_t k = 0; k < 80; ++k) {
    mel.at(0, k) = 3.0;
    mel.at(1, k) = -1.5;
  }
  Tensor c = mfcc_from_mel(mel, 13);
  CHECK(c.at(0, 0) == Catch::Approx(3.0 * std::sqrt(80.0)));
  CHECK(c.at(1, 0) == Catch::Approx(-1.5 * std::sqrt(80.0)));
  for (int j = 1; j < 13; ++j) {
    CHECK(std::abs(c.at(0, j)) < 1e-10);
    CHECK(std::abs(c.at(1, j)) < 1e-10);
  }
}

TEST_CASE("mfcc: full transform inverts to 1e-6") {
  Tensor mel = Tensor::randn({5, 80}, Rng(3).stream("mfcc"));
  Tensor c = mfcc_from_mel(mel, 80);
  // inverse orthonormal DCT-II, written independently
  for (std::int64_t t = 0; t < 5; ++t)
    for (std::int64_t m = 0; m < 80; ++m) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < 80; ++j) {
        double a = j == 0 ? std::sqrt(1.0 / 80.0) : std::sqrt(2.0 / 80.0);
        acc += a * c.at(t, j) *
               std::cos(M_PI * (2.0 * static_cast<double>(m) + 1.0) *
                        static_cast<double>(j) / 160.0);
      }
      CHECK(acc == Catch::Approx(mel.at(t, m)).margin(1e-6));
    }
  CHECK_THROWS_AS(mfcc_from_mel(mel, 0), ValidationError);
  CHECK_THROWS_AS(mfcc_from_mel(mel, 81), ValidationError);
}

// ---------------------------------------------------------------------------
// Voicing
// ---------------------------------------------------------------------------

TEST_CASE("voicing: silence is unvoiced, sustained tone is voiced") {
  Waveform silence;
  silence.sample_rate = 22050;
  silence.samples.assign(8192, 0.0);
  auto d0 = voicing_decisions(silence, 0.7);
  for (bool v : d0) CHECK_FALSE(v);

  Waveform tone = sine(200.0, 0.95, 22050, 22050);
  auto d1 = voicing_decisions(tone, 0.7);
  REQUIRE(d1.size() == 87);
  for (std::size_t t = 2; t + 2 < d1.size(); ++t) CHECK(d1[t]);
}

TEST_CASE("voicing: quiet white noise is mostly unvoiced") {
  Rng rng(55);
  Waveform w;
  w.sample_rate = 22050;
  w.samples.resize(22050);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.01 * (2.0 * rng.uniform(i) - 1.0);  // ~ -40 dBFS peak
  auto d = voicing_decisions(w, 0.7);
  std::size_t unvoiced = 0;
  for (bool v : d)
    if (!v) ++unvoiced;
  CHECK(static_cast<double>(unvoiced) / static_cast<double>(d.size()) >= 0.9);
}

TEST_CASE("voicing: monotone in threshold and grid-aligned") {
  Waveform w = sine(150.0, 0.8, 22050, 12000);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    if ((i / 3000) % 2 == 1) w.samples[i] = 0.0;  // alternate tone and silence
  auto lo = voicing_decisions(w, 0.4);
  auto hi = voicing_decisions(w, 0.8);
  REQUIRE(lo.size() == hi.size());
  CHECK(lo.size() == static_cast<std::size_t>(mel_spectrogram(w).dim(0)));
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (hi[i]) CHECK(lo[i]);  // raising the threshold can only remove voicing
  CHECK_THROWS_AS(voicing_decisions(w, 0.0), ValidationError);
  CHECK_THROWS_AS(voicing_decisions(w, 1.0), ValidationError);
}
