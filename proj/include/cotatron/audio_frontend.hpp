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

// Canonical acoustic features: the 80-bin log mel spectrogram every model
// component consumes, MFCCs for the speaker classifier, and a voicing
// detector for the voicing-error metric. Frames are centered with reflect
// padding, so T_frames = floor(n_samples / hop) + 1 for every feature and
// the mel and voicing grids line up exactly.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cotatron/audio_io.hpp"
#include "cotatron/fft.hpp"
#include "cotatron/tensor.hpp"

namespace cota {

struct MelConfig {
  int sample_rate = 22050;
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 80;
  double fmin = 70.0;
  double fmax = 8000.0;
  double clamp_floor = 1e-5;
};

// HTK mel scale.
inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / n);
  return w;
}

// Center padding: n_fft/2 mirrored samples on each side, edge not repeated.
inline std::vector<double> reflect_pad_signal(const std::vector<double>& x, int pad) {
  std::int64_t n = static_cast<std::int64_t>(x.size());
  COTA_CHECK(n > pad, "reflect_pad_signal: signal shorter than padding");
  std::vector<double> out(static_cast<std::size_t>(n + 2 * pad));
  for (std::int64_t i = -pad; i < n + pad; ++i) {
    std::int64_t j = i;
    if (j < 0) j = -j;
    if (j >= n) j = 2 * (n - 1) - j;
    out[static_cast<std::size_t>(i + pad)] = x[static_cast<std::size_t>(j)];
  }
  return out;
}

inline std::int64_t frame_count(std::int64_t n_samples, int hop) {
  return n_samples / hop + 1;
}

// Triangular mel filters on the FFT bin grid; peak weight 1.
inline RowMat mel_filterbank(const MelConfig& cfg) {
  int bins = cfg.n_fft / 2 + 1;
  RowMat fb = RowMat::Zero(cfg.n_mels, bins);
  double m_lo = hz_to_mel(cfg.fmin), m_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / (cfg.n_mels + 1));
  for (int i = 0; i < cfg.n_mels; ++i) {
    double f0 = edges[static_cast<std::size_t>(i)];
    double f1 = edges[static_cast<std::size_t>(i) + 1];
    double f2 = edges[static_cast<std::size_t>(i) + 2];
    for (int k = 0; k < bins; ++k) {
      double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double up = (f - f0) / (f1 - f0);
      double down = (f2 - f) / (f2 - f1);
      fb(i, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

inline double mel_filter_center_hz(const MelConfig& cfg, int i) {
  double m_lo = hz_to_mel(cfg.fmin), m_hi = hz_to_mel(cfg.fmax);
  return mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i + 1) / (cfg.n_mels + 1));
}

// Magnitude STFT, [T_frames x n_fft/2+1].
inline Tensor stft_magnitude(const Waveform& w, const MelConfig& cfg) {
  COTA_CHECK(w.sample_rate == cfg.sample_rate, "stft: sample rate mismatch");
  std::int64_t n = static_cast<std::int64_t>(w.samples.size());
  COTA_CHECK(n >= cfg.n_fft, "stft: audio shorter than one window (", n, " < ",
             cfg.n_fft, " samples)");
  auto padded = reflect_pad_signal(w.samples, cfg.n_fft / 2);
  auto win = hann_window(cfg.n_fft);
  std::int64_t T = frame_count(n, cfg.hop);
  int bins = cfg.n_fft / 2 + 1;
  Tensor out({T, bins});
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t t = 0; t < T; ++t) {
    std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(cfg.hop);
    for (int i = 0; i < cfg.n_fft; ++i)
      frame[static_cast<std::size_t>(i)] =
          padded[start + static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
    auto spec = rfft(frame);
    for (int k = 0; k < bins; ++k) out.at(t, k) = std::abs(spec[static_cast<std::size_t>(k)]);
  }
  return out;
}

// Log mel spectrogram, [T_frames x n_mels], natural log with floor clamp.
inline Tensor mel_spectrogram(const Waveform& w, const MelConfig& cfg = {}) {
  Tensor mag = stft_magnitude(w, cfg);
  RowMat fb = mel_filterbank(cfg);
  std::int64_t T = mag.dim(0);
  Tensor out({T, cfg.n_mels});
  out.mat().noalias() = mag.mat() * fb.transpose();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out.data[i] = std::log(std::max(out.data[i], cfg.clamp_floor));
  return out;
}

// Orthonormal DCT-II along the mel axis, first n_coeffs coefficients.
inline Tensor mfcc_from_mel(const Tensor& mel, int n_coeffs) {
  COTA_CHECK(mel.rank() == 2, "mfcc: rank 2 expected");
  std::int64_t T = mel.dim(0), N = mel.dim(1);
  COTA_CHECK(n_coeffs >= 1 && n_coeffs <= N, "mfcc: n_coeffs out of range (",
             n_coeffs, " vs ", N, ")");
  Tensor out({T, n_coeffs});
  double a0 = std::sqrt(1.0 / static_cast<double>(N));
  double aj = std::sqrt(2.0 / static_cast<double>(N));
  for (std::int64_t t = 0; t < T; ++t)
    for (int j = 0; j < n_coeffs; ++j) {
      double acc = 0.0;
      for (std::int64_t m = 0; m < N; ++m)
        acc += mel.at(t, m) *
               std::cos(M_PI * (2.0 * static_cast<double>(m) + 1.0) * j /
                        (2.0 * static_cast<double>(N)));
      out.at(t, j) = (j == 0 ? a0 : aj) * acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Voicing
// ---------------------------------------------------------------------------

// Per-frame voicing score in [0,1]: peak of the normalized autocorrelation
// over pitch lags 70-400 Hz on the mean-removed frame, gated by an RMS
// floor. Same frame grid as the mel spectrogram.
inline std::vector<double> voicing_scores(const Waveform& w,
                                          const MelConfig& cfg = {}) {
  COTA_CHECK(w.sample_rate == cfg.sample_rate, "voicing: sample rate mismatch");
  std::int64_t n = static_cast<std::int64_t>(w.samples.size());
  COTA_CHECK(n >= cfg.n_fft, "voicing: audio shorter than one window");
  auto padded = reflect_pad_signal(w.samples, cfg.n_fft / 2);
  std::int64_t T = frame_count(n, cfg.hop);
  int N = cfg.n_fft;
  int lag_min = static_cast<int>(std::ceil(cfg.sample_rate / 400.0));
  int lag_max = static_cast<int>(std::floor(cfg.sample_rate / 70.0));
  const double rms_floor = 1e-4;

  std::vector<double> scores(static_cast<std::size_t>(T), 0.0);
  std::vector<double> fr(static_cast<std::size_t>(N));
  std::vector<double> sq_prefix(static_cast<std::size_t>(N) + 1);
  for (std::int64_t t = 0; t < T; ++t) {
    std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(cfg.hop);
    double mean = 0.0;
    for (int i = 0; i < N; ++i) mean += padded[start + static_cast<std::size_t>(i)];
    mean /= N;
    double energy = 0.0;
    for (int i = 0; i < N; ++i) {
      fr[static_cast<std::size_t>(i)] = padded[start + static_cast<std::size_t>(i)] - mean;
      energy += fr[static_cast<std::size_t>(i)] * fr[static_cast<std::size_t>(i)];
    }
    if (std::sqrt(energy / N) < rms_floor) continue;
    sq_prefix[0] = 0.0;
    for (int i = 0; i < N; ++i)
      sq_prefix[static_cast<std::size_t>(i) + 1] =
          sq_prefix[static_cast<std::size_t>(i)] +
          fr[static_cast<std::size_t>(i)] * fr[static_cast<std::size_t>(i)];
    double best = 0.0;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      double num = 0.0;
      for (int i = 0; i + lag < N; ++i)
        num += fr[static_cast<std::size_t>(i)] * fr[static_cast<std::size_t>(i + lag)];
      double e1 = sq_prefix[static_cast<std::size_t>(N - lag)];
      double e2 = sq_prefix[static_cast<std::size_t>(N)] - sq_prefix[static_cast<std::size_t>(lag)];
      if (e1 <= 0.0 || e2 <= 0.0) continue;
      best = std::max(best, num / std::sqrt(e1 * e2));
    }
    scores[static_cast<std::size_t>(t)] = std::clamp(best, 0.0, 1.0);
  }
  return scores;
}

inline std::vector<bool> voicing_decisions(const Waveform& w, double threshold,
                                           const MelConfig& cfg = {}) {
  COTA_CHECK(threshold > 0.0 && threshold < 1.0, "voicing: threshold in (0,1)");
  auto s = voicing_scores(w, cfg);
  std::vector<bool> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] >= threshold;
  return out;
}

}  // namespace cota
