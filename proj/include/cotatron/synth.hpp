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

// Deterministic synthetic speech for overfit runs and metric checks.
// Each character gets a fixed two-formant envelope and a fixed duration, so
// the mapping from text to spectrogram is crisp and speaker-independent in
// rhythm. Speakers differ only in pitch, vibrato, and brightness, which is
// exactly the information the linguistic stream is supposed to discard.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cotatron/audio_frontend.hpp"
#include "cotatron/audio_io.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/text_frontend.hpp"
#include "cotatron/training.hpp"

namespace cota {

struct SynthVoice {
  std::string name;
  double f0 = 150.0;            // base pitch, Hz
  double vibrato_rate = 5.0;    // Hz
  double vibrato_depth = 0.02;  // fraction of f0
  double brightness = 1.0;      // upper-formant emphasis
};

inline std::vector<SynthVoice> default_voices(int k) {
  static const std::vector<SynthVoice> bank = {
      {"ada", 118.0, 4.6, 0.020, 0.8},  {"bee", 238.0, 6.4, 0.030, 1.3},
      {"cleo", 164.0, 5.4, 0.016, 1.0}, {"dot", 294.0, 7.1, 0.026, 1.5},
      {"eli", 137.0, 4.1, 0.034, 0.7},  {"fay", 206.0, 5.9, 0.022, 1.2}};
  COTA_CHECK(k >= 1 && k <= static_cast<int>(bank.size()), "voices available: 1..",
             bank.size(), ", requested ", k);
  return {bank.begin(), bank.begin() + k};
}

// Short pronounceable two-word lines; every character is in the default
// grapheme inventory.
inline std::vector<std::string> toy_transcripts(int n) {
  static const std::vector<std::string> pool = {
      "lima tesa",  "bodo kane",  "sefu rilo",  "gana mipe",  "toki vasu",
      "redo punib", "moli safet", "kuva nolis", "pade himo",  "wesa lotun",
      "fido marek", "sulo given", "napo beti",  "ruke solam", "divo patel",
      "homa weris", "ceti lugan", "bavo minek", "talu ferin", "gopi sanet",
      "leno kadir", "musa povel", "neri bakut", "validous",   "omerki tun"};
  COTA_CHECK(n >= 1 && n <= static_cast<int>(pool.size()), "transcripts available: 1..",
             pool.size(), ", requested ", n);
  return {pool.begin(), pool.begin() + n};
}

namespace detail {

// Duration and formant targets keyed to the character, identical for every
// speaker.
inline double symbol_seconds(char c) {
  if (c == ' ') return 0.055;
  int v = c - 'a';
  return 0.075 + 0.016 * static_cast<double>(v % 5);
}

inline void symbol_formants(char c, double* f1, double* f2) {
  int v = c - 'a';
  *f1 = 330.0 + 52.0 * static_cast<double>(v % 6);
  *f2 = 960.0 + 135.0 * static_cast<double>(v % 9);
}

}  // namespace detail

// Additive harmonic synthesis with per-harmonic phase accumulators, so pitch
// can wobble without clicks; envelope targets crossfade over 12 ms at
// character boundaries.
inline Waveform synth_utterance(const std::string& text, const SynthVoice& voice,
                                std::uint64_t seed) {
  COTA_CHECK(!text.empty(), "synth: empty text");
  struct Segment {
    double f1 = 0.0, f2 = 0.0;
    double gain = 0.0;
    std::int64_t n_samples = 0;
  };
  std::vector<Segment> segs;
  for (char c : text) {
    Segment s;
    s.n_samples = static_cast<std::int64_t>(detail::symbol_seconds(c) * kSampleRate);
    if (c >= 'a' && c <= 'z') {
      detail::symbol_formants(c, &s.f1, &s.f2);
      s.gain = 1.0;
    }
    segs.push_back(s);
  }

  std::int64_t total = 0;
  for (const auto& s : segs) total += s.n_samples;

  const int n_harm = 24;
  std::vector<double> phase(n_harm, 0.0);
  Rng noise = Rng(seed).stream("synth-noise");
  std::uint64_t nc = 0;

  Waveform w;
  w.sample_rate = kSampleRate;
  w.samples.resize(static_cast<std::size_t>(total));

  const double xfade = 0.012 * kSampleRate;
  std::int64_t seg_start = 0;
  std::size_t seg_idx = 0;
  double peak = 0.0;
  for (std::int64_t i = 0; i < total; ++i) {
    while (seg_idx + 1 < segs.size() &&
           i >= seg_start + segs[seg_idx].n_samples) {
      seg_start += segs[seg_idx].n_samples;
      ++seg_idx;
    }
    const Segment& cur = segs[seg_idx];
    double f1 = cur.f1, f2 = cur.f2, gain = cur.gain;
    double into = static_cast<double>(i - seg_start);
    if (seg_idx > 0 && into < xfade) {
      const Segment& prev = segs[seg_idx - 1];
      double a = into / xfade;
      f1 = a * cur.f1 + (1.0 - a) * prev.f1;
      f2 = a * cur.f2 + (1.0 - a) * prev.f2;
      gain = a * cur.gain + (1.0 - a) * prev.gain;
    }

    double t = static_cast<double>(i) / kSampleRate;
    double f0 = voice.f0 *
                (1.0 + voice.vibrato_depth * std::sin(2.0 * M_PI * voice.vibrato_rate * t));
    double sample = 0.0;
    for (int h = 1; h <= n_harm; ++h) {
      double fh = f0 * h;
      if (fh > 7500.0) break;
      phase[static_cast<std::size_t>(h - 1)] += 2.0 * M_PI * fh / kSampleRate;
      if (gain <= 0.0) continue;
      double d1 = (fh - f1) / 140.0;
      double d2 = (fh - f2) / 210.0;
      double amp = std::exp(-d1 * d1) +
                   0.6 * voice.brightness * std::exp(-d2 * d2) +
                   0.05 / static_cast<double>(h);
      sample += amp * std::sin(phase[static_cast<std::size_t>(h - 1)]);
    }
    sample = gain * sample + 0.002 * noise.normal(nc++);
    w.samples[static_cast<std::size_t>(i)] = sample;
    peak = std::max(peak, std::abs(sample));
  }
  double scale = peak > 0.0 ? 0.6 / peak : 1.0;
  for (auto& s : w.samples) s *= scale;
  return w;
}

struct ToyUtterance {
  std::string speaker;
  std::int64_t speaker_label = 0;
  std::string text;
  Waveform audio;
};

// Every speaker reads the same lines; only the voice differs. `takes` > 1
// re-records each line with a different noise seed.
inline std::vector<ToyUtterance> make_toy_corpus(int n_speakers, int lines_per_speaker,
                                                 std::uint64_t seed, int takes = 1) {
  auto voices = default_voices(n_speakers);
  auto texts = toy_transcripts(lines_per_speaker);
  std::vector<ToyUtterance> out;
  for (int k = 0; k < n_speakers; ++k)
    for (int i = 0; i < lines_per_speaker; ++i)
      for (int r = 0; r < takes; ++r) {
        ToyUtterance u;
        u.speaker = voices[static_cast<std::size_t>(k)].name;
        u.speaker_label = k;
        u.text = texts[static_cast<std::size_t>(i)];
        u.audio = synth_utterance(
            u.text, voices[static_cast<std::size_t>(k)],
            seed + static_cast<std::uint64_t>((k * lines_per_speaker + i) * 131 + r));
        out.push_back(std::move(u));
      }
  return out;
}

// root/<speaker>/<line>.wav with a transcript sibling, the flat layout the
// manifest builder understands.
inline void write_toy_corpus(const std::vector<ToyUtterance>& utts,
                             const std::string& root) {
  namespace fs = std::filesystem;
  std::map<std::string, int> counter;
  for (const auto& u : utts) {
    fs::path dir = fs::path(root) / u.speaker;
    fs::create_directories(dir);
    int n = counter[u.speaker]++;
    char name[32];
    std::snprintf(name, sizeof(name), "line%03d", n);
    write_wav16((dir / (std::string(name) + ".wav")).string(), u.audio);
    std::string line = u.text + "\n";
    write_file_bytes((dir / (std::string(name) + ".txt")).string(),
                     std::vector<std::uint8_t>(line.begin(), line.end()));
  }
}

inline Dataset to_dataset(const std::vector<ToyUtterance>& utts,
                          const SymbolTable& table, const MelConfig& cfg = {}) {
  Dataset data;
  for (const auto& u : utts) {
    TrainItem item;
    item.mel = mel_spectrogram(u.audio, cfg);
    item.ids = tokenize(u.text, table).seq.ids;
    item.speaker_label = u.speaker_label;
    item.source_id = u.speaker + "/" + u.text;
    data.push_back(std::move(item));
  }
  return data;
}

}  // namespace cota
