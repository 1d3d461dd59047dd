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

// Dataset plumbing: manifest construction from the common corpus layouts,
// duration/speaker filters, and the transcript-keyed split. Transcripts are
// the unit of splitting; every utterance follows its (normalized)
// transcript, so the same sentence can never appear on both sides of a
// train/test boundary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cotatron/audio_io.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/text_frontend.hpp"

namespace cota {

struct Utterance {
  std::string audio_path;
  std::string speaker_id;
  std::string transcript;
  double duration_sec = 0.0;
};

struct Manifest {
  std::vector<Utterance> utterances;
  std::string split_tag = "unsplit";  // train | val | test | unsplit

  std::int64_t size() const { return static_cast<std::int64_t>(utterances.size()); }

  void check() const {
    std::unordered_set<std::string> seen;
    for (const auto& u : utterances) {
      COTA_CHECK(!u.audio_path.empty() && !u.speaker_id.empty() &&
                     !u.transcript.empty() && u.duration_sec > 0.0,
                 "malformed utterance: ", u.audio_path);
      COTA_CHECK(seen.insert(u.audio_path).second, "duplicate audio path: ",
                 u.audio_path);
    }
  }
};

struct BuildReport {
  Manifest manifest;
  int skipped = 0;  // audio files without a usable transcript
};

// ---------------------------------------------------------------------------
// Header probing
// ---------------------------------------------------------------------------

struct AudioInfo {
  int sample_rate = 0;
  std::int64_t n_samples = 0;
  double seconds() const {
    return static_cast<double>(n_samples) / sample_rate;
  }
};

// Reads just enough of the container to learn rate and sample count.
inline AudioInfo probe_audio_info(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  COTA_CHECK_IO(f.good(), "cannot open audio: ", path);
  char head[12];
  f.read(head, 12);
  COTA_CHECK_IO(f.good(), "short audio file: ", path);
  AudioInfo info;
  if (std::memcmp(head, "RIFF", 4) == 0 && std::memcmp(head + 8, "WAVE", 4) == 0) {
    int channels = 0, bits = 0;
    while (true) {
      char ch[8];
      f.read(ch, 8);
      if (!f.good()) break;
      std::uint32_t len = detail::rd_u32le(reinterpret_cast<std::uint8_t*>(ch) + 4);
      if (std::memcmp(ch, "fmt ", 4) == 0) {
        char body[16];
        f.read(body, 16);
        COTA_CHECK_IO(f.good(), "truncated fmt chunk: ", path);
        auto* b = reinterpret_cast<std::uint8_t*>(body);
        channels = detail::rd_u16le(b + 2);
        info.sample_rate = static_cast<int>(detail::rd_u32le(b + 4));
        bits = detail::rd_u16le(b + 14);
        f.seekg(len - 16 + (len & 1), std::ios::cur);
      } else if (std::memcmp(ch, "data", 4) == 0) {
        COTA_CHECK_IO(channels > 0 && bits >= 8, "data chunk before fmt: ", path);
        info.n_samples = static_cast<std::int64_t>(len) / (channels * bits / 8);
        break;
      } else {
        f.seekg(len + (len & 1), std::ios::cur);
      }
    }
  } else if (std::memcmp(head, "fLaC", 4) == 0) {
    f.seekg(4);
    bool last = false;
    while (!last) {
      char bh[4];
      f.read(bh, 4);
      COTA_CHECK_IO(f.good(), "truncated FLAC metadata: ", path);
      auto* b = reinterpret_cast<std::uint8_t*>(bh);
      last = (b[0] & 0x80) != 0;
      int type = b[0] & 0x7F;
      std::uint32_t len = (static_cast<std::uint32_t>(b[1]) << 16) |
                          (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
      if (type == 0) {
        char si[34];
        f.read(si, 34);
        COTA_CHECK_IO(f.good(), "truncated STREAMINFO: ", path);
        auto* s = reinterpret_cast<std::uint8_t*>(si);
        info.sample_rate = (s[10] << 12) | (s[11] << 4) | (s[12] >> 4);
        info.n_samples = static_cast<std::int64_t>(
            (static_cast<std::uint64_t>(s[13] & 0xF) << 32) |
            (static_cast<std::uint64_t>(s[14]) << 24) |
            (static_cast<std::uint64_t>(s[15]) << 16) |
            (static_cast<std::uint64_t>(s[16]) << 8) | s[17]);
        break;
      }
      f.seekg(len, std::ios::cur);
    }
  } else {
    COTA_CHECK_IO(false, "unrecognized audio container: ", path);
  }
  COTA_CHECK_IO(info.sample_rate > 0 && info.n_samples > 0,
                "could not determine duration: ", path);
  return info;
}

// ---------------------------------------------------------------------------
// Manifest TSV
// ---------------------------------------------------------------------------

inline constexpr const char* kManifestHeader =
    "audio_path\tspeaker_id\ttranscript\tduration_sec";

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  COTA_CHECK_IO(f.good(), "cannot write manifest: ", path);
  f << kManifestHeader << "\n";
  for (const auto& u : m.utterances) {
    COTA_CHECK(u.transcript.find('\t') == std::string::npos &&
                   u.transcript.find('\n') == std::string::npos,
               "transcript contains tab or newline: ", u.audio_path);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", u.duration_sec);
    f << u.audio_path << '\t' << u.speaker_id << '\t' << u.transcript << '\t'
      << buf << "\n";
  }
  COTA_CHECK_IO(f.good(), "short manifest write: ", path);
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  COTA_CHECK_IO(f.good(), "cannot open manifest: ", path);
  std::string line;
  COTA_CHECK_IO(static_cast<bool>(std::getline(f, line)), "empty manifest: ", path);
  COTA_CHECK(line == kManifestHeader, "unexpected manifest header in ", path, ": ",
             line);
  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    COTA_CHECK(cols.size() == 4, "manifest line ", lineno, " has ", cols.size(),
               " columns: ", path);
    Utterance u;
    u.audio_path = cols[0];
    u.speaker_id = cols[1];
    u.transcript = cols[2];
    try {
      u.duration_sec = std::stod(cols[3]);
    } catch (const std::exception&) {
      COTA_CHECK(false, "bad duration on line ", lineno, ": ", cols[3]);
    }
    m.utterances.push_back(std::move(u));
  }
  m.check();
  return m;
}

// ---------------------------------------------------------------------------
// Layout scanners
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_text_file_trimmed(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) return {};
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' '))
    s.pop_back();
  return s;
}

inline bool is_audio_file(const std::filesystem::path& p) {
  auto e = p.extension().string();
  for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e == ".wav" || e == ".flac";
}

inline std::vector<std::filesystem::path> sorted_audio_files(
    const std::filesystem::path& dir, bool recursive) {
  std::vector<std::filesystem::path> out;
  if (recursive) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
      if (e.is_regular_file() && is_audio_file(e.path())) out.push_back(e.path());
  } else {
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && is_audio_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Layouts:
//   vctk-like:    root/wav48/<spk>/<utt>.wav with root/txt/<spk>/<utt>.txt
//                 (or audio directly under root/<spk>/ with .txt siblings)
//   libritts-like: root/<spk>/<chapter>/<utt>.wav with
//                 <utt>.normalized.txt or <utt>.txt next to the audio
//   flat-tsv:     root is a manifest TSV file
inline BuildReport build_manifest(const std::string& root, const std::string& layout) {
  namespace fs = std::filesystem;
  BuildReport rep;
  if (layout == "flat-tsv") {
    COTA_CHECK(fs::is_regular_file(root), "flat-tsv layout expects a TSV file: ", root);
    rep.manifest = load_manifest(root);
    return rep;
  }
  COTA_CHECK(fs::is_directory(root), "corpus root is not a directory: ", root);

  auto add = [&](const fs::path& audio, const std::string& spk,
                 const fs::path& txt) {
    std::string transcript = detail::read_text_file_trimmed(txt.string());
    if (transcript.empty()) {
      ++rep.skipped;
      return;
    }
    Utterance u;
    u.audio_path = audio.string();
    u.speaker_id = spk;
    u.transcript = transcript;
    u.duration_sec = probe_audio_info(audio.string()).seconds();
    rep.manifest.utterances.push_back(std::move(u));
  };

  if (layout == "vctk-like") {
    fs::path wav_root = fs::path(root) / "wav48";
    fs::path txt_root = fs::path(root) / "txt";
    bool nested = fs::is_directory(wav_root);
    fs::path scan = nested ? wav_root : fs::path(root);
    std::vector<fs::path> spk_dirs;
    for (const auto& e : fs::directory_iterator(scan))
      if (e.is_directory()) spk_dirs.push_back(e.path());
    std::sort(spk_dirs.begin(), spk_dirs.end());
    for (const auto& sd : spk_dirs) {
      std::string spk = sd.filename().string();
      for (const auto& audio : detail::sorted_audio_files(sd, false)) {
        fs::path txt = nested
                           ? txt_root / spk / (audio.stem().string() + ".txt")
                           : fs::path(audio).replace_extension(".txt");
        add(audio, spk, txt);
      }
    }
  } else if (layout == "libritts-like") {
    std::vector<fs::path> spk_dirs;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) spk_dirs.push_back(e.path());
    std::sort(spk_dirs.begin(), spk_dirs.end());
    for (const auto& sd : spk_dirs) {
      std::string spk = sd.filename().string();
      for (const auto& audio : detail::sorted_audio_files(sd, true)) {
        fs::path norm = fs::path(audio).replace_extension(".normalized.txt");
        fs::path plain = fs::path(audio).replace_extension(".txt");
        add(audio, spk, fs::exists(norm) ? norm : plain);
      }
    }
  } else {
    COTA_CHECK(false, "unknown corpus layout: ", layout);
  }
  rep.manifest.check();
  return rep;
}

// ---------------------------------------------------------------------------
// Filters
// ---------------------------------------------------------------------------

inline Manifest filter_duration(const Manifest& m, double max_seconds) {
  COTA_CHECK(max_seconds > 0.0, "max_seconds must be positive");
  Manifest out;
  out.split_tag = m.split_tag;
  for (const auto& u : m.utterances)
    if (u.duration_sec <= max_seconds) out.utterances.push_back(u);
  return out;
}

inline Manifest filter_speaker_minutes(const Manifest& m, double min_minutes) {
  COTA_CHECK(min_minutes > 0.0, "min_minutes must be positive");
  std::unordered_map<std::string, double> total;
  for (const auto& u : m.utterances) total[u.speaker_id] += u.duration_sec;
  Manifest out;
  out.split_tag = m.split_tag;
  for (const auto& u : m.utterances)
    if (total[u.speaker_id] >= min_minutes * 60.0) out.utterances.push_back(u);
  return out;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct Splits {
  Manifest train, val, test;
};

// Unique normalized transcripts are shuffled under the seed and partitioned;
// val and test take floor(fraction * n) transcripts each, train the rest.
inline Splits split_by_transcription(const Manifest& m,
                                     double f_train, double f_val, double f_test,
                                     std::uint64_t seed) {
  COTA_CHECK(std::abs(f_train + f_val + f_test - 1.0) < 1e-9,
             "split fractions must sum to 1");
  COTA_CHECK(f_train > 0.0 && f_val >= 0.0 && f_test >= 0.0, "bad split fractions");

  std::vector<std::string> keys;  // first-appearance order
  std::unordered_map<std::string, std::size_t> key_index;
  std::vector<std::size_t> utt_key(static_cast<std::size_t>(m.size()));
  for (std::size_t i = 0; i < m.utterances.size(); ++i) {
    std::string k = detail::normalize_text(m.utterances[i].transcript);
    auto [it, fresh] = key_index.try_emplace(k, keys.size());
    if (fresh) keys.push_back(k);
    utt_key[i] = it->second;
  }
  COTA_CHECK(keys.size() >= 3, "need at least 3 unique transcripts to split, have ",
             keys.size());

  std::vector<std::size_t> order(keys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng(seed).stream("transcript-split").shuffle(order);

  std::size_t n = keys.size();
  std::size_t n_val = static_cast<std::size_t>(std::floor(f_val * static_cast<double>(n)));
  std::size_t n_test = static_cast<std::size_t>(std::floor(f_test * static_cast<double>(n)));
  std::size_t n_train = n - n_val - n_test;

  // 0 = train, 1 = val, 2 = test, keyed by transcript
  std::vector<int> bucket(n);
  for (std::size_t r = 0; r < n; ++r)
    bucket[order[r]] = r < n_train ? 0 : (r < n_train + n_val ? 1 : 2);

  Splits s;
  s.train.split_tag = "train";
  s.val.split_tag = "val";
  s.test.split_tag = "test";
  for (std::size_t i = 0; i < m.utterances.size(); ++i) {
    switch (bucket[utt_key[i]]) {
      case 0: s.train.utterances.push_back(m.utterances[i]); break;
      case 1: s.val.utterances.push_back(m.utterances[i]); break;
      default: s.test.utterances.push_back(m.utterances[i]);
    }
  }
  return s;
}

inline void save_splits(const Splits& s, const std::string& stem) {
  save_manifest(s.train, stem + ".train.tsv");
  save_manifest(s.val, stem + ".val.tsv");
  save_manifest(s.test, stem + ".test.tsv");
}

}  // namespace cota
