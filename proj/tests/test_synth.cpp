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

#include <filesystem>

#include "cotatron/corpus.hpp"
#include "cotatron/synth.hpp"

using namespace cota;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("cota_synth_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("synthetic speech is deterministic") {
  auto v = default_voices(2);
  Waveform a = synth_utterance("lima tesa", v[0], 5);
  Waveform b = synth_utterance("lima tesa", v[0], 5);
  REQUIRE(a.samples.size() == b.samples.size());
  CHECK(a.samples == b.samples);
  Waveform c = synth_utterance("lima tesa", v[0], 6);
  CHECK(a.samples != c.samples);
}

TEST_CASE("rhythm is fixed by the text, not the voice") {
  auto v = default_voices(4);
  std::size_t len = synth_utterance("bodo kane", v[0], 1).samples.size();
  for (int k = 1; k < 4; ++k)
    CHECK(synth_utterance("bodo kane", v[static_cast<std::size_t>(k)], 1).samples.size() ==
          len);
  CHECK(synth_utterance("sefu rilo", v[0], 1).samples.size() != len);
}

TEST_CASE("voices actually differ") {
  auto v = default_voices(2);
  Waveform a = synth_utterance("gana mipe", v[0], 3);
  Waveform b = synth_utterance("gana mipe", v[1], 3);
  REQUIRE(a.samples.size() == b.samples.size());
  double diff = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    diff += std::abs(a.samples[i] - b.samples[i]);
  CHECK(diff / static_cast<double>(a.samples.size()) > 0.01);
}

TEST_CASE("toy corpus covers speakers, lines, and takes") {
  auto utts = make_toy_corpus(3, 4, 9, 2);
  REQUIRE(utts.size() == 24);
  std::set<std::string> speakers, texts;
  for (const auto& u : utts) {
    speakers.insert(u.speaker);
    texts.insert(u.text);
    CHECK(u.audio.samples.size() > 4096);
    CHECK(u.audio.sample_rate == kSampleRate);
    CHECK(u.speaker_label >= 0);
    CHECK(u.speaker_label < 3);
  }
  CHECK(speakers.size() == 3);
  CHECK(texts.size() == 4);
}

TEST_CASE("written corpus scans back into a full manifest") {
  TempDir tmp;
  auto utts = make_toy_corpus(2, 3, 14);
  write_toy_corpus(utts, tmp.path.string());
  BuildReport rep = build_manifest(tmp.path.string(), "vctk-like");
  rep.manifest.check();
  CHECK(rep.skipped == 0);
  REQUIRE(rep.manifest.size() == 6);
  std::set<std::string> speakers;
  for (const auto& u : rep.manifest.utterances) {
    speakers.insert(u.speaker_id);
    CHECK(!u.transcript.empty());
    CHECK(u.duration_sec > 0.2);
  }
  CHECK(speakers == std::set<std::string>{"ada", "bee"});
}

TEST_CASE("dataset rows line up with the utterances") {
  SymbolTable table = SymbolTable::make_default();
  MelConfig cfg;
  cfg.n_mels = 32;
  auto utts = make_toy_corpus(2, 2, 5);
  Dataset data = to_dataset(utts, table, cfg);
  REQUIRE(data.size() == 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(data[i].mel.dim(0) ==
          frame_count(static_cast<std::int64_t>(utts[i].audio.samples.size()), cfg.hop));
    CHECK(data[i].mel.dim(1) == 32);
    CHECK(data[i].ids.size() == utts[i].text.size());
    CHECK(data[i].speaker_label == utts[i].speaker_label);
  }
}
