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

// Transcript handling: a fixed symbol inventory of graphemes plus ARPAbet
// phonemes, Tacotron2-style normalization, and per-word grapheme-to-phoneme
// mixing against a pronouncing dictionary. Phoneme symbols carry an "@"
// prefix in the table so the two alphabets cannot collide.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cotatron/common.hpp"
#include "cotatron/rng.hpp"

namespace cota {

struct SymbolTable {
  std::vector<std::string> symbols;
  std::unordered_map<std::string, std::int64_t> index;
  std::int64_t pad_id = 0;
  std::int64_t boundary_id = 1;
  std::int64_t grapheme_begin = 0, grapheme_end = 0;  // [begin, end)
  std::int64_t phoneme_begin = 0, phoneme_end = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(symbols.size()); }

  std::int64_t lookup(const std::string& s) const {
    auto it = index.find(s);
    return it == index.end() ? -1 : it->second;
  }

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < symbols.size(); ++i)
      index[symbols[i]] = static_cast<std::int64_t>(i);
    COTA_CHECK(index.size() == symbols.size(), "symbol table has duplicates");
  }

  static const std::vector<std::string>& arpabet() {
    static const std::vector<std::string> phones = {
        "AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH",
        "EH", "ER", "EY", "F",  "G",  "HH", "IH", "IY", "JH", "K",
        "L",  "M",  "N",  "NG", "OW", "OY", "P",  "R",  "S",  "SH",
        "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
    return phones;
  }

  static SymbolTable make_default() {
    SymbolTable t;
    t.symbols = {"_", "~"};
    t.grapheme_begin = 2;
    const std::string punct = "!'(),-.:;?";
    t.symbols.emplace_back(" ");
    for (char c : punct) t.symbols.emplace_back(1, c);
    for (char c = 'a'; c <= 'z'; ++c) t.symbols.emplace_back(1, c);
    t.grapheme_end = static_cast<std::int64_t>(t.symbols.size());
    t.phoneme_begin = t.grapheme_end;
    for (const auto& p : arpabet()) t.symbols.push_back("@" + p);
    t.phoneme_end = static_cast<std::int64_t>(t.symbols.size());
    t.rebuild_index();
    return t;
  }

  bool is_punct_or_space(std::int64_t id) const {
    return id >= grapheme_begin && id < grapheme_begin + 11;
  }

  std::string to_json() const {
    nlohmann::json j = symbols;
    return j.dump();
  }

  // Counterpart of to_json; the marker/range layout is recomputed, so only
  // tables with the default structure round-trip.
  static SymbolTable from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    COTA_CHECK(j.is_array(), "symbol table JSON must be an array");
    SymbolTable t;
    for (const auto& e : j) {
      COTA_CHECK(e.is_string(), "symbol table entries must be strings");
      t.symbols.push_back(e.get<std::string>());
    }
    COTA_CHECK(t.symbols.size() >= 3, "symbol table too small");
    t.rebuild_index();
    t.grapheme_begin = 2;
    t.phoneme_begin = t.size();
    for (std::size_t i = 0; i < t.symbols.size(); ++i)
      if (t.symbols[i].size() > 1 && t.symbols[i][0] == '@') {
        t.phoneme_begin = static_cast<std::int64_t>(i);
        break;
      }
    t.grapheme_end = t.phoneme_begin;
    t.phoneme_end = t.size();
    return t;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& s : symbols) {
      for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
      }
      h ^= '\n';
      h *= 1099511628211ull;
    }
    return h;
  }
};

struct SymbolSequence {
  std::vector<std::int64_t> ids;
  std::int64_t length() const { return static_cast<std::int64_t>(ids.size()); }
};

struct TokenizeResult {
  SymbolSequence seq;
  int dropped = 0;  // unknown characters silently removed, surfaced as a count
};

namespace detail {
inline std::string normalize_text(const std::string& text) {
  std::string out;
  bool prev_space = true;  // suppress leading spaces
  for (char raw : text) {
    unsigned char u = static_cast<unsigned char>(raw);
    char c = static_cast<char>(std::tolower(u));
    if (std::isspace(u)) {
      if (!prev_space) {
        out.push_back(' ');
        prev_space = true;
      }
    } else {
      out.push_back(c);
      prev_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}
}  // namespace detail

inline TokenizeResult tokenize(const std::string& text, const SymbolTable& table) {
  std::string norm = detail::normalize_text(text);
  TokenizeResult res;
  for (char c : norm) {
    std::int64_t id = table.lookup(std::string(1, c));
    if (id < 0)
      ++res.dropped;
    else
      res.seq.ids.push_back(id);
  }
  COTA_CHECK(!res.seq.ids.empty(), "transcript empty after normalization: \"",
             text, "\"");
  return res;
}

// ---------------------------------------------------------------------------
// Pronouncing lexicon (CMU dictionary format)
// ---------------------------------------------------------------------------

struct Lexicon {
  // lowercase word -> phones with stress digits removed
  std::unordered_map<std::string, std::vector<std::string>> entries;

  static Lexicon from_text(const std::string& text) {
    Lexicon lex;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line.rfind(";;;", 0) == 0) continue;
      std::istringstream ls(line);
      std::string word;
      ls >> word;
      if (word.empty()) continue;
      // alternate pronunciations look like WORD(1); first one wins
      auto paren = word.find('(');
      if (paren != std::string::npos) continue;
      for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (lex.entries.count(word)) continue;
      std::vector<std::string> phones;
      std::string ph;
      while (ls >> ph) {
        while (!ph.empty() && std::isdigit(static_cast<unsigned char>(ph.back())))
          ph.pop_back();
        if (!ph.empty()) phones.push_back(ph);
      }
      if (!phones.empty()) lex.entries.emplace(std::move(word), std::move(phones));
    }
    return lex;
  }

  static Lexicon load(const std::string& path) {
    std::ifstream f(path);
    COTA_CHECK_IO(f.good(), "cannot open lexicon: ", path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
  }

  const std::vector<std::string>* find(const std::string& word) const {
    auto it = entries.find(word);
    return it == entries.end() ? nullptr : &it->second;
  }
};

// Per-word grapheme/phoneme mixing. Each word flips its own coin (counter =
// word position) so the outcome for a given (seed, text) never depends on
// what surrounds the utterance. Punctuation sticks to the word but is never
// itself replaced.
inline TokenizeResult mix_representation(const std::string& text,
                                         const SymbolTable& table,
                                         const Lexicon& lexicon, double p,
                                         const Rng& rng) {
  COTA_CHECK(p >= 0.0 && p <= 1.0, "mixing probability must be in [0,1]");
  std::string norm = detail::normalize_text(text);
  TokenizeResult res;
  std::istringstream words(norm);
  std::string word;
  std::uint64_t word_idx = 0;
  bool first = true;
  while (words >> word) {
    if (!first) res.seq.ids.push_back(table.lookup(" "));
    first = false;
    // peel punctuation off both ends
    std::size_t lo = 0, hi = word.size();
    auto is_punct = [&](char c) {
      std::int64_t id = table.lookup(std::string(1, c));
      return id >= 0 && table.is_punct_or_space(id);
    };
    while (lo < hi && is_punct(word[lo])) ++lo;
    while (hi > lo && is_punct(word[hi - 1])) --hi;
    std::string core = word.substr(lo, hi - lo);

    auto emit_graphemes = [&](const std::string& s) {
      for (char c : s) {
        std::int64_t id = table.lookup(std::string(1, c));
        if (id < 0)
          ++res.dropped;
        else
          res.seq.ids.push_back(id);
      }
    };

    emit_graphemes(word.substr(0, lo));
    const std::vector<std::string>* phones =
        core.empty() ? nullptr : lexicon.find(core);
    bool replace = phones && p > 0.0 && rng.uniform(word_idx) < p;
    if (replace) {
      for (const auto& ph : *phones) {
        std::int64_t id = table.lookup("@" + ph);
        if (id < 0)
          ++res.dropped;
        else
          res.seq.ids.push_back(id);
      }
    } else {
      emit_graphemes(core);
    }
    emit_graphemes(word.substr(hi));
    ++word_idx;
  }
  COTA_CHECK(!res.seq.ids.empty(), "transcript empty after normalization: \"",
             text, "\"");
  return res;
}

}  // namespace cota
