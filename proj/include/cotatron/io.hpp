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

// On-disk containers. Three formats share one byte-level vocabulary
// (little-endian integers, length-prefixed strings, row-major float blocks):
//
//   COTA-MEL  one [T x n_mels] float32 matrix (mel spectrograms)
//   COTA-FEA  per-utterance feature records keyed by manifest row
//   COTA-CKP  named float64 tensors plus run metadata; round-trips bit-exactly
//
// Plus the flat `key: value` config format and a JSON-lines log writer.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cotatron/common.hpp"
#include "cotatron/tensor.hpp"

namespace cota {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

struct ByteCursor {
  const std::uint8_t* p;
  const std::uint8_t* end;
  std::string where;

  void need(std::size_t n) const {
    COTA_CHECK_IO(static_cast<std::size_t>(end - p) >= n, "truncated file: ", where);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }
};

inline void write_atomic(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    COTA_CHECK_IO(f.good(), "cannot write: ", tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    COTA_CHECK_IO(f.good(), "short write: ", tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  COTA_CHECK_IO(!ec, "cannot rename ", tmp, " -> ", path, ": ", ec.message());
}

inline std::string read_bytes_str(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  COTA_CHECK_IO(f.good(), "cannot open: ", path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// float32 payloads are stored via their bit pattern so a decode/encode cycle
// is byte-identical regardless of rounding mode
inline void put_f32_block(std::string& out, const Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    float f = static_cast<float>(t.data[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

inline void get_f32_block(ByteCursor& c, Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    std::uint32_t bits = c.u32();
    float f;
    std::memcpy(&f, &bits, 4);
    t.data[i] = static_cast<double>(f);
  }
}

inline void put_f64_block(std::string& out, const Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    std::uint64_t bits;
    double d = t.data[i];
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
  }
}

inline void get_f64_block(ByteCursor& c, Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    std::uint64_t bits = c.u64();
    double d;
    std::memcpy(&d, &bits, 8);
    t.data[i] = d;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// COTA-MEL
// ---------------------------------------------------------------------------

inline void save_mel(const Tensor& mel, const std::string& path) {
  COTA_CHECK(mel.rank() == 2, "mel must be [T, n_mels], got rank ", mel.rank());
  std::string out;
  out.append("COTA-MEL");
  detail::put_u32(out, kFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(mel.dim(0)));
  detail::put_u32(out, static_cast<std::uint32_t>(mel.dim(1)));
  detail::put_f32_block(out, mel);
  detail::write_atomic(path, out);
}

inline Tensor load_mel(const std::string& path) {
  std::string bytes = detail::read_bytes_str(path);
  COTA_CHECK_IO(bytes.size() >= 8 && bytes.compare(0, 8, "COTA-MEL") == 0,
                "not a mel archive: ", path);
  detail::ByteCursor c{reinterpret_cast<const std::uint8_t*>(bytes.data()) + 8,
                       reinterpret_cast<const std::uint8_t*>(bytes.data()) + bytes.size(),
                       path};
  std::uint32_t ver = c.u32();
  COTA_CHECK_IO(ver == kFormatVersion, "unsupported mel format version ", ver);
  std::int64_t t = c.u32(), n = c.u32();
  Tensor mel({t, n});
  detail::get_f32_block(c, mel);
  COTA_CHECK_IO(c.p == c.end, "trailing bytes in ", path);
  return mel;
}

// ---------------------------------------------------------------------------
// COTA-FEA
// ---------------------------------------------------------------------------

struct FeatureRecord {
  std::uint32_t manifest_row = 0;
  Tensor linguistic;  // [T, E_text]
  Tensor residual;    // [T, 1]
};

inline void save_features(const std::vector<FeatureRecord>& records,
                          const std::string& path) {
  std::string out;
  out.append("COTA-FEA");
  detail::put_u32(out, kFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    COTA_CHECK(r.linguistic.rank() == 2 && r.residual.rank() == 2 &&
                   r.residual.dim(1) == 1 &&
                   r.linguistic.dim(0) == r.residual.dim(0),
               "malformed feature record for row ", r.manifest_row);
    detail::put_u32(out, r.manifest_row);
    detail::put_u32(out, static_cast<std::uint32_t>(r.linguistic.dim(0)));
    detail::put_u32(out, static_cast<std::uint32_t>(r.linguistic.dim(1)));
    detail::put_f32_block(out, r.linguistic);
    detail::put_u32(out, static_cast<std::uint32_t>(r.residual.dim(0)));
    detail::put_u32(out, static_cast<std::uint32_t>(r.residual.dim(1)));
    detail::put_f32_block(out, r.residual);
  }
  detail::write_atomic(path, out);
}

inline std::vector<FeatureRecord> load_features(const std::string& path) {
  std::string bytes = detail::read_bytes_str(path);
  COTA_CHECK_IO(bytes.size() >= 8 && bytes.compare(0, 8, "COTA-FEA") == 0,
                "not a feature archive: ", path);
  detail::ByteCursor c{reinterpret_cast<const std::uint8_t*>(bytes.data()) + 8,
                       reinterpret_cast<const std::uint8_t*>(bytes.data()) + bytes.size(),
                       path};
  std::uint32_t ver = c.u32();
  COTA_CHECK_IO(ver == kFormatVersion, "unsupported feature format version ", ver);
  std::uint32_t n = c.u32();
  std::vector<FeatureRecord> records(n);
  for (auto& r : records) {
    r.manifest_row = c.u32();
    std::int64_t lt = c.u32(), le = c.u32();
    r.linguistic = Tensor({lt, le});
    detail::get_f32_block(c, r.linguistic);
    std::int64_t rt = c.u32(), rc = c.u32();
    COTA_CHECK_IO(rc == 1 && rt == lt, "malformed residual block in ", path);
    r.residual = Tensor({rt, rc});
    detail::get_f32_block(c, r.residual);
  }
  COTA_CHECK_IO(c.p == c.end, "trailing bytes in ", path);
  return records;
}

// ---------------------------------------------------------------------------
// COTA-CKP
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::uint64_t step = 0;
  std::uint64_t symbol_table_hash = 0;
  std::string config_json = "{}";
  // parameters plus optimizer slots, e.g. "param/enc.w", "adam_m/enc.w"
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const Checkpoint& ckp, const std::string& path) {
  std::string out;
  out.append("COTA-CKP");
  detail::put_u32(out, kFormatVersion);
  detail::put_u64(out, ckp.step);
  detail::put_u64(out, ckp.symbol_table_hash);
  detail::put_str(out, ckp.config_json);
  detail::put_u32(out, static_cast<std::uint32_t>(ckp.tensors.size()));
  for (const auto& [name, t] : ckp.tensors) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d = 0; d < t.rank(); ++d)
      detail::put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
    detail::put_f64_block(out, t);
  }
  detail::write_atomic(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes = detail::read_bytes_str(path);
  COTA_CHECK_IO(bytes.size() >= 8 && bytes.compare(0, 8, "COTA-CKP") == 0,
                "not a checkpoint: ", path);
  detail::ByteCursor c{reinterpret_cast<const std::uint8_t*>(bytes.data()) + 8,
                       reinterpret_cast<const std::uint8_t*>(bytes.data()) + bytes.size(),
                       path};
  std::uint32_t ver = c.u32();
  COTA_CHECK_IO(ver == kFormatVersion, "unsupported checkpoint version ", ver);
  Checkpoint ckp;
  ckp.step = c.u64();
  ckp.symbol_table_hash = c.u64();
  ckp.config_json = c.str();
  std::uint32_t n = c.u32();
  ckp.tensors.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = c.str();
    std::uint32_t rank = c.u32();
    COTA_CHECK_IO(rank >= 1 && rank <= 4, "bad tensor rank in ", path);
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) d = c.u32();
    Tensor t(shape);
    detail::get_f64_block(c, t);
    ckp.tensors.emplace_back(std::move(name), std::move(t));
  }
  COTA_CHECK_IO(c.p == c.end, "trailing bytes in ", path);
  return ckp;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

// Flat `key: value` lines; '#' starts a comment; later keys win. A YAML
// parser would accept every file this writes.
struct Config {
  std::map<std::string, std::string> values;

  static Config parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        std::size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      auto colon = line.find(':');
      COTA_CHECK(colon != std::string::npos, "config line ", lineno,
                 " is not `key: value`: ", line);
      std::string key = trim(line.substr(0, colon));
      std::string val = trim(line.substr(colon + 1));
      COTA_CHECK(!key.empty(), "config line ", lineno, " has empty key");
      cfg.values[key] = val;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    COTA_CHECK_IO(f.good(), "cannot open config: ", path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values.count(key) != 0; }

  void set(const std::string& key, const std::string& val) { values[key] = val; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      COTA_CHECK(pos == it->second.size(), "trailing junk");
      return v;
    } catch (const std::exception&) {
      throw ValidationError("config key '" + key + "' is not a number: " + it->second);
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
      std::size_t pos = 0;
      std::int64_t v = std::stoll(it->second, &pos);
      COTA_CHECK(pos == it->second.size(), "trailing junk");
      return v;
    } catch (const std::exception&) {
      throw ValidationError("config key '" + key + "' is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config key '" + key + "' is not a boolean: " + v);
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values) out += k + ": " + v + "\n";
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values) j[k] = v;
    return j;
  }
};

// ---------------------------------------------------------------------------
// JSON-lines log
// ---------------------------------------------------------------------------

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : f_(path, std::ios::app) {
    COTA_CHECK_IO(f_.good(), "cannot open log: ", path);
  }

  void write(const nlohmann::json& j) {
    f_ << j.dump() << "\n";
    f_.flush();
  }

 private:
  std::ofstream f_;
};

}  // namespace cota
