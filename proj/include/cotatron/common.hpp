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

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cota {

inline constexpr const char* kVersionString = "0.1.0";
inline constexpr std::uint32_t kFormatVersion = 1;

// Invalid user input or broken contract preconditions.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / decoding failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A name or id that is absent from the table it was looked up in.
class LookupError : public std::runtime_error {
 public:
  explicit LookupError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

#define COTA_CHECK(cond, ...)                                          \
  do {                                                                 \
    if (!(cond))                                                       \
      throw ::cota::ValidationError(::cota::detail::cat(__VA_ARGS__)); \
  } while (0)

#define COTA_CHECK_IO(cond, ...)                                \
  do {                                                          \
    if (!(cond))                                                \
      throw ::cota::IoError(::cota::detail::cat(__VA_ARGS__));  \
  } while (0)

}  // namespace cota
