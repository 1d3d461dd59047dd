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

// Iterative radix-2 FFT, plenty for power-of-two analysis windows. Kept
// dependency-free so spectra are bit-identical across machines.

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "cotatron/common.hpp"

namespace cota {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place complex FFT (inverse = conjugate trick handled by caller or the
// helper below). n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false) {
  const std::size_t n = a.size();
  COTA_CHECK(is_pow2(n), "fft: length must be a power of two, got ", n);
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Real input -> first n/2+1 bins of the DFT.
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  std::vector<std::complex<double>> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = {x[i], 0.0};
  fft_inplace(a);
  a.resize(x.size() / 2 + 1);
  return a;
}

// Inverse of rfft for a real signal of even length n (bins.size() == n/2+1).
inline std::vector<double> irfft(const std::vector<std::complex<double>>& bins,
                                 std::size_t n) {
  COTA_CHECK(bins.size() == n / 2 + 1, "irfft: bin count mismatch");
  std::vector<std::complex<double>> a(n);
  for (std::size_t i = 0; i < bins.size(); ++i) a[i] = bins[i];
  for (std::size_t i = bins.size(); i < n; ++i) a[i] = std::conj(bins[n - i]);
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace cota
