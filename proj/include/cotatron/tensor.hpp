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

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "cotatron/common.hpp"
#include "cotatron/rng.hpp"

namespace cota {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Dense double tensor, row-major, rank <= 4 in practice.
struct Tensor {
  std::vector<std::int64_t> shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data = Eigen::ArrayXd::Zero(numel_of(shape));
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      COTA_CHECK(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  std::int64_t numel() const { return data.size(); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& at(std::int64_t i) { return data[i]; }
  double at(std::int64_t i) const { return data[i]; }
  double& at(std::int64_t i, std::int64_t j) { return data[i * shape[1] + j]; }
  double at(std::int64_t i, std::int64_t j) const { return data[i * shape[1] + j]; }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  // 2D matrix view over the last two (or only two) dims, rows = product of
  // leading dims.
  MatMap mat() {
    COTA_CHECK(rank() >= 1, "mat() on scalar tensor");
    std::int64_t cols = shape.back();
    std::int64_t rows = cols == 0 ? 0 : numel() / cols;
    return MatMap(ptr(), rows, cols);
  }
  ConstMatMap mat() const {
    COTA_CHECK(rank() >= 1, "mat() on scalar tensor");
    std::int64_t cols = shape.back();
    std::int64_t rows = cols == 0 ? 0 : numel() / cols;
    return ConstMatMap(ptr(), rows, cols);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::int64_t> s, double v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  static Tensor from(std::vector<std::int64_t> s, std::initializer_list<double> vals) {
    Tensor t(std::move(s));
    COTA_CHECK(t.numel() == static_cast<std::int64_t>(vals.size()),
               "initializer size mismatch");
    std::int64_t i = 0;
    for (double v : vals) t.data[i++] = v;
    return t;
  }

  static Tensor randn(std::vector<std::int64_t> s, const Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.data[i] = stddev * rng.normal(static_cast<std::uint64_t>(i));
    return t;
  }

  static Tensor rand_uniform(std::vector<std::int64_t> s, const Rng& rng,
                             double lo, double hi) {
    Tensor t(std::move(s));
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.data[i] = lo + (hi - lo) * rng.uniform(static_cast<std::uint64_t>(i));
    return t;
  }

  bool all_finite() const { return data.isFinite().all(); }
};

inline Tensor reshape_copy(const Tensor& t, std::vector<std::int64_t> s) {
  COTA_CHECK(Tensor::numel_of(s) == t.numel(), "reshape numel mismatch");
  Tensor out;
  out.shape = std::move(s);
  out.data = t.data;
  return out;
}

}  // namespace cota
