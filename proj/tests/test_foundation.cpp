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
#include <numeric>

#include "cotatron/fft.hpp"
#include "cotatron/nn.hpp"
#include "cotatron/norm.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace cota;
using cota::testing::gradcheck;

namespace {

Tensor randn_t(std::vector<std::int64_t> s, std::uint64_t salt) {
  return Tensor::randn(std::move(s), Rng(42).stream("t").at(salt));
}

// values bounded away from zero, for kinked ops
Tensor randn_offset(std::vector<std::int64_t> s, std::uint64_t salt) {
  Tensor t = randn_t(std::move(s), salt);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double sign = t.data[i] >= 0.0 ? 1.0 : -1.0;
    if (std::abs(t.data[i]) < 0.2) t.data[i] += sign * 0.3;
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

TEST_CASE("rng: deterministic and stream-separated") {
  Rng a(123), b(123);
  CHECK(a.bits(7) == b.bits(7));
  CHECK(a.stream("x").uniform(0) == b.stream("x").uniform(0));
  CHECK(a.stream("x").uniform(0) != a.stream("y").uniform(0));
  CHECK(a.at(1).uniform(0) != a.at(2).uniform(0));
  CHECK(Rng(1).uniform(0) != Rng(2).uniform(0));
}

TEST_CASE("rng: uniform range and moments") {
  Rng r(9);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform(static_cast<std::uint64_t>(i));
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 0.01);
  CHECK(std::abs(var - 1.0 / 12.0) < 0.01);
}

TEST_CASE("rng: normal moments") {
  Rng r(77);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal(static_cast<std::uint64_t>(i));
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng: below and shuffle") {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) REQUIRE(r.below(static_cast<std::uint64_t>(i), 13) < 13);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.stream("shuf").shuffle(w);
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
  // same stream, same permutation
  auto w2 = v;
  r.stream("shuf").shuffle(w2);
  auto w3 = v;
  r.stream("shuf").shuffle(w3);
  CHECK(w2 == w3);
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

TEST_CASE("tensor: row-major indexing and mat view") {
  Tensor t({2, 3, 4});
  t.at(1, 2, 3) = 7.0;
  CHECK(t.data[1 * 12 + 2 * 4 + 3] == 7.0);
  auto m = t.mat();
  CHECK(m.rows() == 6);
  CHECK(m.cols() == 4);
  CHECK(m(5, 3) == 7.0);
  Tensor r = reshape_copy(t, {4, 6});
  CHECK(r.at(3, 5) == 7.0);
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

namespace {
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      double ang = -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}
}  // namespace

TEST_CASE("fft: matches naive dft") {
  for (std::size_t n : {16u, 256u}) {
    Rng r(3);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = r.normal(i);
    auto ref = naive_dft(x);
    auto got = rfft(x);
    REQUIRE(got.size() == n / 2 + 1);
    for (std::size_t k = 0; k < got.size(); ++k)
      CHECK(std::abs(got[k] - ref[k]) < 1e-9 * static_cast<double>(n));
  }
}

TEST_CASE("fft: round trip and delta") {
  Rng r(4);
  std::vector<double> x(128);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = r.normal(i);
  auto back = irfft(rfft(x), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);

  std::vector<double> delta(64, 0.0);
  delta[0] = 1.0;
  auto bins = rfft(delta);
  for (const auto& b : bins) CHECK(std::abs(b - std::complex<double>(1.0, 0.0)) < 1e-12);
}

// ---------------------------------------------------------------------------
// Autograd: elementwise and linear algebra
// ---------------------------------------------------------------------------

TEST_CASE("autograd: elementwise ops") {
  Var a = leaf_param(randn_t({3, 4}, 1));
  Var b = leaf_param(randn_t({3, 4}, 2));
  Tensor mask = Tensor::from({3, 4}, {1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 0});
  Tensor rows = Tensor::from({3}, {0.5, -1.2, 2.0});

  auto gc = [&](std::function<Var()> f) {
    return gradcheck(f, {a, b}).max_rel_err;
  };
  CHECK(gc([&] { return sum_all(add(a, b)); }) < 1e-6);
  CHECK(gc([&] { return sum_all(mul(sub(a, b), b)); }) < 1e-6);
  CHECK(gc([&] { return sum_all(mul_scalar(add_scalar(a, 0.7), -1.3)); }) < 1e-6);
  CHECK(gc([&] { return sum_all(mul_const(mul(a, b), mask)); }) < 1e-6);
  CHECK(gc([&] { return sum_all(mul(mul_rows_const(a, rows), b)); }) < 1e-6);
  CHECK(gc([&] { return sum_all(tanh_v(a)); }) < 1e-6);
  CHECK(gc([&] { return sum_all(sigmoid_v(mul(a, b))); }) < 1e-6);
}

TEST_CASE("autograd: relu and log_clamped") {
  Var a = leaf_param(randn_offset({4, 4}, 3));
  CHECK(gradcheck([&] { return sum_all(relu_v(a)); }, {a}).max_rel_err < 1e-6);

  Var pos = leaf_param(Tensor::rand_uniform({3, 3}, Rng(8).stream("p"), 0.5, 2.0));
  CHECK(gradcheck([&] { return sum_all(log_clamped(pos, 1e-5)); }, {pos}).max_rel_err <
        1e-6);

  // below the floor: value pinned, gradient zero
  Var tiny = leaf_param(Tensor::full({2, 2}, 1e-7));
  zero_grad({tiny});
  Var l = sum_all(log_clamped(tiny, 1e-5));
  CHECK(l->val.data[0] == Catch::Approx(4.0 * std::log(1e-5)));
  backward(l);
  CHECK(tiny->grad.data.abs().maxCoeff() == 0.0);
}

TEST_CASE("autograd: matmul, bias, shapes") {
  Var a = leaf_param(randn_t({3, 5}, 4));
  Var w = leaf_param(randn_t({5, 2}, 5));
  Var b = leaf_param(randn_t({2}, 6));
  CHECK(gradcheck([&] { return sum_all(tanh_v(add_rowvec(matmul(a, w), b))); },
                  {a, w, b})
            .max_rel_err < 1e-6);

  Var r3 = leaf_param(randn_t({2, 3, 4}, 7));
  CHECK(gradcheck([&] { return sum_all(mul(transpose12(r3), transpose12(r3))); }, {r3})
            .max_rel_err < 1e-6);
  CHECK(gradcheck(
            [&] {
              Var s = reshape(r3, {6, 4});
              Var sl = slice_cols(s, 1, 2);
              Var rr = slice_rows(s, 2, 3);
              return add(sum_all(mul(sl, sl)), sum_all(tanh_v(rr)));
            },
            {r3})
            .max_rel_err < 1e-6);
  CHECK(gradcheck(
            [&] {
              Var s = reshape(r3, {6, 4});
              return sum_all(concat_cols({s, mul(s, s), s}));
            },
            {r3})
            .max_rel_err < 1e-6);
}

TEST_CASE("autograd: gather/stack/place/embedding") {
  Var table = leaf_param(randn_t({7, 3}, 8));
  std::vector<std::int64_t> ids = {0, 3, 3, 6, 1};
  CHECK(gradcheck([&] { return sum_all(tanh_v(embedding(table, ids))); }, {table})
            .max_rel_err < 1e-6);

  Var x = leaf_param(randn_t({2, 3, 5}, 9));
  CHECK(gradcheck([&] { return sum_all(mul(gather_time(x, {1, 4}), gather_time(x, {0, 2}))); },
                  {x})
            .max_rel_err < 1e-6);

  Var f0 = leaf_param(randn_t({2, 3}, 10));
  Var f1 = leaf_param(randn_t({2, 3}, 11));
  Var f2 = leaf_param(randn_t({2, 3}, 12));
  CHECK(gradcheck([&] { return sum_all(tanh_v(stack_steps({f0, f1, f2}))); },
                  {f0, f1, f2})
            .max_rel_err < 1e-6);

  std::vector<std::vector<std::int64_t>> idx = {{3, 1}, {2, 0}, {1, 0}};
  std::vector<std::vector<char>> valid = {{1, 1}, {1, 1}, {1, 0}};
  CHECK(gradcheck(
            [&] { return sum_all(tanh_v(place_time({f0, f1, f2}, idx, valid, 4))); },
            {f0, f1, f2})
            .max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// Autograd: convolutions
// ---------------------------------------------------------------------------

TEST_CASE("autograd: conv1d") {
  Var x = leaf_param(randn_t({2, 3, 6}, 13));
  Var w = leaf_param(randn_t({4, 3, 3}, 14));
  Var b = leaf_param(randn_t({4}, 15));
  CHECK(gradcheck([&] { return sum_all(tanh_v(conv1d(x, w, b, 1, 1))); }, {x, w, b})
            .max_rel_err < 1e-6);
  // dilation 2, same padding helper
  CHECK(gradcheck([&] { return sum_all(conv1d_same(x, w, b, 2)); }, {x, w, b})
            .max_rel_err < 1e-6);
  // causal padding only on the left
  Var out = conv1d(x, w, b, 2, 0);
  CHECK(out->val.dim(2) == 6);
}

TEST_CASE("autograd: conv2d same") {
  Var x = leaf_param(randn_t({2, 2, 5, 6}, 16));
  Var w = leaf_param(randn_t({3, 2, 3, 3}, 17));
  Var b = leaf_param(randn_t({3}, 18));
  Var y1 = conv2d_same(x, w, b, 1, 1);
  CHECK(y1->val.dim(2) == 5);
  CHECK(y1->val.dim(3) == 6);
  Var y2 = conv2d_same(x, w, b, 2, 2);
  CHECK(y2->val.dim(2) == 3);
  CHECK(y2->val.dim(3) == 3);
  CHECK(gradcheck([&] { return sum_all(tanh_v(conv2d_same(x, w, b, 1, 1))); }, {x, w, b})
            .max_rel_err < 1e-6);
  CHECK(gradcheck([&] { return sum_all(tanh_v(conv2d_same(x, w, b, 2, 2))); }, {x, w, b})
            .max_rel_err < 1e-6);
}

TEST_CASE("autograd: dynamic conv and reflect pad") {
  Var x = leaf_param(randn_t({2, 7}, 19));
  Var w = leaf_param(randn_t({2, 3, 5}, 20));
  CHECK(gradcheck([&] { return sum_all(tanh_v(dyn_conv1d_same(x, w))); }, {x, w})
            .max_rel_err < 1e-6);

  Var x3 = leaf_param(randn_t({1, 2, 6}, 21));
  Var padded = pad_reflect_time(x3, 3);
  CHECK(padded->val.dim(2) == 12);
  // reflect without edge repetition: out[2] == x[1] at the left border
  CHECK(padded->val.at(0, 0, 2) == Catch::Approx(x3->val.at(0, 0, 1)));
  CHECK(gradcheck([&] { return sum_all(mul(pad_reflect_time(x3, 3), pad_reflect_time(x3, 3))); },
                  {x3})
            .max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// Autograd: softmax, losses, attention plumbing
// ---------------------------------------------------------------------------

TEST_CASE("autograd: masked softmax") {
  Var x = leaf_param(randn_t({3, 5}, 22));
  Tensor mask = Tensor::from({3, 5}, {1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 1, 0, 1});
  Var p = masked_softmax(x, mask);
  for (std::int64_t b = 0; b < 3; ++b) {
    double s = 0.0;
    for (std::int64_t j = 0; j < 5; ++j) {
      if (mask.at(b, j) == 0.0) CHECK(p->val.at(b, j) == 0.0);
      CHECK(p->val.at(b, j) >= 0.0);
      s += p->val.at(b, j);
    }
    CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
  }
  Var wsum = leaf_param(randn_t({3, 5}, 23));
  CHECK(gradcheck([&] { return sum_all(mul(masked_softmax(x, mask), mul(wsum, wsum))); },
                  {x, wsum})
            .max_rel_err < 1e-6);
}

TEST_CASE("autograd: cross entropy") {
  Var logits = leaf_param(randn_t({4, 6}, 24));
  std::vector<std::int64_t> labels = {0, 5, 2, 2};
  Var l = cross_entropy_logits(logits, labels);
  // uniform logits give log(K)
  Var unif = leaf_param(Tensor::zeros({3, 108}));
  CHECK(cross_entropy_logits(unif, {0, 55, 107})->val.data[0] ==
        Catch::Approx(std::log(108.0)));
  CHECK(gradcheck([&] { return cross_entropy_logits(logits, labels); }, {logits})
            .max_rel_err < 1e-6);
  CHECK(l->val.data[0] > 0.0);
}

TEST_CASE("autograd: attention context and memory concat") {
  Var attn = leaf_param(randn_t({2, 4}, 25));
  Var mem = leaf_param(randn_t({2, 4, 3}, 26));
  CHECK(gradcheck([&] { return sum_all(tanh_v(bmm_attn(attn, mem))); }, {attn, mem})
            .max_rel_err < 1e-6);

  Var enc = leaf_param(randn_t({2, 4, 3}, 27));
  Var z = leaf_param(randn_t({2, 2}, 28));
  Var m = concat_mem(enc, z);
  CHECK(m->val.dim(2) == 5);
  CHECK(m->val.at(1, 3, 4) == z->val.at(1, 1));
  CHECK(gradcheck([&] { return sum_all(tanh_v(concat_mem(enc, z))); }, {enc, z})
            .max_rel_err < 1e-6);
}

TEST_CASE("autograd: maxpool over time") {
  Var x = leaf_param(randn_t({2, 3, 6}, 29));
  std::vector<std::int64_t> lens = {6, 4};
  Var y = maxpool_time(x, lens);
  // padded tail of item 1 must not win even if larger
  Tensor spiked = x->val;
  spiked.at(1, 0, 5) = 100.0;
  Var xs = leaf_param(spiked);
  CHECK(maxpool_time(xs, lens)->val.at(1, 0) < 100.0);
  CHECK(gradcheck([&] { return sum_all(tanh_v(maxpool_time(x, lens))); }, {x})
            .max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

TEST_CASE("batch_norm: masked stats match hand computation") {
  Tensor xv = randn_t({2, 3, 5}, 30);
  Var x = leaf_param(xv);
  std::vector<std::int64_t> lens = {5, 3};
  Tensor mask = make_time_mask(lens, 5);
  BatchNormLayer bn(3);
  Var y = bn(x, /*training=*/true, &mask);

  for (std::int64_t c = 0; c < 3; ++c) {
    double s = 0.0;
    int n = 0;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t t = 0; t < lens[b]; ++t) {
        s += xv.at(b, c, t);
        ++n;
      }
    double mu = s / n;
    double v = 0.0;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t t = 0; t < lens[b]; ++t)
        v += (xv.at(b, c, t) - mu) * (xv.at(b, c, t) - mu);
    v /= n;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t t = 0; t < lens[b]; ++t)
        CHECK(y->val.at(b, c, t) ==
              Catch::Approx((xv.at(b, c, t) - mu) / std::sqrt(v + 1e-5)).margin(1e-10));
    // running stats moved toward the batch stats
    CHECK(bn.stats.running_mean.data[c] == Catch::Approx(0.1 * mu).margin(1e-12));
  }
}

TEST_CASE("batch_norm: gradients (shared and per-item, train and eval)") {
  Var x = leaf_param(randn_t({2, 3, 4}, 31));
  std::vector<std::int64_t> lens = {4, 2};
  Tensor mask = make_time_mask(lens, 4);
  Tensor m3 = expand_mask3(mask, 3);

  Var g1 = leaf_param(Tensor::rand_uniform({3}, Rng(1).stream("g"), 0.5, 1.5));
  Var b1 = leaf_param(randn_t({3}, 33));
  BnStats st(3);
  auto build_shared = [&] {
    Var y = batch_norm(x, g1, b1, st, true, 0.1, 1e-5, &mask);
    return sum_all(tanh_v(mul_const(y, m3)));
  };
  CHECK(gradcheck(build_shared, {x, g1, b1}).max_rel_err < 1e-5);

  Var g2 = leaf_param(Tensor::rand_uniform({2, 3}, Rng(2).stream("g"), 0.5, 1.5));
  Var b2 = leaf_param(randn_t({2, 3}, 34));
  auto build_item = [&] {
    Var y = batch_norm(x, g2, b2, st, true, 0.1, 1e-5, &mask);
    return sum_all(tanh_v(mul_const(y, m3)));
  };
  CHECK(gradcheck(build_item, {x, g2, b2}).max_rel_err < 1e-5);

  // eval mode against frozen running stats
  st.running_mean = Tensor::from({3}, {0.1, -0.2, 0.3});
  st.running_var = Tensor::from({3}, {1.1, 0.9, 1.4});
  auto build_eval = [&] {
    Var y = batch_norm(x, g1, b1, st, false, 0.1, 1e-5, &mask);
    return sum_all(tanh_v(y));
  };
  CHECK(gradcheck(build_eval, {x, g1, b1}).max_rel_err < 1e-6);
}

TEST_CASE("batch_norm: rank-4 input with time mask over height") {
  Var x = leaf_param(randn_t({2, 2, 4, 3}, 35));
  std::vector<std::int64_t> lens = {4, 2};
  Tensor mask = make_time_mask(lens, 4);
  Var g = leaf_param(Tensor::rand_uniform({2}, Rng(3).stream("g"), 0.5, 1.5));
  Var b = leaf_param(randn_t({2}, 37));
  BnStats st(2);
  Tensor m4({2, 2, 4, 3});
  for (std::int64_t bb = 0; bb < 2; ++bb)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t h = 0; h < lens[bb]; ++h)
        for (std::int64_t w = 0; w < 3; ++w) m4.at(bb, c, h, w) = 1.0;
  auto build = [&] {
    Var y = batch_norm(x, g, b, st, true, 0.1, 1e-5, &mask);
    return sum_all(tanh_v(mul_const(y, m4)));
  };
  CHECK(gradcheck(build, {x, g, b}).max_rel_err < 1e-5);
}

TEST_CASE("instance_norm_time: moments, padding, gradients") {
  Var x = leaf_param(randn_t({2, 2, 6}, 38));
  std::vector<std::int64_t> lens = {6, 4};
  Var y = instance_norm_time(x, lens);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t c = 0; c < 2; ++c) {
      double s = 0.0, sq = 0.0;
      for (std::int64_t t = 0; t < lens[b]; ++t) {
        s += y->val.at(b, c, t);
        sq += y->val.at(b, c, t) * y->val.at(b, c, t);
      }
      CHECK(std::abs(s / lens[b]) < 1e-10);
      CHECK(sq / lens[b] == Catch::Approx(1.0).epsilon(1e-3));
      for (std::int64_t t = lens[b]; t < 6; ++t) CHECK(y->val.at(b, c, t) == 0.0);
    }
  CHECK(gradcheck([&] { return sum_all(tanh_v(instance_norm_time(x, lens))); }, {x})
            .max_rel_err < 1e-5);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

TEST_CASE("layers: linear, lstm, gru gradients") {
  Rng rng(11);
  Linear lin(4, 3, rng.stream("lin"));
  Var x = leaf_param(randn_t({5, 4}, 39));
  std::vector<Var> ps = {x, lin.W, lin.b};
  CHECK(gradcheck([&] { return sum_all(tanh_v(lin(x))); }, ps).max_rel_err < 1e-6);

  LstmCell lstm(3, 4, rng.stream("lstm"));
  Var xt = leaf_param(randn_t({2, 3}, 40));
  auto run_lstm = [&] {
    auto s = lstm.initial(2);
    for (int t = 0; t < 3; ++t) s = lstm(xt, s);
    return sum_all(mul(s.h, s.c));
  };
  CHECK(gradcheck(run_lstm, {xt, lstm.W_ih, lstm.W_hh, lstm.b}).max_rel_err < 1e-5);

  GruCell gru(3, 4, rng.stream("gru"));
  auto run_gru = [&] {
    Var h = gru.initial(2);
    for (int t = 0; t < 3; ++t) h = gru(xt, h);
    return sum_all(tanh_v(h));
  };
  CHECK(gradcheck(run_gru, {xt, gru.W_ih, gru.W_hh, gru.b_ih, gru.b_hh}).max_rel_err <
        1e-5);
}

TEST_CASE("layers: bilstm matches per-item runs and zeroes padding") {
  Rng rng(13);
  BiLstm bl(3, 4, rng.stream("bl"));
  Tensor x1 = randn_t({1, 3, 5}, 41);
  Tensor x2 = randn_t({1, 3, 3}, 42);
  Tensor xb({2, 3, 5});
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t t = 0; t < 5; ++t) xb.at(0, c, t) = x1.at(0, c, t);
    for (std::int64_t t = 0; t < 3; ++t) xb.at(1, c, t) = x2.at(0, c, t);
  }
  NoGrad ng;
  Var yb = bl(constant(xb), {5, 3});
  Var y1 = bl(constant(x1), {5});
  Var y2 = bl(constant(x2), {3});
  for (std::int64_t t = 0; t < 5; ++t)
    for (std::int64_t c = 0; c < 8; ++c)
      CHECK(yb->val.at(0, t, c) == Catch::Approx(y1->val.at(0, t, c)).margin(1e-12));
  for (std::int64_t t = 0; t < 3; ++t)
    for (std::int64_t c = 0; c < 8; ++c)
      CHECK(yb->val.at(1, t, c) == Catch::Approx(y2->val.at(0, t, c)).margin(1e-12));
  for (std::int64_t t = 3; t < 5; ++t)
    for (std::int64_t c = 0; c < 8; ++c) CHECK(yb->val.at(1, t, c) == 0.0);
}

TEST_CASE("layers: bilstm gradients with ragged lengths") {
  Rng rng(14);
  BiLstm bl(2, 3, rng.stream("bl"));
  Var x = leaf_param(randn_t({2, 2, 4}, 43));
  ParamRegistry reg;
  bl.register_into(reg, "bl");
  std::vector<Var> ps = reg.param_vars();
  ps.push_back(x);
  CHECK(gradcheck([&] { return sum_all(tanh_v(bl(x, {4, 2}))); }, ps, 1e-5, 24)
            .max_rel_err < 1e-5);
}

TEST_CASE("layers: dropout scaling and determinism") {
  Rng rng(15);
  Var x = leaf_param(Tensor::full({100, 10}, 1.0));
  Rng site = rng.stream("drop");
  Var y1 = dropout(x, 0.3, &site);
  Var y2 = dropout(x, 0.3, &site);
  CHECK((y1->val.data == y2->val.data).all());
  double mean = y1->val.data.mean();
  CHECK(std::abs(mean - 1.0) < 0.05);
  for (std::int64_t i = 0; i < y1->val.numel(); ++i) {
    bool ok = y1->val.data[i] == 0.0 ||
              std::abs(y1->val.data[i] - 1.0 / 0.7) < 1e-12;
    REQUIRE(ok);
  }
  CHECK(dropout(x, 0.3, nullptr).get() == x.get());
}

TEST_CASE("layers: global norm clip") {
  Var a = leaf_param(Tensor::zeros({3}));
  Var b = leaf_param(Tensor::zeros({4}));
  zero_grad({a, b});
  a->ensure_grad().data.setConstant(3.0);
  b->ensure_grad().data.setConstant(4.0);
  double n = grad_global_norm({a, b});
  CHECK(n == Catch::Approx(std::sqrt(9.0 * 3 + 16.0 * 4)));
  clip_grad_global_norm({a, b}, 1.0);
  CHECK(grad_global_norm({a, b}) == Catch::Approx(1.0));
  // under the threshold nothing changes
  clip_grad_global_norm({a, b}, 10.0);
  CHECK(grad_global_norm({a, b}) == Catch::Approx(1.0));
}
