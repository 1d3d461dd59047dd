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

// Layer building blocks. Every layer registers its parameters (and any
// running-stat buffers) under a dotted path name; checkpointing, the
// optimizer and the parameter-freeze hash all walk that registry, so
// registration order is part of the on-disk format.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cotatron/autograd.hpp"
#include "cotatron/norm.hpp"
#include "cotatron/rng.hpp"

namespace cota {

struct ParamRegistry {
  std::vector<std::pair<std::string, Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(const std::string& name, const Var& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) {
    buffers.emplace_back(name, t);
  }

  std::vector<Var> param_vars() const {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& [n, v] : params) out.push_back(v);
    return out;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : params) n += v->val.numel();
    return n;
  }
};

namespace init {

inline Tensor uniform_fan(const Rng& rng, std::vector<std::int64_t> shape,
                          std::int64_t fan_in) {
  Tensor t(std::move(shape));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data[i] = (2.0 * rng.uniform(static_cast<std::uint64_t>(i)) - 1.0) * bound;
  return t;
}

inline Tensor normal(const Rng& rng, std::vector<std::int64_t> shape,
                     double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data[i] = rng.normal(static_cast<std::uint64_t>(i)) * stddev;
  return t;
}

}  // namespace init

// Multiplies by an inverted-dropout mask derived from (rng, flat index);
// identity when rng is null. Callers key the rng by layer and step so the
// same coordinates always get the same mask.
inline Var dropout(const Var& x, double p, const Rng* rng) {
  if (!rng || p <= 0.0) return x;
  Tensor m(x->val.shape);
  double scale = 1.0 / (1.0 - p);
  for (std::int64_t i = 0; i < m.numel(); ++i)
    m.data[i] = rng->uniform(static_cast<std::uint64_t>(i)) >= p ? scale : 0.0;
  return mul_const(x, m);
}

// Rank-3 variant keyed by (b, c, t) coordinates rather than the flat index,
// so growing the padded length of a batch never reshuffles the masks that
// the unpadded positions receive.
inline Var dropout_bct(const Var& x, double p, const Rng* rng) {
  if (!rng || p <= 0.0) return x;
  COTA_CHECK(x->val.rank() == 3, "dropout_bct: rank 3 expected");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), L = x->val.dim(2);
  COTA_CHECK(L < (1 << 20), "dropout_bct: length too large for coordinate keying");
  Tensor m({B, C, L});
  double scale = 1.0 / (1.0 - p);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      std::uint64_t base = static_cast<std::uint64_t>(b * C + c) << 20;
      for (std::int64_t t = 0; t < L; ++t)
        m.at(b, c, t) =
            rng->uniform(base | static_cast<std::uint64_t>(t)) >= p ? scale : 0.0;
    }
  return mul_const(x, m);
}

struct Linear {
  Var W;  // [in, out]
  Var b;  // [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, const Rng& rng) {
    W = leaf_param(init::uniform_fan(rng.stream("W"), {in, out}, in));
    b = leaf_param(init::uniform_fan(rng.stream("b"), {out}, in));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".W", W);
    r.add(prefix + ".b", b);
  }

  Var operator()(const Var& x) const { return add_rowvec(matmul(x, W), b); }
};

// Applies a Linear across the last axis of a rank-3 tensor.
inline Var apply_linear3(const Linear& lin, const Var& x) {
  std::int64_t B = x->val.dim(0), N = x->val.dim(1), D = x->val.dim(2);
  Var flat = reshape(x, {B * N, D});
  Var y = lin(flat);
  return reshape(y, {B, N, y->val.dim(1)});
}

struct EmbeddingTable {
  Var table;  // [V, E]

  EmbeddingTable() = default;
  EmbeddingTable(std::int64_t V, std::int64_t E, const Rng& rng) {
    table = leaf_param(init::normal(rng, {V, E}));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".table", table);
  }

  Var operator()(const std::vector<std::int64_t>& ids) const {
    return embedding(table, ids);
  }
};

struct Conv1dLayer {
  Var W;  // [O, C, K]
  Var b;  // [O]
  std::int64_t dilation = 1;

  Conv1dLayer() = default;
  Conv1dLayer(std::int64_t C, std::int64_t O, std::int64_t K, const Rng& rng,
              std::int64_t dil = 1)
      : dilation(dil) {
    W = leaf_param(init::uniform_fan(rng.stream("W"), {O, C, K}, C * K));
    b = leaf_param(init::uniform_fan(rng.stream("b"), {O}, C * K));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".W", W);
    r.add(prefix + ".b", b);
  }

  Var operator()(const Var& x) const { return conv1d_same(x, W, b, dilation); }
};

struct Conv2dLayer {
  Var W;  // [O, C, kh, kw]
  Var b;  // [O]
  std::int64_t sh = 1, sw = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t C, std::int64_t O, std::int64_t kh, std::int64_t kw,
              std::int64_t stride_h, std::int64_t stride_w, const Rng& rng)
      : sh(stride_h), sw(stride_w) {
    W = leaf_param(
        init::uniform_fan(rng.stream("W"), {O, C, kh, kw}, C * kh * kw));
    b = leaf_param(init::uniform_fan(rng.stream("b"), {O}, C * kh * kw));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".W", W);
    r.add(prefix + ".b", b);
  }

  Var operator()(const Var& x) const { return conv2d_same(x, W, b, sh, sw); }
};

struct BatchNormLayer {
  Var gamma;  // [C]
  Var beta;   // [C]
  BnStats stats;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::int64_t C) : stats(C) {
    gamma = leaf_param(Tensor::full({C}, 1.0));
    beta = leaf_param(Tensor::zeros({C}));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) {
    r.add(prefix + ".gamma", gamma);
    r.add(prefix + ".beta", beta);
    r.add_buffer(prefix + ".running_mean", &stats.running_mean);
    r.add_buffer(prefix + ".running_var", &stats.running_var);
  }

  Var operator()(const Var& x, bool training, const Tensor* time_mask = nullptr) {
    return batch_norm(x, gamma, beta, stats, training, momentum, eps, time_mask);
  }
};

struct LstmCell {
  Var W_ih;  // [in, 4H], gate order i f g o
  Var W_hh;  // [H, 4H]
  Var b;     // [4H]
  std::int64_t H = 0;

  LstmCell() = default;
  LstmCell(std::int64_t in, std::int64_t hidden, const Rng& rng) : H(hidden) {
    W_ih = leaf_param(init::uniform_fan(rng.stream("W_ih"), {in, 4 * H}, H));
    W_hh = leaf_param(init::uniform_fan(rng.stream("W_hh"), {H, 4 * H}, H));
    b = leaf_param(init::uniform_fan(rng.stream("b"), {4 * H}, H));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".W_ih", W_ih);
    r.add(prefix + ".W_hh", W_hh);
    r.add(prefix + ".b", b);
  }

  struct State {
    Var h, c;
  };

  State initial(std::int64_t B) const {
    return {constant(Tensor::zeros({B, H})), constant(Tensor::zeros({B, H}))};
  }

  State operator()(const Var& x, const State& s) const {
    Var gates = add_rowvec(add(matmul(x, W_ih), matmul(s.h, W_hh)), b);
    Var i = sigmoid_v(slice_cols(gates, 0, H));
    Var f = sigmoid_v(slice_cols(gates, H, H));
    Var g = tanh_v(slice_cols(gates, 2 * H, H));
    Var o = sigmoid_v(slice_cols(gates, 3 * H, H));
    Var c = add(mul(f, s.c), mul(i, g));
    Var h = mul(o, tanh_v(c));
    return {h, c};
  }
};

struct GruCell {
  Var W_ih;  // [in, 3H], gate order r z n
  Var W_hh;  // [H, 3H]
  Var b_ih;  // [3H]
  Var b_hh;  // [3H]
  std::int64_t H = 0;

  GruCell() = default;
  GruCell(std::int64_t in, std::int64_t hidden, const Rng& rng) : H(hidden) {
    W_ih = leaf_param(init::uniform_fan(rng.stream("W_ih"), {in, 3 * H}, H));
    W_hh = leaf_param(init::uniform_fan(rng.stream("W_hh"), {H, 3 * H}, H));
    b_ih = leaf_param(init::uniform_fan(rng.stream("b_ih"), {3 * H}, H));
    b_hh = leaf_param(init::uniform_fan(rng.stream("b_hh"), {3 * H}, H));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".W_ih", W_ih);
    r.add(prefix + ".W_hh", W_hh);
    r.add(prefix + ".b_ih", b_ih);
    r.add(prefix + ".b_hh", b_hh);
  }

  Var initial(std::int64_t B) const { return constant(Tensor::zeros({B, H})); }

  Var operator()(const Var& x, const Var& h) const {
    Var gi = add_rowvec(matmul(x, W_ih), b_ih);
    Var gh = add_rowvec(matmul(h, W_hh), b_hh);
    Var r = sigmoid_v(add(slice_cols(gi, 0, H), slice_cols(gh, 0, H)));
    Var z = sigmoid_v(add(slice_cols(gi, H, H), slice_cols(gh, H, H)));
    Var n = tanh_v(add(slice_cols(gi, 2 * H, H), mul(r, slice_cols(gh, 2 * H, H))));
    // h' = (1-z) * n + z * h
    Var one_minus_z = add_scalar(mul_scalar(z, -1.0), 1.0);
    return add(mul(one_minus_z, n), mul(z, h));
  }
};

// Length-aware bidirectional LSTM over [B,C,L] (channels-first), producing
// [B,L,2H]. The forward direction runs left to right over the padded block;
// the reverse direction visits each item's own positions len-1 .. 0, so
// padding never leaks into the states that matter. Outputs at padded
// positions are zeroed.
struct BiLstm {
  LstmCell fwd, bwd;

  BiLstm() = default;
  BiLstm(std::int64_t in, std::int64_t hidden, const Rng& rng)
      : fwd(in, hidden, rng.stream("fwd")), bwd(in, hidden, rng.stream("bwd")) {}

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    fwd.register_into(r, prefix + ".fwd");
    bwd.register_into(r, prefix + ".bwd");
  }

  Var operator()(const Var& x, const std::vector<std::int64_t>& lengths) const {
    std::int64_t B = x->val.dim(0), L = x->val.dim(2);
    std::int64_t H = fwd.H;
    std::vector<Var> f_steps, b_steps;
    f_steps.reserve(L);
    b_steps.reserve(L);

    auto fs = fwd.initial(B);
    for (std::int64_t t = 0; t < L; ++t) {
      std::vector<std::int64_t> idx(B, t);
      fs = fwd(gather_time(x, idx), fs);
      f_steps.push_back(fs.h);
    }

    // Reverse pass: step t reads position len_b-1-t of item b (clamped to 0
    // once the item is exhausted; those states are discarded via the valid
    // mask and, to keep items independent, the recurrent state of exhausted
    // items is pinned by masking their inputs and outputs).
    auto bs = bwd.initial(B);
    std::vector<std::vector<std::int64_t>> ridx(L, std::vector<std::int64_t>(B, 0));
    std::vector<std::vector<char>> rvalid(L, std::vector<char>(B, 0));
    for (std::int64_t t = 0; t < L; ++t) {
      Tensor sel({B});
      for (std::int64_t b = 0; b < B; ++b) {
        std::int64_t pos = lengths[b] - 1 - t;
        rvalid[t][b] = pos >= 0;
        ridx[t][b] = pos >= 0 ? pos : 0;
        sel.data[b] = pos >= 0 ? 1.0 : 0.0;
      }
      Var inp = mul_rows_const(gather_time(x, ridx[t]), sel);
      auto ns = bwd(inp, bs);
      // keep the final state of exhausted items frozen
      Tensor inv({B});
      for (std::int64_t b = 0; b < B; ++b) inv.data[b] = 1.0 - sel.data[b];
      bs.h = add(mul_rows_const(ns.h, sel), mul_rows_const(bs.h, inv));
      bs.c = add(mul_rows_const(ns.c, sel), mul_rows_const(bs.c, inv));
      b_steps.push_back(bs.h);
    }

    Var f_block = stack_steps(f_steps);              // [B,H,L]
    Var b_block = place_time(b_steps, ridx, rvalid, L);  // [B,H,L]
    Var both = concat_cols({reshape(transpose12(f_block), {B * L, H}),
                            reshape(transpose12(b_block), {B * L, H})});
    Var out = reshape(both, {B, L, 2 * H});
    Tensor mask({B, L, 2 * H});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t t = 0; t < lengths[b]; ++t)
        for (std::int64_t c = 0; c < 2 * H; ++c) mask.at(b, t, c) = 1.0;
    return mul_const(out, mask);
  }
};

// Global L2 norm over a parameter set's gradients.
inline double grad_global_norm(const std::vector<Var>& params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p->has_grad) s += p->grad.data.square().sum();
  return std::sqrt(s);
}

inline void clip_grad_global_norm(const std::vector<Var>& params, double max_norm) {
  double n = grad_global_norm(params);
  if (n > max_norm && n > 0.0) {
    double scale = max_norm / n;
    for (const auto& p : params)
      if (p->has_grad) p->grad.data *= scale;
  }
}

}  // namespace cota
