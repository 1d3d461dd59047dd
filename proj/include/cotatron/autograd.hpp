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

// Reverse-mode autograd over cota::Tensor. Define-by-run: each op builds a
// node holding the value, its parents, and a closure that pushes gradients
// into the parents. Heavy lifting (matmul, im2col convolutions) goes through
// Eigen; everything is double precision so the finite-difference checks in
// the test suite apply directly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cotatron/tensor.hpp"

namespace cota {

struct VarNode;
using Var = std::shared_ptr<VarNode>;

struct VarNode {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<Var> parents;
  std::function<void(VarNode*)> backward_fn;

  Tensor& ensure_grad() {
    if (!has_grad) {
      grad = Tensor::zeros(val.shape);
      has_grad = true;
    }
    return grad;
  }

  void add_grad(const Tensor& g) {
    ensure_grad();
    grad.data += g.data;
  }
};

namespace grad_mode {
inline thread_local bool enabled = true;
}

// RAII guard disabling graph recording (eval / feature-extraction forwards).
struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode::enabled) { grad_mode::enabled = false; }
  ~NoGrad() { grad_mode::enabled = prev; }
  NoGrad(const NoGrad&) = delete;
};

inline Var constant(Tensor t) {
  auto v = std::make_shared<VarNode>();
  v->val = std::move(t);
  return v;
}

inline Var leaf_param(Tensor t) {
  auto v = std::make_shared<VarNode>();
  v->val = std::move(t);
  v->requires_grad = true;
  return v;
}

namespace detail {

inline bool track(const std::vector<Var>& parents) {
  if (!grad_mode::enabled) return false;
  for (const auto& p : parents)
    if (p && p->requires_grad) return true;
  return false;
}

inline Var make_op(Tensor out, std::vector<Var> parents,
                   std::function<void(VarNode*)> bw) {
  auto v = std::make_shared<VarNode>();
  v->val = std::move(out);
  if (track(parents)) {
    v->requires_grad = true;
    v->parents = std::move(parents);
    v->backward_fn = std::move(bw);
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / scalar
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  COTA_CHECK(a->val.same_shape(b->val), "add: shape mismatch");
  Tensor out = a->val;
  out.data += b->val.data;
  return detail::make_op(std::move(out), {a, b}, [](VarNode* self) {
    if (self->parents[0]->requires_grad) self->parents[0]->add_grad(self->grad);
    if (self->parents[1]->requires_grad) self->parents[1]->add_grad(self->grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  COTA_CHECK(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor out = a->val;
  out.data -= b->val.data;
  return detail::make_op(std::move(out), {a, b}, [](VarNode* self) {
    if (self->parents[0]->requires_grad) self->parents[0]->add_grad(self->grad);
    if (self->parents[1]->requires_grad) {
      Tensor g = self->grad;
      g.data = -g.data;
      self->parents[1]->add_grad(g);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  COTA_CHECK(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor out = a->val;
  out.data *= b->val.data;
  return detail::make_op(std::move(out), {a, b}, [](VarNode* self) {
    if (self->parents[0]->requires_grad) {
      Tensor g = self->grad;
      g.data *= self->parents[1]->val.data;
      self->parents[0]->add_grad(g);
    }
    if (self->parents[1]->requires_grad) {
      Tensor g = self->grad;
      g.data *= self->parents[0]->val.data;
      self->parents[1]->add_grad(g);
    }
  });
}

inline Var mul_scalar(const Var& a, double s) {
  Tensor out = a->val;
  out.data *= s;
  return detail::make_op(std::move(out), {a}, [s](VarNode* self) {
    Tensor g = self->grad;
    g.data *= s;
    self->parents[0]->add_grad(g);
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->val;
  out.data += s;
  return detail::make_op(std::move(out), {a}, [](VarNode* self) {
    self->parents[0]->add_grad(self->grad);
  });
}

// Elementwise multiply by a constant tensor (masks, dropout masks).
inline Var mul_const(const Var& a, const Tensor& m) {
  COTA_CHECK(a->val.same_shape(m), "mul_const: shape mismatch");
  Tensor out = a->val;
  out.data *= m.data;
  return detail::make_op(std::move(out), {a}, [m](VarNode* self) {
    Tensor g = self->grad;
    g.data *= m.data;
    self->parents[0]->add_grad(g);
  });
}

// Per-row scale of a [R,C] tensor by a constant length-R vector.
inline Var mul_rows_const(const Var& a, const Tensor& s) {
  COTA_CHECK(a->val.rank() == 2 && s.numel() == a->val.dim(0),
             "mul_rows_const: bad shapes");
  Tensor out = a->val;
  auto m = out.mat();
  for (std::int64_t r = 0; r < m.rows(); ++r) m.row(r) *= s.data[r];
  return detail::make_op(std::move(out), {a}, [s](VarNode* self) {
    Tensor g = self->grad;
    auto gm = g.mat();
    for (std::int64_t r = 0; r < gm.rows(); ++r) gm.row(r) *= s.data[r];
    self->parents[0]->add_grad(g);
  });
}

inline Var tanh_v(const Var& a) {
  Tensor out = a->val;
  out.data = out.data.tanh();
  Tensor saved = out;
  return detail::make_op(std::move(out), {a}, [saved](VarNode* self) {
    Tensor g = self->grad;
    g.data *= (1.0 - saved.data.square());
    self->parents[0]->add_grad(g);
  });
}

inline Var sigmoid_v(const Var& a) {
  Tensor out = a->val;
  out.data = 1.0 / (1.0 + (-out.data).exp());
  Tensor saved = out;
  return detail::make_op(std::move(out), {a}, [saved](VarNode* self) {
    Tensor g = self->grad;
    g.data *= saved.data * (1.0 - saved.data);
    self->parents[0]->add_grad(g);
  });
}

inline Var relu_v(const Var& a) {
  Tensor out = a->val;
  out.data = out.data.max(0.0);
  Tensor sign = a->val;
  sign.data = (sign.data > 0.0).cast<double>();
  return detail::make_op(std::move(out), {a}, [sign](VarNode* self) {
    Tensor g = self->grad;
    g.data *= sign.data;
    self->parents[0]->add_grad(g);
  });
}

// log(max(x, floor)); gradient is zero where the clamp is active.
inline Var log_clamped(const Var& a, double floor) {
  Tensor out = a->val;
  out.data = out.data.max(floor).log();
  Tensor x = a->val;
  return detail::make_op(std::move(out), {a}, [x, floor](VarNode* self) {
    Tensor g = self->grad;
    g.data = (x.data > floor).cast<double>() * g.data / x.data.max(floor);
    self->parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  COTA_CHECK(a->val.rank() == 2 && b->val.rank() == 2 &&
                 a->val.dim(1) == b->val.dim(0),
             "matmul: shape mismatch");
  Tensor out({a->val.dim(0), b->val.dim(1)});
  out.mat().noalias() = a->val.mat() * b->val.mat();
  return detail::make_op(std::move(out), {a, b}, [](VarNode* self) {
    const Tensor& A = self->parents[0]->val;
    const Tensor& B = self->parents[1]->val;
    if (self->parents[0]->requires_grad) {
      Tensor gA(A.shape);
      gA.mat().noalias() = self->grad.mat() * B.mat().transpose();
      self->parents[0]->add_grad(gA);
    }
    if (self->parents[1]->requires_grad) {
      Tensor gB(B.shape);
      gB.mat().noalias() = A.mat().transpose() * self->grad.mat();
      self->parents[1]->add_grad(gB);
    }
  });
}

// x: [R,C], bias: [C] broadcast over rows.
inline Var add_rowvec(const Var& x, const Var& b) {
  COTA_CHECK(x->val.rank() >= 2 && b->val.numel() == x->val.shape.back(),
             "add_rowvec: shape mismatch");
  Tensor out = x->val;
  auto m = out.mat();
  ConstMatMap bv(b->val.ptr(), 1, b->val.numel());
  m.rowwise() += bv.row(0);
  return detail::make_op(std::move(out), {x, b}, [](VarNode* self) {
    if (self->parents[0]->requires_grad)
      self->parents[0]->add_grad(self->grad);
    if (self->parents[1]->requires_grad) {
      Tensor gb(self->parents[1]->val.shape);
      MatMap gbm(gb.ptr(), 1, gb.numel());
      gbm.row(0) = self->grad.mat().colwise().sum();
      self->parents[1]->add_grad(gb);
    }
  });
}

inline Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a->val.data.sum());
  return detail::make_op(std::move(out), {a}, [](VarNode* self) {
    Tensor g(self->parents[0]->val.shape);
    g.data.setConstant(self->grad.data[0]);
    self->parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<std::int64_t> shape) {
  Tensor out = reshape_copy(a->val, shape);
  auto orig = a->val.shape;
  return detail::make_op(std::move(out), {a}, [orig](VarNode* self) {
    self->parents[0]->add_grad(reshape_copy(self->grad, orig));
  });
}

inline Var slice_cols(const Var& a, std::int64_t from, std::int64_t len) {
  COTA_CHECK(a->val.rank() == 2, "slice_cols: rank 2 expected");
  std::int64_t R = a->val.dim(0), C = a->val.dim(1);
  COTA_CHECK(from >= 0 && from + len <= C, "slice_cols: out of range");
  Tensor out({R, len});
  out.mat() = a->val.mat().middleCols(from, len);
  return detail::make_op(std::move(out), {a}, [from, len](VarNode* self) {
    Tensor g(self->parents[0]->val.shape);
    g.mat().middleCols(from, len) = self->grad.mat();
    self->parents[0]->add_grad(g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  COTA_CHECK(!parts.empty(), "concat_cols: empty");
  std::int64_t R = parts[0]->val.dim(0), C = 0;
  for (const auto& p : parts) {
    COTA_CHECK(p->val.rank() == 2 && p->val.dim(0) == R, "concat_cols: shapes");
    C += p->val.dim(1);
  }
  Tensor out({R, C});
  std::int64_t at = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    out.mat().middleCols(at, p->val.dim(1)) = p->val.mat();
    widths.push_back(p->val.dim(1));
    at += p->val.dim(1);
  }
  return detail::make_op(std::move(out), parts, [widths](VarNode* self) {
    std::int64_t at = 0;
    for (std::size_t i = 0; i < self->parents.size(); ++i) {
      if (self->parents[i]->requires_grad) {
        Tensor g(self->parents[i]->val.shape);
        g.mat() = self->grad.mat().middleCols(at, widths[i]);
        self->parents[i]->add_grad(g);
      }
      at += widths[i];
    }
  });
}

inline Var slice_rows(const Var& a, std::int64_t from, std::int64_t len) {
  COTA_CHECK(a->val.rank() == 2, "slice_rows: rank 2 expected");
  COTA_CHECK(from >= 0 && from + len <= a->val.dim(0), "slice_rows: range");
  Tensor out({len, a->val.dim(1)});
  out.mat() = a->val.mat().middleRows(from, len);
  return detail::make_op(std::move(out), {a}, [from, len](VarNode* self) {
    Tensor g(self->parents[0]->val.shape);
    g.mat().middleRows(from, len) = self->grad.mat();
    self->parents[0]->add_grad(g);
  });
}

// [B,X,Y] -> [B,Y,X]
inline Var transpose12(const Var& a) {
  COTA_CHECK(a->val.rank() == 3, "transpose12: rank 3 expected");
  std::int64_t B = a->val.dim(0), X = a->val.dim(1), Y = a->val.dim(2);
  Tensor out({B, Y, X});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t x = 0; x < X; ++x)
      for (std::int64_t y = 0; y < Y; ++y) out.at(b, y, x) = a->val.at(b, x, y);
  return detail::make_op(std::move(out), {a}, [B, X, Y](VarNode* self) {
    Tensor g({B, X, Y});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t x = 0; x < X; ++x)
        for (std::int64_t y = 0; y < Y; ++y) g.at(b, x, y) = self->grad.at(b, y, x);
    self->parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// Gather / scatter style ops
// ---------------------------------------------------------------------------

inline Var embedding(const Var& table, const std::vector<std::int64_t>& ids) {
  COTA_CHECK(table->val.rank() == 2, "embedding: table rank 2");
  std::int64_t V = table->val.dim(0), E = table->val.dim(1);
  Tensor out({static_cast<std::int64_t>(ids.size()), E});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    COTA_CHECK(ids[i] >= 0 && ids[i] < V, "embedding: id out of range: ", ids[i]);
    out.mat().row(static_cast<std::int64_t>(i)) = table->val.mat().row(ids[i]);
  }
  return detail::make_op(std::move(out), {table}, [ids](VarNode* self) {
    Tensor g(self->parents[0]->val.shape);
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.mat().row(ids[i]) += self->grad.mat().row(static_cast<std::int64_t>(i));
    self->parents[0]->add_grad(g);
  });
}

// frames: T tensors of [B,C] -> [B,C,T]
inline Var stack_steps(const std::vector<Var>& frames) {
  COTA_CHECK(!frames.empty(), "stack_steps: empty");
  std::int64_t B = frames[0]->val.dim(0), C = frames[0]->val.dim(1);
  std::int64_t T = static_cast<std::int64_t>(frames.size());
  Tensor out({B, C, T});
  for (std::int64_t t = 0; t < T; ++t) {
    COTA_CHECK(frames[t]->val.dim(0) == B && frames[t]->val.dim(1) == C,
               "stack_steps: inconsistent shapes");
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) out.at(b, c, t) = frames[t]->val.at(b, c);
  }
  return detail::make_op(std::move(out), frames, [B, C, T](VarNode* self) {
    for (std::int64_t t = 0; t < T; ++t) {
      if (!self->parents[t]->requires_grad) continue;
      Tensor g({B, C});
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) g.at(b, c) = self->grad.at(b, c, t);
      self->parents[t]->add_grad(g);
    }
  });
}

// out[b,c] = x[b,c,idx[b]]
inline Var gather_time(const Var& x, const std::vector<std::int64_t>& idx) {
  COTA_CHECK(x->val.rank() == 3, "gather_time: rank 3 expected");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), L = x->val.dim(2);
  COTA_CHECK(static_cast<std::int64_t>(idx.size()) == B, "gather_time: idx size");
  Tensor out({B, C});
  for (std::int64_t b = 0; b < B; ++b) {
    COTA_CHECK(idx[b] >= 0 && idx[b] < L, "gather_time: index range");
    for (std::int64_t c = 0; c < C; ++c) out.at(b, c) = x->val.at(b, c, idx[b]);
  }
  return detail::make_op(std::move(out), {x}, [idx, B, C](VarNode* self) {
    Tensor g(self->parents[0]->val.shape);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) g.at(b, c, idx[b]) += self->grad.at(b, c);
    self->parents[0]->add_grad(g);
  });
}

// Inverse of gather_time over a step list: out[b,c,idx[t][b]] += frame_t[b,c]
// for steps where valid[t][b]. Used to assemble the reverse direction of a
// length-aware bidirectional recurrence.
inline Var place_time(const std::vector<Var>& frames,
                      const std::vector<std::vector<std::int64_t>>& idx,
                      const std::vector<std::vector<char>>& valid,
                      std::int64_t L) {
  COTA_CHECK(!frames.empty(), "place_time: empty");
  std::int64_t B = frames[0]->val.dim(0), C = frames[0]->val.dim(1);
  std::int64_t T = static_cast<std::int64_t>(frames.size());
  Tensor out({B, C, L});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t b = 0; b < B; ++b) {
      if (!valid[t][b]) continue;
      for (std::int64_t c = 0; c < C; ++c)
        out.at(b, c, idx[t][b]) += frames[t]->val.at(b, c);
    }
  return detail::make_op(std::move(out), frames, [idx, valid, B, C, T](VarNode* self) {
    for (std::int64_t t = 0; t < T; ++t) {
      if (!self->parents[t]->requires_grad) continue;
      Tensor g({B, C});
      for (std::int64_t b = 0; b < B; ++b) {
        if (!valid[t][b]) continue;
        for (std::int64_t c = 0; c < C; ++c) g.at(b, c) = self->grad.at(b, c, idx[t][b]);
      }
      self->parents[t]->add_grad(g);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {
inline void im2col1d(const Tensor& x, std::int64_t b, std::int64_t pad_l,
                     std::int64_t dil, std::int64_t K, std::int64_t Lout,
                     RowMat& cols) {
  std::int64_t C = x.dim(1), L = x.dim(2);
  cols.setZero(Lout, C * K);
  for (std::int64_t t = 0; t < Lout; ++t)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t k = 0; k < K; ++k) {
        std::int64_t src = t - pad_l + k * dil;
        if (src >= 0 && src < L) cols(t, c * K + k) = x.at(b, c, src);
      }
}
}  // namespace detail

// x: [B,C,L], w: [O,C,K], b: [O] (optional). Zero padding pad_l/pad_r.
inline Var conv1d(const Var& x, const Var& w, const Var& bias,
                  std::int64_t pad_l, std::int64_t pad_r, std::int64_t dil = 1) {
  COTA_CHECK(x->val.rank() == 3 && w->val.rank() == 3, "conv1d: ranks");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), L = x->val.dim(2);
  std::int64_t O = w->val.dim(0), K = w->val.dim(2);
  COTA_CHECK(w->val.dim(1) == C, "conv1d: channel mismatch");
  std::int64_t Lout = L + pad_l + pad_r - (K - 1) * dil;
  COTA_CHECK(Lout >= 1, "conv1d: output length < 1");
  ConstMatMap W(w->val.ptr(), O, C * K);
  Tensor out({B, O, Lout});
  RowMat cols;
  for (std::int64_t b = 0; b < B; ++b) {
    detail::im2col1d(x->val, b, pad_l, dil, K, Lout, cols);
    RowMat r = cols * W.transpose();  // [Lout, O]
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t t = 0; t < Lout; ++t) out.at(b, o, t) = r(t, o);
  }
  if (bias) {
    COTA_CHECK(bias->val.numel() == O, "conv1d: bias size");
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t o = 0; o < O; ++o)
        for (std::int64_t t = 0; t < Lout; ++t) out.at(b, o, t) += bias->val.at(o);
  }
  std::vector<Var> parents = {x, w};
  if (bias) parents.push_back(bias);
  return detail::make_op(
      std::move(out), parents, [pad_l, dil, B, C, L, O, K, Lout](VarNode* self) {
        const Tensor& xv = self->parents[0]->val;
        const Tensor& wv = self->parents[1]->val;
        ConstMatMap W(wv.ptr(), O, C * K);
        Tensor gx(xv.shape);
        Tensor gw(wv.shape);
        MatMap GW(gw.ptr(), O, C * K);
        RowMat cols, gout(Lout, O), gcols;
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t t = 0; t < Lout; ++t) gout(t, o) = self->grad.at(b, o, t);
          if (self->parents[1]->requires_grad) {
            detail::im2col1d(xv, b, pad_l, dil, K, Lout, cols);
            GW.noalias() += gout.transpose() * cols;
          }
          if (self->parents[0]->requires_grad) {
            gcols.noalias() = gout * W;  // [Lout, C*K]
            for (std::int64_t t = 0; t < Lout; ++t)
              for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t k = 0; k < K; ++k) {
                  std::int64_t src = t - pad_l + k * dil;
                  if (src >= 0 && src < L) gx.at(b, c, src) += gcols(t, c * K + k);
                }
          }
        }
        if (self->parents[0]->requires_grad) self->parents[0]->add_grad(gx);
        if (self->parents[1]->requires_grad) self->parents[1]->add_grad(gw);
        if (self->parents.size() > 2 && self->parents[2]->requires_grad) {
          Tensor gb(self->parents[2]->val.shape);
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t o = 0; o < O; ++o)
              for (std::int64_t t = 0; t < Lout; ++t) gb.at(o) += self->grad.at(b, o, t);
          self->parents[2]->add_grad(gb);
        }
      });
}

// "same" padding for stride-1 dilated conv1d with odd kernels.
inline Var conv1d_same(const Var& x, const Var& w, const Var& bias,
                       std::int64_t dil = 1) {
  std::int64_t K = w->val.dim(2);
  std::int64_t pad = (K - 1) * dil / 2;
  return conv1d(x, w, bias, pad, (K - 1) * dil - pad, dil);
}

namespace detail {
struct Conv2dGeom {
  std::int64_t Hout, Wout, pad_h, pad_w;  // pad at the leading edge
};
inline Conv2dGeom conv2d_same_geom(std::int64_t H, std::int64_t W, std::int64_t kh,
                                   std::int64_t kw, std::int64_t sh, std::int64_t sw) {
  Conv2dGeom g;
  g.Hout = (H + sh - 1) / sh;
  g.Wout = (W + sw - 1) / sw;
  std::int64_t pth = std::max<std::int64_t>(0, (g.Hout - 1) * sh + kh - H);
  std::int64_t ptw = std::max<std::int64_t>(0, (g.Wout - 1) * sw + kw - W);
  g.pad_h = pth / 2;
  g.pad_w = ptw / 2;
  return g;
}
}  // namespace detail

// x: [B,C,H,W], w: [O,C,kh,kw], strides (sh, sw), explicit geometry; taps
// outside the input read zero.
inline Var conv2d_with_geom(const Var& x, const Var& w, const Var& bias,
                            std::int64_t sh, std::int64_t sw,
                            detail::Conv2dGeom g) {
  COTA_CHECK(x->val.rank() == 4 && w->val.rank() == 4, "conv2d: ranks");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  std::int64_t O = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
  COTA_CHECK(w->val.dim(1) == C, "conv2d: channel mismatch");
  std::int64_t P = g.Hout * g.Wout;
  ConstMatMap Wm(w->val.ptr(), O, C * kh * kw);
  Tensor out({B, O, g.Hout, g.Wout});
  RowMat cols(P, C * kh * kw);
  for (std::int64_t b = 0; b < B; ++b) {
    cols.setZero();
    for (std::int64_t oh = 0; oh < g.Hout; ++oh)
      for (std::int64_t ow = 0; ow < g.Wout; ++ow) {
        std::int64_t p = oh * g.Wout + ow;
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              std::int64_t sy = oh * sh - g.pad_h + i;
              std::int64_t sx = ow * sw - g.pad_w + j;
              if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                cols(p, (c * kh + i) * kw + j) = x->val.at(b, c, sy, sx);
            }
      }
    RowMat r = cols * Wm.transpose();  // [P, O]
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t p = 0; p < P; ++p)
        out.at(b, o, p / g.Wout, p % g.Wout) = r(p, o) + (bias ? bias->val.at(o) : 0.0);
  }
  std::vector<Var> parents = {x, w};
  if (bias) parents.push_back(bias);
  return detail::make_op(
      std::move(out), parents, [B, C, H, W, O, kh, kw, sh, sw, g](VarNode* self) {
        const Tensor& xv = self->parents[0]->val;
        const Tensor& wv = self->parents[1]->val;
        std::int64_t P = g.Hout * g.Wout;
        ConstMatMap Wm(wv.ptr(), O, C * kh * kw);
        Tensor gx(xv.shape);
        Tensor gw(wv.shape);
        MatMap GW(gw.ptr(), O, C * kh * kw);
        RowMat cols(P, C * kh * kw), gout(P, O), gcols;
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t p = 0; p < P; ++p)
              gout(p, o) = self->grad.at(b, o, p / g.Wout, p % g.Wout);
          if (self->parents[1]->requires_grad) {
            cols.setZero();
            for (std::int64_t oh = 0; oh < g.Hout; ++oh)
              for (std::int64_t ow = 0; ow < g.Wout; ++ow) {
                std::int64_t p = oh * g.Wout + ow;
                for (std::int64_t c = 0; c < C; ++c)
                  for (std::int64_t i = 0; i < kh; ++i)
                    for (std::int64_t j = 0; j < kw; ++j) {
                      std::int64_t sy = oh * sh - g.pad_h + i;
                      std::int64_t sx = ow * sw - g.pad_w + j;
                      if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                        cols(p, (c * kh + i) * kw + j) = xv.at(b, c, sy, sx);
                    }
              }
            GW.noalias() += gout.transpose() * cols;
          }
          if (self->parents[0]->requires_grad) {
            gcols.noalias() = gout * Wm;
            for (std::int64_t oh = 0; oh < g.Hout; ++oh)
              for (std::int64_t ow = 0; ow < g.Wout; ++ow) {
                std::int64_t p = oh * g.Wout + ow;
                for (std::int64_t c = 0; c < C; ++c)
                  for (std::int64_t i = 0; i < kh; ++i)
                    for (std::int64_t j = 0; j < kw; ++j) {
                      std::int64_t sy = oh * sh - g.pad_h + i;
                      std::int64_t sx = ow * sw - g.pad_w + j;
                      if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                        gx.at(b, c, sy, sx) += gcols(p, (c * kh + i) * kw + j);
                    }
              }
          }
        }
        if (self->parents[0]->requires_grad) self->parents[0]->add_grad(gx);
        if (self->parents[1]->requires_grad) self->parents[1]->add_grad(gw);
        if (self->parents.size() > 2 && self->parents[2]->requires_grad) {
          Tensor gb(self->parents[2]->val.shape);
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t o = 0; o < O; ++o)
              for (std::int64_t p = 0; p < P; ++p)
                gb.at(o) += self->grad.at(b, o, p / g.Wout, p % g.Wout);
          self->parents[2]->add_grad(gb);
        }
      });
}

// x: [B,C,H,W], w: [O,C,kh,kw], zero "same" padding, strides (sh, sw).
inline Var conv2d_same(const Var& x, const Var& w, const Var& bias,
                       std::int64_t sh, std::int64_t sw) {
  COTA_CHECK(x->val.rank() == 4 && w->val.rank() == 4, "conv2d: ranks");
  auto g = detail::conv2d_same_geom(x->val.dim(2), x->val.dim(3), w->val.dim(2),
                                    w->val.dim(3), sh, sw);
  return conv2d_with_geom(x, w, bias, sh, sw, g);
}

namespace detail {
// Reflection fold into [0, n); identity inside, mirror-without-repeat at the
// edges, well defined for any n >= 1.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  std::int64_t p = 2 * n - 2;
  i %= p;
  if (i < 0) i += p;
  return i < n ? i : p - i;
}
}  // namespace detail

// Pads the H axis by one row on each side, repeating each item's own edge
// rows: out[h] = x[clamp(h-1, 0, len_b-1)]. A constant-in-H input stays
// constant, and taps never read rows past an item's valid length, which
// keeps batched results identical to single-item runs.
inline Var pad_clamp_h4(const Var& x, const std::vector<std::int64_t>& lengths) {
  COTA_CHECK(x->val.rank() == 4, "pad_clamp_h4: rank 4");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  COTA_CHECK(static_cast<std::int64_t>(lengths.size()) == B, "pad_clamp_h4: lengths");
  std::vector<std::int64_t> src(static_cast<std::size_t>(B * (H + 2)));
  Tensor out({B, C, H + 2, W});
  for (std::int64_t b = 0; b < B; ++b) {
    COTA_CHECK(lengths[b] >= 1 && lengths[b] <= H, "pad_clamp_h4: bad length");
    for (std::int64_t h = 0; h < H + 2; ++h) {
      std::int64_t s = std::clamp<std::int64_t>(h - 1, 0, lengths[b] - 1);
      src[static_cast<std::size_t>(b * (H + 2) + h)] = s;
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t w = 0; w < W; ++w) out.at(b, c, h, w) = x->val.at(b, c, s, w);
    }
  }
  return detail::make_op(std::move(out), {x}, [B, C, H, W, src](VarNode* self) {
    Tensor gx({B, C, H, W});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t h = 0; h < H + 2; ++h) {
        std::int64_t s = src[static_cast<std::size_t>(b * (H + 2) + h)];
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t w = 0; w < W; ++w)
            gx.at(b, c, s, w) += self->grad.at(b, c, h, w);
      }
    self->parents[0]->add_grad(gx);
  });
}

// Per-item filter bank: x [B,L], w [B,F,K], "same" zero padding -> [B,F,L].
inline Var dyn_conv1d_same(const Var& x, const Var& w) {
  COTA_CHECK(x->val.rank() == 2 && w->val.rank() == 3, "dyn_conv1d: ranks");
  std::int64_t B = x->val.dim(0), L = x->val.dim(1);
  std::int64_t F = w->val.dim(1), K = w->val.dim(2);
  COTA_CHECK(w->val.dim(0) == B, "dyn_conv1d: batch mismatch");
  std::int64_t pad = (K - 1) / 2;
  Tensor out({B, F, L});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t f = 0; f < F; ++f)
      for (std::int64_t t = 0; t < L; ++t) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < K; ++k) {
          std::int64_t src = t - pad + k;
          if (src >= 0 && src < L) acc += w->val.at(b, f, k) * x->val.at(b, src);
        }
        out.at(b, f, t) = acc;
      }
  return detail::make_op(std::move(out), {x, w}, [B, L, F, K, pad](VarNode* self) {
    const Tensor& xv = self->parents[0]->val;
    const Tensor& wv = self->parents[1]->val;
    Tensor gx(xv.shape);
    Tensor gw(wv.shape);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t t = 0; t < L; ++t) {
          double go = self->grad.at(b, f, t);
          if (go == 0.0) continue;
          for (std::int64_t k = 0; k < K; ++k) {
            std::int64_t src = t - pad + k;
            if (src >= 0 && src < L) {
              gx.at(b, src) += wv.at(b, f, k) * go;
              gw.at(b, f, k) += xv.at(b, src) * go;
            }
          }
        }
    if (self->parents[0]->requires_grad) self->parents[0]->add_grad(gx);
    if (self->parents[1]->requires_grad) self->parents[1]->add_grad(gw);
  });
}

// Reflect-pad the last axis of [B,C,L] by p on both sides.
inline Var pad_reflect_time(const Var& x, std::int64_t p) {
  COTA_CHECK(x->val.rank() == 3, "pad_reflect_time: rank 3");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), L = x->val.dim(2);
  COTA_CHECK(L >= 1, "pad_reflect_time: empty");
  auto mirror = [L](std::int64_t i) {
    // reflect without repeating the edge sample; degenerate L==1 pins to 0
    if (L == 1) return static_cast<std::int64_t>(0);
    while (i < 0 || i >= L) {
      if (i < 0) i = -i;
      if (i >= L) i = 2 * (L - 1) - i;
    }
    return i;
  };
  Tensor out({B, C, L + 2 * p});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < L + 2 * p; ++t)
        out.at(b, c, t) = x->val.at(b, c, mirror(t - p));
  return detail::make_op(std::move(out), {x}, [B, C, L, p, mirror](VarNode* self) {
    Tensor g({B, C, L});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t t = 0; t < L + 2 * p; ++t)
          g.at(b, c, mirror(t - p)) += self->grad.at(b, c, t);
    self->parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// Softmax / losses
// ---------------------------------------------------------------------------

// Row softmax over [B,N]; mask entries of 0 get exactly zero probability.
inline Var masked_softmax(const Var& x, const Tensor& mask) {
  COTA_CHECK(x->val.rank() == 2 && x->val.same_shape(mask), "masked_softmax: shapes");
  std::int64_t B = x->val.dim(0), N = x->val.dim(1);
  Tensor out({B, N});
  for (std::int64_t b = 0; b < B; ++b) {
    double m = -1e300;
    for (std::int64_t j = 0; j < N; ++j)
      if (mask.at(b, j) != 0.0) m = std::max(m, x->val.at(b, j));
    COTA_CHECK(m > -1e300, "masked_softmax: fully masked row");
    double s = 0.0;
    for (std::int64_t j = 0; j < N; ++j) {
      double e = mask.at(b, j) != 0.0 ? std::exp(x->val.at(b, j) - m) : 0.0;
      out.at(b, j) = e;
      s += e;
    }
    for (std::int64_t j = 0; j < N; ++j) out.at(b, j) /= s;
  }
  Tensor saved = out;
  return detail::make_op(std::move(out), {x}, [saved, B, N](VarNode* self) {
    Tensor g({B, N});
    for (std::int64_t b = 0; b < B; ++b) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < N; ++j) dot += self->grad.at(b, j) * saved.at(b, j);
      for (std::int64_t j = 0; j < N; ++j)
        g.at(b, j) = saved.at(b, j) * (self->grad.at(b, j) - dot);
    }
    self->parents[0]->add_grad(g);
  });
}

// Mean cross-entropy from raw logits [B,K] against integer labels.
inline Var cross_entropy_logits(const Var& logits,
                                const std::vector<std::int64_t>& labels) {
  COTA_CHECK(logits->val.rank() == 2, "cross_entropy: rank 2 expected");
  std::int64_t B = logits->val.dim(0), K = logits->val.dim(1);
  COTA_CHECK(static_cast<std::int64_t>(labels.size()) == B, "cross_entropy: labels");
  Tensor probs({B, K});
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    COTA_CHECK(labels[b] >= 0 && labels[b] < K, "cross_entropy: label range");
    double m = -1e300;
    for (std::int64_t k = 0; k < K; ++k) m = std::max(m, logits->val.at(b, k));
    double s = 0.0;
    for (std::int64_t k = 0; k < K; ++k) s += std::exp(logits->val.at(b, k) - m);
    double lse = m + std::log(s);
    loss += lse - logits->val.at(b, labels[b]);
    for (std::int64_t k = 0; k < K; ++k)
      probs.at(b, k) = std::exp(logits->val.at(b, k) - lse);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(B));
  return detail::make_op(std::move(out), {logits}, [probs, labels, B, K](VarNode* self) {
    double g0 = self->grad.data[0] / static_cast<double>(B);
    Tensor g({B, K});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t k = 0; k < K; ++k)
        g.at(b, k) = g0 * (probs.at(b, k) - (k == labels[b] ? 1.0 : 0.0));
    self->parents[0]->add_grad(g);
  });
}

// Batched attention context: attn [B,N] x mem [B,N,D] -> [B,D].
inline Var bmm_attn(const Var& attn, const Var& mem) {
  COTA_CHECK(attn->val.rank() == 2 && mem->val.rank() == 3 &&
                 attn->val.dim(0) == mem->val.dim(0) &&
                 attn->val.dim(1) == mem->val.dim(1),
             "bmm_attn: shapes");
  std::int64_t B = attn->val.dim(0), N = attn->val.dim(1), D = mem->val.dim(2);
  Tensor out({B, D});
  for (std::int64_t b = 0; b < B; ++b) {
    ConstMatMap M(mem->val.ptr() + b * N * D, N, D);
    ConstMatMap a(attn->val.ptr() + b * N, 1, N);
    MatMap o(out.ptr() + b * D, 1, D);
    o.noalias() = a * M;
  }
  return detail::make_op(std::move(out), {attn, mem}, [B, N, D](VarNode* self) {
    const Tensor& av = self->parents[0]->val;
    const Tensor& mv = self->parents[1]->val;
    if (self->parents[0]->requires_grad) {
      Tensor ga({B, N});
      for (std::int64_t b = 0; b < B; ++b) {
        ConstMatMap M(mv.ptr() + b * N * D, N, D);
        ConstMatMap go(self->grad.ptr() + b * D, 1, D);
        MatMap g(ga.ptr() + b * N, 1, N);
        g.noalias() = go * M.transpose();
      }
      self->parents[0]->add_grad(ga);
    }
    if (self->parents[1]->requires_grad) {
      Tensor gm({B, N, D});
      for (std::int64_t b = 0; b < B; ++b) {
        ConstMatMap a(av.ptr() + b * N, 1, N);
        ConstMatMap go(self->grad.ptr() + b * D, 1, D);
        MatMap g(gm.ptr() + b * N * D, N, D);
        g.noalias() = a.transpose() * go;
      }
      self->parents[1]->add_grad(gm);
    }
  });
}

// Stack feature maps along the channel axis: [B,C_i,L] -> [B,sum C_i,L].
inline Var concat_ch(const std::vector<Var>& xs) {
  COTA_CHECK(!xs.empty(), "concat_ch: empty");
  std::int64_t B = xs[0]->val.dim(0), L = xs[0]->val.dim(2), C = 0;
  std::vector<std::int64_t> offs;
  for (const auto& x : xs) {
    COTA_CHECK(x->val.rank() == 3 && x->val.dim(0) == B && x->val.dim(2) == L,
               "concat_ch: shape mismatch");
    offs.push_back(C);
    C += x->val.dim(1);
  }
  Tensor out({B, C, L});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::int64_t ci = xs[i]->val.dim(1), o = offs[i];
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < ci; ++c)
        for (std::int64_t t = 0; t < L; ++t)
          out.at(b, o + c, t) = xs[i]->val.at(b, c, t);
  }
  return detail::make_op(std::move(out), xs, [B, L, offs](VarNode* self) {
    for (std::size_t i = 0; i < self->parents.size(); ++i) {
      auto& p = self->parents[i];
      if (!p->requires_grad) continue;
      std::int64_t ci = p->val.dim(1), o = offs[i];
      Tensor g({B, ci, L});
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < ci; ++c)
          for (std::int64_t t = 0; t < L; ++t)
            g.at(b, c, t) = self->grad.at(b, o + c, t);
      p->add_grad(g);
    }
  });
}

// Broadcast-concat a per-item vector onto every position: [B,N,E] + [B,Z]
// -> [B,N,E+Z].
inline Var concat_mem(const Var& enc, const Var& z) {
  COTA_CHECK(enc->val.rank() == 3 && z->val.rank() == 2 &&
                 enc->val.dim(0) == z->val.dim(0),
             "concat_mem: shapes");
  std::int64_t B = enc->val.dim(0), N = enc->val.dim(1), E = enc->val.dim(2);
  std::int64_t Z = z->val.dim(1);
  Tensor out({B, N, E + Z});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t e = 0; e < E; ++e) out.at(b, n, e) = enc->val.at(b, n, e);
      for (std::int64_t j = 0; j < Z; ++j) out.at(b, n, E + j) = z->val.at(b, j);
    }
  return detail::make_op(std::move(out), {enc, z}, [B, N, E, Z](VarNode* self) {
    if (self->parents[0]->requires_grad) {
      Tensor g({B, N, E});
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t e = 0; e < E; ++e) g.at(b, n, e) = self->grad.at(b, n, e);
      self->parents[0]->add_grad(g);
    }
    if (self->parents[1]->requires_grad) {
      Tensor g({B, Z});
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t j = 0; j < Z; ++j) g.at(b, j) += self->grad.at(b, n, E + j);
      self->parents[1]->add_grad(g);
    }
  });
}

// Max over valid time positions: [B,C,L] -> [B,C].
inline Var maxpool_time(const Var& x, const std::vector<std::int64_t>& lengths) {
  COTA_CHECK(x->val.rank() == 3, "maxpool_time: rank 3");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), L = x->val.dim(2);
  COTA_CHECK(static_cast<std::int64_t>(lengths.size()) == B, "maxpool_time: lengths");
  Tensor out({B, C});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(B * C));
  for (std::int64_t b = 0; b < B; ++b) {
    std::int64_t n = std::min(lengths[b], L);
    COTA_CHECK(n >= 1, "maxpool_time: empty item");
    for (std::int64_t c = 0; c < C; ++c) {
      double best = x->val.at(b, c, 0);
      std::int64_t bi = 0;
      for (std::int64_t t = 1; t < n; ++t)
        if (x->val.at(b, c, t) > best) { best = x->val.at(b, c, t); bi = t; }
      out.at(b, c) = best;
      arg[static_cast<std::size_t>(b * C + c)] = bi;
    }
  }
  return detail::make_op(std::move(out), {x}, [arg, B, C](VarNode* self) {
    Tensor g(self->parents[0]->val.shape);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        g.at(b, c, arg[static_cast<std::size_t>(b * C + c)]) += self->grad.at(b, c);
    self->parents[0]->add_grad(g);
  });
}

// [B,C,H,W] -> [B, C*W, H]: folds channels and width into one feature axis
// per H step, so recurrences over H can consume conv2d output directly.
inline Var merge_freq(const Var& x) {
  COTA_CHECK(x->val.rank() == 4, "merge_freq: rank 4 expected");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  Tensor out({B, C * W, H});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w)
          out.at(b, c * W + w, h) = x->val.at(b, c, h, w);
  return detail::make_op(std::move(out), {x}, [B, C, H, W](VarNode* self) {
    Tensor g({B, C, H, W});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t w = 0; w < W; ++w)
            g.at(b, c, h, w) = self->grad.at(b, c * W + w, h);
    self->parents[0]->add_grad(g);
  });
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

inline void backward(const Var& root) {
  COTA_CHECK(root->val.numel() == 1, "backward: root must be scalar");
  COTA_CHECK(root->requires_grad, "backward: root does not require grad");
  // Iterative post-order topo sort.
  std::vector<VarNode*> order;
  std::unordered_set<VarNode*> seen;
  std::vector<std::pair<VarNode*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      VarNode* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p) && !p->parents.empty()) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.data.setConstant(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(n);
  }
}

inline void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    p->has_grad = false;
    p->grad = Tensor();
  }
}

}  // namespace cota
