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

// Normalization ops with hand-derived backward passes. Batch statistics are
// always computed over valid time positions only, so batching items of
// different lengths together gives the same statistics as processing them
// one by one. The affine parameters may be shared ([C]) or per-item ([B,C]),
// the latter being how speaker conditioning enters the synthesis decoder.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cotatron/autograd.hpp"

namespace cota {

struct BnStats {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  explicit BnStats(std::int64_t C = 0) {
    if (C > 0) {
      running_mean = Tensor::zeros({C});
      running_var = Tensor::full({C}, 1.0);
    }
  }
};

inline Tensor make_time_mask(const std::vector<std::int64_t>& lengths,
                             std::int64_t L) {
  std::int64_t B = static_cast<std::int64_t>(lengths.size());
  Tensor m({B, L});
  for (std::int64_t b = 0; b < B; ++b) {
    COTA_CHECK(lengths[b] >= 0 && lengths[b] <= L, "make_time_mask: bad length");
    for (std::int64_t t = 0; t < lengths[b]; ++t) m.at(b, t) = 1.0;
  }
  return m;
}

// [B,L] -> [B,C,L]
inline Tensor expand_mask3(const Tensor& mask, std::int64_t C) {
  std::int64_t B = mask.dim(0), L = mask.dim(1);
  Tensor out({B, C, L});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < L; ++t) out.at(b, c, t) = mask.at(b, t);
  return out;
}

// [B,H] -> [B,C,H,W], broadcasting over channels and width
inline Tensor expand_mask4(const Tensor& mask, std::int64_t C, std::int64_t W) {
  std::int64_t B = mask.dim(0), H = mask.dim(1);
  Tensor out({B, C, H, W});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) out.at(b, c, h, w) = mask.at(b, h);
  return out;
}

namespace detail {

// Flattened view of [B,C,L] or [B,C,H,W]; for rank 4 the mask covers H and is
// broadcast across W.
struct BnLayout {
  std::int64_t B, C, P, W;  // P = spatial positions per (b,c); W = inner width
};

inline BnLayout bn_layout(const Tensor& x) {
  COTA_CHECK(x.rank() == 3 || x.rank() == 4, "batch_norm: rank 3 or 4");
  BnLayout l;
  l.B = x.dim(0);
  l.C = x.dim(1);
  if (x.rank() == 3) {
    l.P = x.dim(2);
    l.W = 1;
  } else {
    l.P = x.dim(2) * x.dim(3);
    l.W = x.dim(3);
  }
  return l;
}

inline bool bn_valid(const Tensor* mask, std::int64_t b, std::int64_t p,
                     std::int64_t W) {
  if (!mask) return true;
  return mask->at(b, p / W) != 0.0;
}

}  // namespace detail

// Masked batch normalization. gamma/beta rank 1 = shared affine, rank 2 =
// per-item affine ([B,C]). `time_mask` is [B,L] (rank-3 x) or [B,H] (rank-4
// x); null means every position counts. In training mode batch statistics
// are used and the running stats updated in place; in eval mode the running
// stats are applied and nothing is written.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
                      BnStats& stats, bool training, double momentum,
                      double eps, const Tensor* time_mask = nullptr) {
  auto lay = detail::bn_layout(x->val);
  const std::int64_t B = lay.B, C = lay.C, P = lay.P, W = lay.W;
  bool per_item = gamma->val.rank() == 2;
  if (per_item)
    COTA_CHECK(gamma->val.dim(0) == B && gamma->val.dim(1) == C &&
                   beta->val.same_shape(gamma->val),
               "batch_norm: per-item affine shape");
  else
    COTA_CHECK(gamma->val.numel() == C && beta->val.numel() == C,
               "batch_norm: affine shape");
  COTA_CHECK(stats.running_mean.numel() == C, "batch_norm: stats size");

  auto xp = [&](std::int64_t b, std::int64_t c, std::int64_t p) -> double {
    return x->val.data[(b * C + c) * P + p];
  };
  auto gamma_at = [&](std::int64_t b, std::int64_t c) {
    return per_item ? gamma->val.at(b, c) : gamma->val.data[c];
  };
  auto beta_at = [&](std::int64_t b, std::int64_t c) {
    return per_item ? beta->val.at(b, c) : beta->val.data[c];
  };

  Tensor mean({C}), invstd({C});
  double n = 0.0;
  if (training) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < P; ++p)
        if (detail::bn_valid(time_mask, b, p, W)) n += 1.0;
    COTA_CHECK(n >= 1.0, "batch_norm: no valid positions");
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < P; ++p)
          if (detail::bn_valid(time_mask, b, p, W)) s += xp(b, c, p);
      double mu = s / n;
      double v = 0.0;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < P; ++p)
          if (detail::bn_valid(time_mask, b, p, W)) {
            double d = xp(b, c, p) - mu;
            v += d * d;
          }
      v /= n;
      mean.data[c] = mu;
      invstd.data[c] = 1.0 / std::sqrt(v + eps);
      stats.running_mean.data[c] =
          (1.0 - momentum) * stats.running_mean.data[c] + momentum * mu;
      stats.running_var.data[c] =
          (1.0 - momentum) * stats.running_var.data[c] + momentum * v;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean.data[c] = stats.running_mean.data[c];
      invstd.data[c] = 1.0 / std::sqrt(stats.running_var.data[c] + eps);
    }
  }

  Tensor out(x->val.shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      double g = gamma_at(b, c), bt = beta_at(b, c);
      double mu = mean.data[c], iv = invstd.data[c];
      for (std::int64_t p = 0; p < P; ++p)
        out.data[(b * C + c) * P + p] = g * (xp(b, c, p) - mu) * iv + bt;
    }

  Tensor mask_copy = time_mask ? *time_mask : Tensor();
  bool has_mask = time_mask != nullptr;
  return detail::make_op(
      std::move(out), {x, gamma, beta},
      [B, C, P, W, per_item, mean, invstd, n, training, has_mask,
       mask_copy](VarNode* self) {
        const Tensor& xv = self->parents[0]->val;
        const Tensor& gv = self->parents[1]->val;
        const Tensor* msk = has_mask ? &mask_copy : nullptr;
        auto xp = [&](std::int64_t b, std::int64_t c, std::int64_t p) {
          return xv.data[(b * C + c) * P + p];
        };
        auto dy = [&](std::int64_t b, std::int64_t c, std::int64_t p) {
          return self->grad.data[(b * C + c) * P + p];
        };
        auto gamma_at = [&](std::int64_t b, std::int64_t c) {
          return per_item ? gv.at(b, c) : gv.data[c];
        };
        bool need_gx = self->parents[0]->requires_grad;
        bool need_gg = self->parents[1]->requires_grad;
        bool need_gb = self->parents[2]->requires_grad;
        Tensor gx, gg, gb;
        if (need_gx) gx = Tensor::zeros(xv.shape);
        if (need_gg) gg = Tensor::zeros(gv.shape);
        if (need_gb) gb = Tensor::zeros(gv.shape);

        for (std::int64_t c = 0; c < C; ++c) {
          double mu = mean.data[c], iv = invstd.data[c];
          if (training) {
            double dv = 0.0, dmu_direct = 0.0, sum_xc = 0.0;
            for (std::int64_t b = 0; b < B; ++b) {
              double g = gamma_at(b, c);
              for (std::int64_t p = 0; p < P; ++p) {
                double dxh = g * dy(b, c, p);
                double xm = xp(b, c, p) - mu;
                dv += dxh * xm;
                dmu_direct += dxh;
                if (detail::bn_valid(msk, b, p, W)) sum_xc += xm;
              }
            }
            dv *= -0.5 * iv * iv * iv;
            double dmu = -iv * dmu_direct + dv * (-2.0 / n) * sum_xc;
            if (need_gx) {
              for (std::int64_t b = 0; b < B; ++b) {
                double g = gamma_at(b, c);
                for (std::int64_t p = 0; p < P; ++p) {
                  double v = g * dy(b, c, p) * iv;
                  if (detail::bn_valid(msk, b, p, W))
                    v += dv * 2.0 * (xp(b, c, p) - mu) / n + dmu / n;
                  gx.data[(b * C + c) * P + p] = v;
                }
              }
            }
          } else if (need_gx) {
            for (std::int64_t b = 0; b < B; ++b) {
              double g = gamma_at(b, c);
              for (std::int64_t p = 0; p < P; ++p)
                gx.data[(b * C + c) * P + p] = g * dy(b, c, p) * iv;
            }
          }
          if (need_gg || need_gb) {
            for (std::int64_t b = 0; b < B; ++b) {
              double sg = 0.0, sb = 0.0;
              for (std::int64_t p = 0; p < P; ++p) {
                double d = dy(b, c, p);
                sg += d * (xp(b, c, p) - mu) * iv;
                sb += d;
              }
              if (per_item) {
                if (need_gg) gg.at(b, c) += sg;
                if (need_gb) gb.at(b, c) += sb;
              } else {
                if (need_gg) gg.data[c] += sg;
                if (need_gb) gb.data[c] += sb;
              }
            }
          }
        }
        if (need_gx) self->parents[0]->add_grad(gx);
        if (need_gg) self->parents[1]->add_grad(gg);
        if (need_gb) self->parents[2]->add_grad(gb);
      });
}

// Per-item, per-channel normalization over valid time positions of [B,C,L].
// No affine parameters; padded positions come out exactly zero.
inline Var instance_norm_time(const Var& x,
                              const std::vector<std::int64_t>& lengths,
                              double eps = 1e-5) {
  COTA_CHECK(x->val.rank() == 3, "instance_norm_time: rank 3");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), L = x->val.dim(2);
  COTA_CHECK(static_cast<std::int64_t>(lengths.size()) == B,
             "instance_norm_time: lengths size");
  Tensor mean({B, C}), invstd({B, C});
  Tensor out({B, C, L});
  for (std::int64_t b = 0; b < B; ++b) {
    std::int64_t n = lengths[b];
    COTA_CHECK(n >= 1 && n <= L, "instance_norm_time: bad length");
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t t = 0; t < n; ++t) s += x->val.at(b, c, t);
      double mu = s / static_cast<double>(n);
      double v = 0.0;
      for (std::int64_t t = 0; t < n; ++t) {
        double d = x->val.at(b, c, t) - mu;
        v += d * d;
      }
      v /= static_cast<double>(n);
      double iv = 1.0 / std::sqrt(v + eps);
      mean.at(b, c) = mu;
      invstd.at(b, c) = iv;
      for (std::int64_t t = 0; t < n; ++t)
        out.at(b, c, t) = (x->val.at(b, c, t) - mu) * iv;
    }
  }
  return detail::make_op(
      std::move(out), {x}, [B, C, L, lengths, mean, invstd](VarNode* self) {
        const Tensor& xv = self->parents[0]->val;
        Tensor gx({B, C, L});
        for (std::int64_t b = 0; b < B; ++b) {
          std::int64_t n = lengths[b];
          double nd = static_cast<double>(n);
          for (std::int64_t c = 0; c < C; ++c) {
            double mu = mean.at(b, c), iv = invstd.at(b, c);
            double dv = 0.0, dmu_direct = 0.0, sum_xc = 0.0;
            for (std::int64_t t = 0; t < n; ++t) {
              double d = self->grad.at(b, c, t);
              double xm = xv.at(b, c, t) - mu;
              dv += d * xm;
              dmu_direct += d;
              sum_xc += xm;
            }
            dv *= -0.5 * iv * iv * iv;
            double dmu = -iv * dmu_direct + dv * (-2.0 / nd) * sum_xc;
            for (std::int64_t t = 0; t < n; ++t)
              gx.at(b, c, t) = self->grad.at(b, c, t) * iv +
                               dv * 2.0 * (xv.at(b, c, t) - mu) / nd + dmu / nd;
          }
        }
        self->parents[0]->add_grad(gx);
      });
}

}  // namespace cota
