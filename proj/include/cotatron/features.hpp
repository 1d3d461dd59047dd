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

// The two speaker-independent feature streams fed to the conversion decoder:
// linguistic features (alignment times text encoding, pulled out of a frozen
// Cotatron under full teacher forcing) and a one-channel residual signal
// that carries what the transcript cannot, squashed into (-1, 1).

#include <cmath>
#include <cstdint>
#include <vector>

#include "cotatron/autograd.hpp"
#include "cotatron/model.hpp"
#include "cotatron/nn.hpp"
#include "cotatron/norm.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/tensor.hpp"

namespace cota {

// ---------------------------------------------------------------------------
// Linguistic features
// ---------------------------------------------------------------------------

// Teacher-forced alignment of one utterance against its transcript.
// mel: [T, n_mels]; returns a row-stochastic [T, N].
inline Tensor extract_alignment(const Tensor& mel,
                                const std::vector<std::int64_t>& ids,
                                Cotatron& model) {
  COTA_CHECK(mel.rank() == 2, "extract_alignment: mel must be [T, n_mels]");
  std::int64_t T = mel.dim(0), M = mel.dim(1);
  NoGrad ng;
  Tensor batched({1, T, M});
  for (std::int64_t i = 0; i < mel.numel(); ++i) batched.data[i] = mel.data[i];
  CotatronOutput out = model.forward(batched, {T}, {ids}, 1.0, false, Rng(0));
  std::int64_t N = out.alignment->val.dim(2);
  Tensor a({T, N});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t n = 0; n < N; ++n) a.at(t, n) = out.alignment->val.at(0, t, n);
  return a;
}

// L = alignment * text encoding: [T, N] x [N, E] -> [T, E].
inline Tensor linguistic_features(const Tensor& a, const Tensor& enc) {
  COTA_CHECK(a.rank() == 2 && enc.rank() == 2, "linguistic_features: rank 2");
  COTA_CHECK(a.dim(1) == enc.dim(0),
             "linguistic_features: alignment columns must match encoding rows");
  Tensor L({a.dim(0), enc.dim(1)});
  MatMap(L.ptr(), L.dim(0), L.dim(1)) =
      ConstMatMap(a.ptr(), a.dim(0), a.dim(1)) *
      ConstMatMap(enc.ptr(), enc.dim(0), enc.dim(1));
  return L;
}

// Because every attention row sums to one and the speaker vector is appended
// to each memory position, the decoder's per-step context vector must equal
// [L_t ; z]. Returns the max absolute gap between the first E dims of the
// collected contexts and L computed independently; anything but rounding
// noise means the decoder loop and the feature path disagree.
inline double context_equivalence_check(const Tensor& mel,
                                        const std::vector<std::int64_t>& ids,
                                        Cotatron& model) {
  COTA_CHECK(mel.rank() == 2, "context_equivalence_check: mel must be [T, n_mels]");
  std::int64_t T = mel.dim(0), M = mel.dim(1);
  NoGrad ng;
  Tensor batched({1, T, M});
  for (std::int64_t i = 0; i < mel.numel(); ++i) batched.data[i] = mel.data[i];
  CotatronOutput out = model.forward(batched, {T}, {ids}, 1.0, false, Rng(0));

  TextEncoding te = model.encode_text({ids}, false, nullptr);
  std::int64_t N = te.enc->val.dim(1), E = te.enc->val.dim(2);
  Tensor enc({N, E});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t e = 0; e < E; ++e) enc.at(n, e) = te.enc->val.at(0, n, e);
  Tensor a({T, N});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t n = 0; n < N; ++n) a.at(t, n) = out.alignment->val.at(0, t, n);
  Tensor L = linguistic_features(a, enc);

  double dev = 0.0;
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t e = 0; e < E; ++e)
      dev = std::max(dev, std::abs(out.contexts->val.at(0, t, e) - L.at(t, e)));
  return dev;
}

// ---------------------------------------------------------------------------
// Residual encoder
// ---------------------------------------------------------------------------

namespace detail {

// Unit-sum Hann window of odd length.
inline Tensor hann_kernel(std::int64_t len) {
  COTA_CHECK(len >= 3 && len % 2 == 1, "hann_kernel: odd length >= 3");
  Tensor k({len});
  double sum = 0.0;
  for (std::int64_t i = 0; i < len; ++i) {
    k.data[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) /
                                      static_cast<double>(len - 1)));
    sum += k.data[i];
  }
  for (std::int64_t i = 0; i < len; ++i) k.data[i] /= sum;
  return k;
}

}  // namespace detail

// Per-item reflect-padded moving average along time: x [B,C,T] smoothed with
// the given unit-sum kernel inside each item's own valid window; positions
// past an item's length come out zero.
inline Var smooth_time(const Var& x, const std::vector<std::int64_t>& lengths,
                       const Tensor& kernel) {
  COTA_CHECK(x->val.rank() == 3, "smooth_time: rank 3");
  COTA_CHECK(kernel.rank() == 1 && kernel.numel() % 2 == 1, "smooth_time: odd kernel");
  std::int64_t B = x->val.dim(0), C = x->val.dim(1), T = x->val.dim(2);
  COTA_CHECK(static_cast<std::int64_t>(lengths.size()) == B, "smooth_time: lengths");
  std::int64_t K = kernel.numel(), R = K / 2;
  Tensor out({B, C, T});
  for (std::int64_t b = 0; b < B; ++b) {
    std::int64_t n = lengths[b];
    COTA_CHECK(n >= 1 && n <= T, "smooth_time: bad length");
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < n; ++t) {
        double s = 0.0;
        for (std::int64_t j = 0; j < K; ++j)
          s += kernel.data[j] * x->val.at(b, c, detail::reflect_index(t - R + j, n));
        out.at(b, c, t) = s;
      }
  }
  return detail::make_op(std::move(out), {x}, [B, C, T, K, R, lengths, kernel](VarNode* self) {
    Tensor gx({B, C, T});
    for (std::int64_t b = 0; b < B; ++b) {
      std::int64_t n = lengths[b];
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t t = 0; t < n; ++t) {
          double g = self->grad.at(b, c, t);
          for (std::int64_t j = 0; j < K; ++j)
            gx.at(b, c, detail::reflect_index(t - R + j, n)) += kernel.data[j] * g;
        }
    }
    self->parents[0]->add_grad(gx);
  });
}

struct ResidualEncoderConfig {
  std::int64_t n_mels = 80;
  std::vector<std::int64_t> channels = {32, 32, 64, 64, 128, 128};
  std::int64_t smooth_len = 21;

  void check() const {
    COTA_CHECK(n_mels >= 64, "residual encoder wants at least 64 mel bins");
    COTA_CHECK(!channels.empty(), "residual encoder: no conv layers");
  }
};

// Mel in, one bounded channel out, frame count untouched. Six 3x3 convs
// stride the mel axis down while the time axis is edge-padded (so a signal
// constant over time stays constant all the way through), then a linear
// projection, per-utterance instance norm, tanh, and Hann smoothing.
class ResidualEncoder {
 public:
  ResidualEncoder() = default;
  ResidualEncoder(const ResidualEncoderConfig& cfg, const Rng& rng) : cfg_(cfg) {
    cfg.check();
    std::int64_t c_in = 1, w = cfg.n_mels;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      std::int64_t c_out = cfg.channels[i];
      Layer l;
      // gain sqrt(6/fan): the downstream normalizer divides by
      // sqrt(var + eps), so six rectified layers must not collapse the
      // signal's scale toward eps
      Tensor w0 = init::uniform_fan(rng.stream("conv" + std::to_string(i)),
                                    {c_out, c_in, 3, 3}, c_in * 9);
      for (std::int64_t j = 0; j < w0.numel(); ++j) w0.data[j] *= std::sqrt(6.0);
      l.W = leaf_param(std::move(w0));
      l.b = leaf_param(Tensor::zeros({c_out}));
      layers_.push_back(std::move(l));
      c_in = c_out;
      w = (w + 1) / 2;
    }
    proj_ = Linear(c_in * w, 1, rng.stream("proj"));
    kernel_ = detail::hann_kernel(cfg.smooth_len);
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      r.add(prefix + ".conv" + std::to_string(i) + ".W", layers_[i].W);
      r.add(prefix + ".conv" + std::to_string(i) + ".b", layers_[i].b);
    }
    proj_.register_into(r, prefix + ".proj");
  }

  // Normalized pre-tanh signal: [B, 1, T], per-item zero mean unit variance
  // over valid frames.
  Var pre_activation(const Tensor& mel, const std::vector<std::int64_t>& lengths) const {
    COTA_CHECK(mel.rank() == 3 && mel.dim(2) == cfg_.n_mels,
               "residual encoder: want [B, T, n_mels]");
    std::int64_t B = mel.dim(0), T = mel.dim(1);
    COTA_CHECK(static_cast<std::int64_t>(lengths.size()) == B,
               "residual encoder: lengths size");
    Tensor canon({B, 1, T, cfg_.n_mels});
    for (std::int64_t b = 0; b < B; ++b) {
      COTA_CHECK(lengths[b] >= 1 && lengths[b] <= T, "residual encoder: bad length");
      for (std::int64_t t = 0; t < lengths[b]; ++t)
        for (std::int64_t m = 0; m < cfg_.n_mels; ++m)
          canon.at(b, 0, t, m) = mel.at(b, t, m);
    }
    Var x = constant(std::move(canon));
    std::int64_t w = cfg_.n_mels;
    for (const Layer& l : layers_) {
      x = pad_clamp_h4(x, lengths);
      std::int64_t w_out = (w + 1) / 2;
      detail::Conv2dGeom g;
      g.Hout = T;
      g.Wout = w_out;
      g.pad_h = 0;
      g.pad_w = std::max<std::int64_t>(0, (w_out - 1) * 2 + 3 - w) / 2;
      x = relu_v(conv2d_with_geom(x, l.W, l.b, 1, 2, g));
      w = w_out;
    }
    Var flat = transpose12(merge_freq(x));       // [B, T, C*w]
    Var r = transpose12(apply_linear3(proj_, flat));  // [B, 1, T]
    return instance_norm_time(r, lengths);
  }

  // mel: [B, T, n_mels] -> [B, T, 1], every value strictly inside (-1, 1).
  Var operator()(const Tensor& mel, const std::vector<std::int64_t>& lengths) const {
    Var r = smooth_time(tanh_v(pre_activation(mel, lengths)), lengths, kernel_);
    return transpose12(r);
  }

  const Tensor& smoothing_kernel() const { return kernel_; }
  const ResidualEncoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    Var W, b;
  };
  ResidualEncoderConfig cfg_;
  std::vector<Layer> layers_;
  Linear proj_;
  Tensor kernel_;
};

}  // namespace cota
