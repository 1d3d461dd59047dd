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

// The conversion decoder: turns the concatenated linguistic and residual
// streams back into a mel spectrogram under target-speaker conditioning.
// The speaker enters exclusively through conditional batch norm; there is
// no upsampling, so the frame count rides through untouched.

#include <cstdint>
#include <string>
#include <vector>

#include "cotatron/autograd.hpp"
#include "cotatron/nn.hpp"
#include "cotatron/norm.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/tensor.hpp"

namespace cota {

struct VcDecoderConfig {
  std::int64_t text_dim = 512;  // linguistic feature width; input is +1 for R
  std::int64_t n_mels = 80;
  std::int64_t n_speakers = 108;
  std::int64_t emb_dim = 256;
  std::vector<std::int64_t> channels = {512, 384, 256, 192};

  std::int64_t input_dim() const { return text_dim + 1; }

  void check() const {
    COTA_CHECK(n_speakers >= 1 && emb_dim >= 1, "vc decoder: bad speaker table");
    COTA_CHECK(channels.size() == 4, "vc decoder wants 4 blocks");
  }

  static VcDecoderConfig toy(std::int64_t n_speakers) {
    VcDecoderConfig c;
    c.text_dim = 32;
    c.n_mels = 16;
    c.n_speakers = n_speakers;
    c.emb_dim = 16;
    c.channels = {24, 20, 16, 12};
    return c;
  }
};

// Batch norm whose scale and shift are affine functions of the speaker
// embedding. The maps start at zero (plus one on the scale), so a freshly
// built layer is plain batch norm and conditioning turns on only once
// training moves the weights.
class ConditionalBatchNorm {
 public:
  ConditionalBatchNorm() = default;
  ConditionalBatchNorm(std::int64_t emb_dim, std::int64_t channels)
      : to_gamma_(leaf_param(Tensor::zeros({emb_dim, channels}))),
        to_beta_(leaf_param(Tensor::zeros({emb_dim, channels}))),
        gamma_bias_(leaf_param(Tensor::zeros({channels}))),
        beta_bias_(leaf_param(Tensor::zeros({channels}))),
        stats_(channels) {}

  void register_into(ParamRegistry& r, const std::string& prefix) {
    r.add(prefix + ".to_gamma", to_gamma_);
    r.add(prefix + ".to_beta", to_beta_);
    r.add(prefix + ".gamma_bias", gamma_bias_);
    r.add(prefix + ".beta_bias", beta_bias_);
    r.add_buffer(prefix + ".running_mean", &stats_.running_mean);
    r.add_buffer(prefix + ".running_var", &stats_.running_var);
  }

  // x: [B,C,T], y: [B,emb_dim]
  Var operator()(const Var& x, const Var& y, bool training,
                 const Tensor* time_mask = nullptr) {
    Var gamma = add_scalar(add_rowvec(matmul(y, to_gamma_), gamma_bias_), 1.0);
    Var beta = add_rowvec(matmul(y, to_beta_), beta_bias_);
    return batch_norm(x, gamma, beta, stats_, training, momentum, eps, time_mask);
  }

  double momentum = 0.1;
  double eps = 1e-5;

 private:
  Var to_gamma_, to_beta_, gamma_bias_, beta_bias_;
  BnStats stats_;
};

// Residual block after the GAN-TTS recipe, upsampling stripped: two
// sub-units of (CBN, ReLU, dilated conv) x2, dilations 1,2 then 4,8, with a
// 1x1 skip where the channel count changes.
class GBlock {
 public:
  GBlock() = default;
  GBlock(std::int64_t c_in, std::int64_t c_out, std::int64_t emb_dim, const Rng& rng)
      : cbn1_(emb_dim, c_in),
        cbn2_(emb_dim, c_out),
        cbn3_(emb_dim, c_out),
        cbn4_(emb_dim, c_out),
        conv1_(c_in, c_out, 3, rng.stream("conv1"), 1),
        conv2_(c_out, c_out, 3, rng.stream("conv2"), 2),
        conv3_(c_out, c_out, 3, rng.stream("conv3"), 4),
        conv4_(c_out, c_out, 3, rng.stream("conv4"), 8),
        has_skip_(c_in != c_out) {
    if (has_skip_) skip_ = Conv1dLayer(c_in, c_out, 1, rng.stream("skip"));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) {
    cbn1_.register_into(r, prefix + ".cbn1");
    cbn2_.register_into(r, prefix + ".cbn2");
    cbn3_.register_into(r, prefix + ".cbn3");
    cbn4_.register_into(r, prefix + ".cbn4");
    conv1_.register_into(r, prefix + ".conv1");
    conv2_.register_into(r, prefix + ".conv2");
    conv3_.register_into(r, prefix + ".conv3");
    conv4_.register_into(r, prefix + ".conv4");
    if (has_skip_) skip_.register_into(r, prefix + ".skip");
  }

  Var operator()(const Var& x, const Var& y, bool training, const Tensor* mask) {
    // Normalization shifts padded positions off zero, and the dilated convs
    // would smear that into valid frames; zeroing each conv input keeps a
    // padded batch member exactly equivalent to running it alone.
    auto masked = [&](const Var& v) {
      return mask ? mul_const(v, expand_mask3(*mask, v->val.dim(1))) : v;
    };
    Var h = conv1_(masked(relu_v(cbn1_(x, y, training, mask))));
    h = conv2_(masked(relu_v(cbn2_(h, y, training, mask))));
    Var x1 = add(h, has_skip_ ? skip_(x) : x);
    Var h2 = conv3_(masked(relu_v(cbn3_(x1, y, training, mask))));
    h2 = conv4_(masked(relu_v(cbn4_(h2, y, training, mask))));
    return add(x1, h2);
  }

 private:
  ConditionalBatchNorm cbn1_, cbn2_, cbn3_, cbn4_;
  Conv1dLayer conv1_, conv2_, conv3_, conv4_;
  Conv1dLayer skip_;
  bool has_skip_ = false;
};

class VcDecoder {
 public:
  explicit VcDecoder(const VcDecoderConfig& cfg, const Rng& rng) : cfg_(cfg) {
    cfg.check();
    table_ = leaf_param(Tensor::randn({cfg.n_speakers, cfg.emb_dim},
                                      rng.stream("table"), 0.1));
    proj_in_ = Conv1dLayer(cfg.input_dim(), cfg.channels[0], 1, rng.stream("in"));
    std::int64_t c = cfg.channels[0];
    for (int i = 0; i < 4; ++i) {
      blocks_.emplace_back(c, cfg.channels[i], cfg.emb_dim,
                           rng.stream("block" + std::to_string(i)));
      c = cfg.channels[i];
    }
    proj_out_ = Conv1dLayer(c, cfg.n_mels, 1, rng.stream("out"));

    reg_.add("speaker_table", table_);
    proj_in_.register_into(reg_, "proj_in");
    for (int i = 0; i < 4; ++i)
      blocks_[i].register_into(reg_, "block" + std::to_string(i));
    proj_out_.register_into(reg_, "proj_out");
  }

  const VcDecoderConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

  // One embedding row per requested speaker: [B, emb_dim].
  Var speaker_rows(const std::vector<std::int64_t>& ids) const {
    for (std::int64_t id : ids)
      COTA_CHECK(id >= 0 && id < cfg_.n_speakers, "unknown speaker id ", id);
    return embedding(table_, ids);
  }

  // features: [B, text_dim+1, T] -> mel [B, n_mels, T]. lengths drive the
  // masked batch statistics; pass the full length when nothing is padded.
  Var decode(const Var& features, const std::vector<std::int64_t>& ids,
             const std::vector<std::int64_t>& lengths, bool training) {
    COTA_CHECK(features->val.rank() == 3 && features->val.dim(1) == cfg_.input_dim(),
               "vc decode: features must be [B, text_dim+1, T]");
    std::int64_t B = features->val.dim(0), T = features->val.dim(2);
    COTA_CHECK(static_cast<std::int64_t>(ids.size()) == B &&
                   static_cast<std::int64_t>(lengths.size()) == B,
               "vc decode: ids/lengths size");
    Var y = speaker_rows(ids);
    Tensor mask = make_time_mask(lengths, T);
    Var x = proj_in_(features);
    for (auto& block : blocks_) x = block(x, y, training, &mask);
    return proj_out_(x);
  }

 private:
  VcDecoderConfig cfg_;
  ParamRegistry reg_;
  Var table_;
  Conv1dLayer proj_in_;
  std::vector<GBlock> blocks_;
  Conv1dLayer proj_out_;
};

// Plain mean squared error over every element.
inline Var reconstruction_loss(const Var& pred, const Tensor& target) {
  COTA_CHECK(pred->val.shape == target.shape, "reconstruction_loss: shape mismatch");
  Var d = sub(pred, constant(target));
  return mul_scalar(sum_all(mul(d, d)), 1.0 / static_cast<double>(target.numel()));
}

// Masked variant: mean over valid frames only, so growing the padding of a
// batch never moves the loss.
inline Var reconstruction_loss(const Var& pred, const Tensor& target,
                               const std::vector<std::int64_t>& lengths) {
  COTA_CHECK(pred->val.shape == target.shape, "reconstruction_loss: shape mismatch");
  COTA_CHECK(pred->val.rank() == 3, "reconstruction_loss: masked form wants [B,C,T]");
  std::int64_t C = pred->val.dim(1), T = pred->val.dim(2);
  Tensor mask3 = expand_mask3(make_time_mask(lengths, T), C);
  double valid = 0.0;
  for (std::int64_t len : lengths) valid += static_cast<double>(len);
  Var d = sub(pred, constant(target));
  return mul_scalar(sum_all(mul_const(mul(d, d), mask3)),
                    1.0 / (valid * static_cast<double>(C)));
}

}  // namespace cota
