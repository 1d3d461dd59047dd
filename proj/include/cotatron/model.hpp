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

// The transcription-guided speech encoder: a multispeaker attention TTS
// network whose teacher-forced alignment is the product we care about.
// Pieces: text encoder (embedding, convs, BiLSTM), mel speaker encoder
// (strided 2D convs, GRU), autoregressive decoder with dynamic convolution
// attention, post-net, and a speaker-classification head on the speaker
// vector.
//
// Batching never changes per-item results: convolutions are masked at every
// level, batch-norm statistics only see valid positions, and all stochastic
// draws (teacher forcing, dropout) are keyed by coordinates instead of
// buffer offsets.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cotatron/audio_frontend.hpp"
#include "cotatron/autograd.hpp"
#include "cotatron/nn.hpp"
#include "cotatron/norm.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/tensor.hpp"

namespace cota {

// ---------------------------------------------------------------------------
// Attention prior
// ---------------------------------------------------------------------------

// Beta-binomial pmf over {0..n}; the attention prior drawn from it strongly
// favours staying put (P(0) ~ 0.74 at the default shape) while allowing
// forward jumps up to n symbols.
inline Tensor beta_binomial_prior(std::int64_t n, double alpha, double beta) {
  COTA_CHECK(n >= 1 && alpha > 0.0 && beta > 0.0, "bad beta-binomial shape");
  auto lbeta = [](double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  };
  Tensor p({n + 1});
  for (std::int64_t k = 0; k <= n; ++k) {
    double lchoose = std::lgamma(static_cast<double>(n + 1)) -
                     std::lgamma(static_cast<double>(k + 1)) -
                     std::lgamma(static_cast<double>(n - k + 1));
    p.data[k] = std::exp(lchoose + lbeta(k + alpha, n - k + beta) - lbeta(alpha, beta));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct CotatronConfig {
  std::int64_t n_symbols = 78;
  std::int64_t n_speakers = 108;
  std::int64_t n_mels = 80;
  std::int64_t max_symbols = 400;

  // text encoder
  std::int64_t embed_dim = 512;
  std::int64_t enc_channels = 512;
  std::int64_t enc_conv_layers = 3;
  std::int64_t enc_kernel = 5;
  std::int64_t text_dim = 512;  // BiLSTM output width (2 * hidden)

  // speaker encoder
  std::vector<std::int64_t> spk_channels = {32, 32, 64, 64, 128, 128};
  std::int64_t z_dim = 256;

  // decoder
  std::int64_t prenet_dim = 256;
  std::int64_t attn_rnn_dim = 1024;
  std::int64_t dec_rnn_dim = 1024;

  // dynamic convolution attention
  std::int64_t dca_static = 8;
  std::int64_t dca_dynamic = 8;
  std::int64_t dca_kernel = 21;
  std::int64_t dca_dyn_hidden = 128;
  std::int64_t attn_dim = 128;
  std::int64_t prior_len = 11;
  double prior_alpha = 0.1;
  double prior_beta = 0.9;

  // post-net and speaker head
  std::int64_t postnet_channels = 512;
  std::int64_t postnet_layers = 5;
  std::int64_t postnet_kernel = 5;
  std::int64_t head_hidden = 256;

  double dropout = 0.5;
  double mel_floor_log = std::log(1e-5);

  void check() const {
    COTA_CHECK(text_dim % 2 == 0, "text_dim must be even");
    COTA_CHECK(spk_channels.size() == 6, "speaker encoder wants 6 conv layers");
    COTA_CHECK(prior_len >= 2 && dca_kernel % 2 == 1, "bad attention filter sizes");
    COTA_CHECK(n_symbols >= 2 && n_speakers >= 1 && n_mels >= 1, "bad sizes");
  }

  static CotatronConfig full(std::int64_t n_symbols, std::int64_t n_speakers) {
    CotatronConfig c;
    c.n_symbols = n_symbols;
    c.n_speakers = n_speakers;
    return c;
  }

  // Desk-scale preset: same topology, narrow enough that CPU training loops
  // finish in seconds rather than hours.
  static CotatronConfig toy(std::int64_t n_symbols, std::int64_t n_speakers) {
    CotatronConfig c;
    c.n_symbols = n_symbols;
    c.n_speakers = n_speakers;
    c.embed_dim = 32;
    c.enc_channels = 32;
    c.text_dim = 32;
    c.spk_channels = {4, 4, 8, 8, 8, 8};
    c.z_dim = 32;
    c.prenet_dim = 32;
    c.attn_rnn_dim = 64;
    c.dec_rnn_dim = 64;
    c.dca_static = 4;
    c.dca_dynamic = 4;
    c.dca_kernel = 11;
    c.dca_dyn_hidden = 32;
    c.attn_dim = 32;
    c.postnet_channels = 32;
    c.head_hidden = 32;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------

struct TextEncoding {
  Var enc;  // [B, N, text_dim], rows past each length are exactly zero
  std::vector<std::int64_t> lengths;
  Tensor mask;  // [B, N]
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const CotatronConfig& cfg, const Rng& rng) : cfg_(cfg) {
    embed_ = EmbeddingTable(cfg.n_symbols, cfg.embed_dim, rng.stream("embed"));
    std::int64_t c_in = cfg.embed_dim;
    for (std::int64_t i = 0; i < cfg.enc_conv_layers; ++i) {
      convs_.emplace_back(c_in, cfg.enc_channels, cfg.enc_kernel,
                          rng.stream("conv" + std::to_string(i)));
      bns_.emplace_back(cfg.enc_channels);
      c_in = cfg.enc_channels;
    }
    lstm_ = BiLstm(c_in, cfg.text_dim / 2, rng.stream("lstm"));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) {
    embed_.register_into(r, prefix + ".embed");
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].register_into(r, prefix + ".conv" + std::to_string(i));
      bns_[i].register_into(r, prefix + ".bn" + std::to_string(i));
    }
    lstm_.register_into(r, prefix + ".lstm");
  }

  TextEncoding operator()(const std::vector<std::vector<std::int64_t>>& seqs,
                          bool training, const Rng* drop_rng) {
    std::int64_t B = static_cast<std::int64_t>(seqs.size());
    COTA_CHECK(B >= 1, "text encoder: empty batch");
    std::int64_t N = 0;
    for (const auto& s : seqs) {
      COTA_CHECK(!s.empty(), "text encoder: empty sequence");
      COTA_CHECK(static_cast<std::int64_t>(s.size()) <= cfg_.max_symbols,
                 "symbol sequence longer than ", cfg_.max_symbols);
      N = std::max(N, static_cast<std::int64_t>(s.size()));
    }
    std::vector<std::int64_t> lengths(B);
    std::vector<std::int64_t> flat(static_cast<std::size_t>(B * N), 0);
    for (std::int64_t b = 0; b < B; ++b) {
      lengths[b] = static_cast<std::int64_t>(seqs[b].size());
      for (std::int64_t n = 0; n < lengths[b]; ++n)
        flat[static_cast<std::size_t>(b * N + n)] = seqs[b][n];
    }
    Tensor mask = make_time_mask(lengths, N);

    Var x = reshape(embed_(flat), {B, N, cfg_.embed_dim});
    x = transpose12(x);  // [B, embed, N]
    // out-of-length positions hold the pad symbol's embedding; blank them so
    // the convolutions see the same zeros an unpadded run would
    x = mul_const(x, expand_mask3(mask, cfg_.embed_dim));
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i](x);
      x = bns_[i](x, training, &mask);
      x = relu_v(x);
      if (training && drop_rng) {
        Rng site = drop_rng->stream("text_conv" + std::to_string(i));
        x = dropout_bct(x, cfg_.dropout, &site);
      }
      x = mul_const(x, expand_mask3(mask, x->val.dim(1)));
    }
    Var enc = lstm_(x, lengths);  // [B, N, text_dim], zero past lengths
    return {enc, lengths, mask};
  }

 private:
  CotatronConfig cfg_;
  EmbeddingTable embed_;
  std::vector<Conv1dLayer> convs_;
  std::vector<BatchNormLayer> bns_;
  BiLstm lstm_;
};

// ---------------------------------------------------------------------------
// Speaker encoder
// ---------------------------------------------------------------------------

// Six stride-2x2 convolutions shrink a mel spectrogram by 64x on both axes;
// whatever survives per coarse step feeds a GRU whose final state is the
// speaker vector. Inputs are canonicalized so the batched and single-item
// paths see identical bytes: each item is floor-padded up to the next
// multiple of 64 frames, zeros beyond that, and every conv level zero-masks
// positions past the item's own (halved) valid length.
class SpeakerEncoder {
 public:
  static constexpr std::int64_t kBlock = 64;  // 2^6

  SpeakerEncoder() = default;
  SpeakerEncoder(const CotatronConfig& cfg, const Rng& rng) : cfg_(cfg) {
    std::int64_t c_in = 1, w = cfg.n_mels;
    for (std::size_t i = 0; i < cfg.spk_channels.size(); ++i) {
      convs_.emplace_back(c_in, cfg.spk_channels[i], 3, 3, 2, 2,
                          rng.stream("conv" + std::to_string(i)));
      bns_.emplace_back(cfg.spk_channels[i]);
      c_in = cfg.spk_channels[i];
      w = (w + 1) / 2;
    }
    flat_dim_ = c_in * w;
    gru_ = GruCell(flat_dim_, cfg.z_dim, rng.stream("gru"));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].register_into(r, prefix + ".conv" + std::to_string(i));
      bns_[i].register_into(r, prefix + ".bn" + std::to_string(i));
    }
    gru_.register_into(r, prefix + ".gru");
  }

  static std::int64_t aligned_length(std::int64_t len) {
    return ((std::max<std::int64_t>(len, 1) + kBlock - 1) / kBlock) * kBlock;
  }

  // mel: [B, T, n_mels] with per-item lengths; returns z [B, z_dim]
  Var operator()(const Tensor& mel, const std::vector<std::int64_t>& lengths,
                 bool training) {
    COTA_CHECK(mel.rank() == 3 && mel.dim(2) == cfg_.n_mels,
               "speaker encoder: want [B, T, n_mels]");
    std::int64_t B = mel.dim(0);
    COTA_CHECK(static_cast<std::int64_t>(lengths.size()) == B,
               "speaker encoder: lengths size");
    std::vector<std::int64_t> aligned(B);
    std::int64_t T_pad = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      COTA_CHECK(lengths[b] >= 1 && lengths[b] <= mel.dim(1),
                 "speaker encoder: bad length");
      aligned[b] = aligned_length(lengths[b]);
      T_pad = std::max(T_pad, aligned[b]);
    }

    Tensor canon({B, 1, T_pad, cfg_.n_mels});
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t t = 0; t < aligned[b]; ++t)
        for (std::int64_t m = 0; m < cfg_.n_mels; ++m)
          canon.at(b, 0, t, m) =
              t < lengths[b] ? mel.at(b, t, m) : cfg_.mel_floor_log;
    }
    Var x = constant(std::move(canon));

    std::vector<std::int64_t> valid = aligned;
    std::int64_t w = cfg_.n_mels;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i](x);
      for (auto& v : valid) v /= 2;
      w = (w + 1) / 2;
      Tensor mask = make_time_mask(valid, x->val.dim(2));
      x = bns_[i](x, training, &mask);
      x = relu_v(x);
      x = mul_const(x, expand_mask4(mask, x->val.dim(1), w));
    }

    Var seq = merge_freq(x);  // [B, flat_dim, T_pad/64]
    std::int64_t steps = seq->val.dim(2);
    Var h = gru_.initial(B);
    std::vector<Var> states;
    states.reserve(steps);
    for (std::int64_t t = 0; t < steps; ++t) {
      h = gru_(gather_time(seq, std::vector<std::int64_t>(B, t)), h);
      states.push_back(h);
    }
    std::vector<std::int64_t> last(B);
    for (std::int64_t b = 0; b < B; ++b) last[b] = valid[b] - 1;
    return gather_time(stack_steps(states), last);
  }

  std::int64_t flat_dim() const { return flat_dim_; }

 private:
  CotatronConfig cfg_;
  std::vector<Conv2dLayer> convs_;
  std::vector<BatchNormLayer> bns_;
  GruCell gru_;
  std::int64_t flat_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Decoder pieces
// ---------------------------------------------------------------------------

class Prenet {
 public:
  Prenet() = default;
  Prenet(std::int64_t in, std::int64_t dim, double dropout_p, const Rng& rng)
      : p_(dropout_p),
        l1_(in, dim, rng.stream("l1")),
        l2_(dim, dim, rng.stream("l2")) {}

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    l1_.register_into(r, prefix + ".l1");
    l2_.register_into(r, prefix + ".l2");
  }

  Var operator()(const Var& x, bool training, const Rng* rng, std::int64_t step) const {
    Var h = relu_v(l1_(x));
    if (training && rng) {
      Rng s = rng->stream("prenet1/" + std::to_string(step));
      h = dropout(h, p_, &s);
    }
    h = relu_v(l2_(h));
    if (training && rng) {
      Rng s = rng->stream("prenet2/" + std::to_string(step));
      h = dropout(h, p_, &s);
    }
    return h;
  }

 private:
  double p_ = 0.5;
  Linear l1_, l2_;
};

// Dynamic convolution attention: energies combine a static filter bank over
// the previous attention row, per-item dynamic filters generated from the
// attention RNN state, and a causal location prior. Padded symbol positions
// get exactly zero weight.
class DcaAttention {
 public:
  DcaAttention() = default;
  DcaAttention(const CotatronConfig& cfg, const Rng& rng) : cfg_(cfg) {
    static_w_ = leaf_param(init::uniform_fan(
        rng.stream("static"), {cfg.dca_static, 1, cfg.dca_kernel}, cfg.dca_kernel));
    dyn_l1_ = Linear(cfg.attn_rnn_dim, cfg.dca_dyn_hidden, rng.stream("dyn1"));
    dyn_l2_ = Linear(cfg.dca_dyn_hidden, cfg.dca_dynamic * cfg.dca_kernel,
                     rng.stream("dyn2"));
    w_static_ = Linear(cfg.dca_static, cfg.attn_dim, rng.stream("w_static"));
    w_dynamic_ = Linear(cfg.dca_dynamic, cfg.attn_dim, rng.stream("w_dynamic"));
    v_ = Linear(cfg.attn_dim, 1, rng.stream("v"));

    // prior filter, reversed for the causal convolution; not learned
    Tensor prior = beta_binomial_prior(cfg.prior_len - 1, cfg.prior_alpha,
                                       cfg.prior_beta);
    Tensor w({1, 1, cfg.prior_len});
    for (std::int64_t k = 0; k < cfg.prior_len; ++k)
      w.data[k] = prior.data[cfg.prior_len - 1 - k];
    prior_w_ = constant(std::move(w));
    zero_bias1_ = constant(Tensor::zeros({1}));
    zero_bias_s_ = constant(Tensor::zeros({cfg.dca_static}));
  }

  void register_into(ParamRegistry& r, const std::string& prefix) const {
    r.add(prefix + ".static_filters", static_w_);
    dyn_l1_.register_into(r, prefix + ".dyn_l1");
    dyn_l2_.register_into(r, prefix + ".dyn_l2");
    w_static_.register_into(r, prefix + ".w_static");
    w_dynamic_.register_into(r, prefix + ".w_dynamic");
    v_.register_into(r, prefix + ".v");
  }

  // Energy contribution of the location prior alone (used by tests to pin
  // the reachable window).
  Var prior_energies(const Var& alpha_prev) const {
    std::int64_t B = alpha_prev->val.dim(0), N = alpha_prev->val.dim(1);
    Var a3 = reshape(alpha_prev, {B, 1, N});
    Var pr = conv1d(a3, prior_w_, zero_bias1_, cfg_.prior_len - 1, 0, 1);
    return log_clamped(reshape(pr, {B, N}), kPriorFloor);
  }

  Var step(const Var& alpha_prev, const Var& attn_h, const Tensor& sym_mask) const {
    std::int64_t B = alpha_prev->val.dim(0), N = alpha_prev->val.dim(1);
    Var a3 = reshape(alpha_prev, {B, 1, N});

    Var f = conv1d_same(a3, static_w_, zero_bias_s_);  // [B, F_s, N]
    Var w_dyn = reshape(dyn_l2_(tanh_v(dyn_l1_(attn_h))),
                        {B, cfg_.dca_dynamic, cfg_.dca_kernel});
    Var g = dyn_conv1d_same(alpha_prev, w_dyn);  // [B, F_d, N]

    Var feat = tanh_v(add(apply_linear3(w_static_, transpose12(f)),
                          apply_linear3(w_dynamic_, transpose12(g))));
    Var e = reshape(apply_linear3(v_, feat), {B, N});
    e = add(e, prior_energies(alpha_prev));
    return masked_softmax(e, sym_mask);
  }

  static constexpr double kPriorFloor = 1e-6;

 private:
  CotatronConfig cfg_;
  Var static_w_;
  Linear dyn_l1_, dyn_l2_, w_static_, w_dynamic_, v_;
  Var prior_w_, zero_bias1_, zero_bias_s_;
};

class Postnet {
 public:
  Postnet() = default;
  Postnet(const CotatronConfig& cfg, const Rng& rng) : cfg_(cfg) {
    std::int64_t c_in = cfg.n_mels;
    for (std::int64_t i = 0; i < cfg.postnet_layers; ++i) {
      bool last = i + 1 == cfg.postnet_layers;
      std::int64_t c_out = last ? cfg.n_mels : cfg.postnet_channels;
      convs_.emplace_back(c_in, c_out, cfg.postnet_kernel,
                          rng.stream("conv" + std::to_string(i)));
      bns_.emplace_back(c_out);
      c_in = c_out;
    }
  }

  void register_into(ParamRegistry& r, const std::string& prefix) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].register_into(r, prefix + ".conv" + std::to_string(i));
      bns_[i].register_into(r, prefix + ".bn" + std::to_string(i));
    }
  }

  // x: [B, n_mels, T]; returns the residual to add to the decoder output
  Var operator()(const Var& x, const Tensor& time_mask, bool training,
                 const Rng* drop_rng) {
    Var h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      bool last = i + 1 == convs_.size();
      h = convs_[i](h);
      h = bns_[i](h, training, &time_mask);
      if (!last) h = tanh_v(h);
      if (training && drop_rng) {
        Rng site = drop_rng->stream("postnet" + std::to_string(i));
        h = dropout_bct(h, cfg_.dropout, &site);
      }
      h = mul_const(h, expand_mask3(time_mask, h->val.dim(1)));
    }
    return h;
  }

 private:
  CotatronConfig cfg_;
  std::vector<Conv1dLayer> convs_;
  std::vector<BatchNormLayer> bns_;
};

// ---------------------------------------------------------------------------
// The full network
// ---------------------------------------------------------------------------

struct CotatronOutput {
  Var mel_pre;    // [B, n_mels, T]
  Var mel_post;   // [B, n_mels, T]
  Var alignment;  // [B, T, N]
  Var contexts;   // [B, T, text_dim + z_dim]
  Var speaker_logits;  // [B, K]
  Var z;               // [B, z_dim]
  std::vector<std::int64_t> mel_lengths;
  std::vector<std::int64_t> sym_lengths;
};

struct CotatronLoss {
  Var total;
  double mel_pre = 0.0, mel_post = 0.0, speaker_ce = 0.0;
  double value() const { return mel_pre + mel_post + speaker_ce; }
};

class Cotatron {
 public:
  explicit Cotatron(const CotatronConfig& cfg, const Rng& rng)
      : cfg_(cfg),
        text_(cfg, rng.stream("text")),
        speaker_(cfg, rng.stream("speaker")),
        prenet_(cfg.n_mels, cfg.prenet_dim, cfg.dropout, rng.stream("prenet")),
        attention_(cfg, rng.stream("attention")),
        postnet_(cfg, rng.stream("postnet")) {
    cfg.check();
    std::int64_t mem = cfg.text_dim + cfg.z_dim;
    attn_rnn_ = LstmCell(cfg.prenet_dim + mem, cfg.attn_rnn_dim, rng.stream("attn_rnn"));
    dec_rnn_ = LstmCell(cfg.attn_rnn_dim + mem, cfg.dec_rnn_dim, rng.stream("dec_rnn"));
    proj_ = Linear(cfg.dec_rnn_dim + mem, cfg.n_mels, rng.stream("proj"));
    head_l1_ = Linear(cfg.z_dim, cfg.head_hidden, rng.stream("head1"));
    head_l2_ = Linear(cfg.head_hidden, cfg.n_speakers, rng.stream("head2"));

    text_.register_into(reg_, "text");
    speaker_.register_into(reg_, "speaker");
    prenet_.register_into(reg_, "prenet");
    attention_.register_into(reg_, "attention");
    attn_rnn_.register_into(reg_, "attn_rnn");
    dec_rnn_.register_into(reg_, "dec_rnn");
    proj_.register_into(reg_, "proj");
    head_l1_.register_into(reg_, "head.l1");
    head_l2_.register_into(reg_, "head.l2");
  }

  const CotatronConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

  TextEncoding encode_text(const std::vector<std::vector<std::int64_t>>& seqs,
                           bool training, const Rng* drop_rng) {
    return text_(seqs, training, drop_rng);
  }

  Var speaker_vector(const Tensor& mel, const std::vector<std::int64_t>& lengths,
                     bool training) {
    return speaker_(mel, lengths, training);
  }

  Var speaker_logits(const Var& z, bool training, const Rng* drop_rng) const {
    Var h = relu_v(head_l1_(z));
    if (training && drop_rng) {
      Rng site = drop_rng->stream("head");
      h = dropout(h, cfg_.dropout, &site);
    }
    return head_l2_(h);
  }

  struct DecoderState {
    LstmCell::State attn, dec;
    Var alpha;  // [B, N]
    Var ctx;    // [B, text_dim + z_dim]
  };

  DecoderState initial_state(std::int64_t B, std::int64_t N) const {
    DecoderState s;
    s.attn = attn_rnn_.initial(B);
    s.dec = dec_rnn_.initial(B);
    Tensor a = Tensor::zeros({B, N});
    for (std::int64_t b = 0; b < B; ++b) a.at(b, 0) = 1.0;
    s.alpha = constant(std::move(a));
    s.ctx = constant(Tensor::zeros({B, cfg_.text_dim + cfg_.z_dim}));
    return s;
  }

  // One autoregressive step. memory = concat(enc, z broadcast); prev_frame
  // feeds the prenet; returns the pre-postnet frame and updates the state in
  // place (attention row, context, both LSTM states).
  Var decode_step(const Var& prev_frame, DecoderState& st, const Var& memory,
                  const Tensor& sym_mask, bool training, const Rng* drop_rng,
                  std::int64_t step) const {
    Var pre = prenet_(prev_frame, training, drop_rng, step);
    st.attn = attn_rnn_(concat_cols({pre, st.ctx}), st.attn);
    st.alpha = attention_.step(st.alpha, st.attn.h, sym_mask);
    st.ctx = bmm_attn(st.alpha, memory);
    st.dec = dec_rnn_(concat_cols({st.attn.h, st.ctx}), st.dec);
    return proj_(concat_cols({st.dec.h, st.ctx}));
  }

  const DcaAttention& attention() const { return attention_; }

  // Teacher-forced pass over a whole padded batch. tf_rate is the chance a
  // step consumes the ground-truth previous frame instead of the model's own
  // previous output; the coin is flipped per (step, item).
  CotatronOutput forward(const Tensor& mel, const std::vector<std::int64_t>& mel_lengths,
                         const std::vector<std::vector<std::int64_t>>& seqs,
                         double tf_rate, bool training, const Rng& rng) {
    COTA_CHECK(mel.rank() == 3 && mel.dim(2) == cfg_.n_mels,
               "forward: mel must be [B, T, n_mels]");
    COTA_CHECK(tf_rate >= 0.0 && tf_rate <= 1.0, "forward: tf_rate in [0,1]");
    std::int64_t B = mel.dim(0), T = mel.dim(1);
    COTA_CHECK(static_cast<std::int64_t>(seqs.size()) == B, "forward: batch mismatch");

    const Rng drop = rng.stream("dropout");
    const Rng* drop_rng = training ? &drop : nullptr;
    Rng tf = rng.stream("tf");

    TextEncoding enc = encode_text(seqs, training, drop_rng);
    Var z = speaker_vector(mel, mel_lengths, training);
    Var memory = concat_mem(enc.enc, z);

    DecoderState st = initial_state(B, enc.mask.dim(1));
    std::vector<Var> frames, alphas, ctxs;
    frames.reserve(T);
    Var prev_pred;
    for (std::int64_t t = 0; t < T; ++t) {
      Var input;
      if (t == 0) {
        input = constant(Tensor::zeros({B, cfg_.n_mels}));  // go frame
      } else {
        Tensor use_pred({B});
        Tensor gt_rows({B, cfg_.n_mels});
        bool any_pred = false;
        for (std::int64_t b = 0; b < B; ++b) {
          bool teacher = tf_rate >= 1.0 ||
                         (tf_rate > 0.0 &&
                          tf.uniform(static_cast<std::uint64_t>((t - 1) * B + b)) < tf_rate);
          use_pred.data[b] = teacher ? 0.0 : 1.0;
          any_pred = any_pred || !teacher;
          if (teacher)
            for (std::int64_t m = 0; m < cfg_.n_mels; ++m)
              gt_rows.at(b, m) = mel.at(b, t - 1, m);
        }
        input = constant(std::move(gt_rows));
        if (any_pred) input = add(input, mul_rows_const(prev_pred, use_pred));
      }
      Var frame = decode_step(input, st, memory, enc.mask, training, drop_rng, t);
      prev_pred = frame;
      frames.push_back(frame);
      alphas.push_back(st.alpha);
      ctxs.push_back(st.ctx);
    }

    CotatronOutput out;
    out.mel_pre = stack_steps(frames);  // [B, n_mels, T]
    Tensor tmask = make_time_mask(mel_lengths, T);
    Var masked_pre = mul_const(out.mel_pre, expand_mask3(tmask, cfg_.n_mels));
    out.mel_post = add(out.mel_pre, postnet_(masked_pre, tmask, training, drop_rng));
    out.alignment = transpose12(stack_steps(alphas));  // [B, T, N]
    out.contexts = transpose12(stack_steps(ctxs));     // [B, T, text+z]
    out.z = z;
    out.speaker_logits = speaker_logits(z, training, drop_rng);
    out.mel_lengths = mel_lengths;
    out.sym_lengths = enc.lengths;
    return out;
  }

  // Mean squared error over valid frames only, both before and after the
  // post-net, plus speaker cross-entropy on z.
  CotatronLoss loss(const CotatronOutput& out, const Tensor& mel,
                    const std::vector<std::int64_t>& labels) const {
    std::int64_t B = mel.dim(0), T = mel.dim(1);
    Tensor target({B, cfg_.n_mels, T});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t m = 0; m < cfg_.n_mels; ++m)
          target.at(b, m, t) = mel.at(b, t, m);
    Tensor mask3 = expand_mask3(make_time_mask(out.mel_lengths, T), cfg_.n_mels);
    double valid = 0.0;
    for (std::int64_t i = 0; i < mask3.numel(); ++i) valid += mask3.data[i];

    auto masked_mse = [&](const Var& pred) {
      Var d = sub(pred, constant(target));
      return mul_scalar(sum_all(mul_const(mul(d, d), mask3)), 1.0 / valid);
    };
    Var pre = masked_mse(out.mel_pre);
    Var post = masked_mse(out.mel_post);
    Var ce = cross_entropy_logits(out.speaker_logits, labels);

    CotatronLoss l;
    l.mel_pre = pre->val.data[0];
    l.mel_post = post->val.data[0];
    l.speaker_ce = ce->val.data[0];
    l.total = add(add(pre, post), ce);
    return l;
  }

 private:
  CotatronConfig cfg_;
  ParamRegistry reg_;
  TextEncoder text_;
  SpeakerEncoder speaker_;
  Prenet prenet_;
  DcaAttention attention_;
  Postnet postnet_;
  LstmCell attn_rnn_, dec_rnn_;
  Linear proj_, head_l1_, head_l2_;
};

}  // namespace cota
