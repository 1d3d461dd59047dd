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

// The two training phases. Phase one fits the attention TTS on transcribed
// speech; phase two freezes it and fits the residual encoder, conversion
// decoder, and speaker table on reconstruction alone. Every stochastic
// choice (batch order, teacher forcing, dropout) is a pure function of the
// seed and the step number, so a run resumed from a checkpoint retraces the
// uninterrupted run bit for bit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cotatron/features.hpp"
#include "cotatron/io.hpp"
#include "cotatron/model.hpp"
#include "cotatron/nn.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/tensor.hpp"
#include "cotatron/vc_decoder.hpp"

namespace cota {

// Training aborted because of bad data or a diverged model; the message
// carries the offending batch so the run can be diagnosed.
struct TrainAbort : public std::runtime_error {
  explicit TrainAbort(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Configuration and schedule
// ---------------------------------------------------------------------------

enum class TrainPhase { cotatron, vc };

struct TrainConfig {
  TrainPhase phase = TrainPhase::cotatron;
  std::int64_t batch_size = 64;
  double lr_initial = 3e-4;
  double lr_final = 1.5e-5;
  std::int64_t decay_start_step = 25000;
  std::int64_t decay_end_step = 50000;
  double weight_decay = 1e-6;
  std::optional<double> grad_clip = 1.0;
  double tf_rate = 0.5;
  std::uint64_t seed = 0;

  void check() const {
    COTA_CHECK(batch_size >= 1, "train config: batch_size >= 1");
    COTA_CHECK(lr_initial > 0.0 && lr_final > 0.0, "train config: lr > 0");
    COTA_CHECK(decay_start_step <= decay_end_step,
               "train config: decay_start <= decay_end");
    COTA_CHECK(tf_rate >= 0.0 && tf_rate <= 1.0, "train config: tf_rate in [0,1]");
  }

  static TrainConfig cotatron_defaults() { return TrainConfig{}; }

  static TrainConfig vc_defaults() {
    TrainConfig c;
    c.phase = TrainPhase::vc;
    c.batch_size = 128;
    c.lr_initial = 3e-4;
    c.lr_final = 3e-4;  // constant
    c.decay_start_step = 0;
    c.decay_end_step = 0;
    c.grad_clip.reset();
    c.tf_rate = 1.0;
    return c;
  }
};

// Flat learning rate, then geometric interpolation down to the final value,
// then flat again.
inline double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  COTA_CHECK(step >= 0, "lr_schedule: step >= 0");
  if (step < cfg.decay_start_step) return cfg.lr_initial;
  if (step >= cfg.decay_end_step) return cfg.lr_final;
  double frac = static_cast<double>(step - cfg.decay_start_step) /
                static_cast<double>(cfg.decay_end_step - cfg.decay_start_step);
  return cfg.lr_initial * std::pow(cfg.lr_final / cfg.lr_initial, frac);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Var>& params, double lr, double weight_decay) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Tensor::zeros(p->val.shape));
        v_.push_back(Tensor::zeros(p->val.shape));
      }
    }
    COTA_CHECK(m_.size() == params.size(), "adam: parameter set changed");
    ++t_;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i]->val;
      const Tensor& g0 = params[i]->grad;
      bool has = params[i]->has_grad;
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        double g = (has ? g0.data[j] : 0.0) + weight_decay * p.data[j];
        m_[i].data[j] = b1_ * m_[i].data[j] + (1.0 - b1_) * g;
        v_[i].data[j] = b2_ * v_[i].data[j] + (1.0 - b2_) * g * g;
        p.data[j] -= lr * (m_[i].data[j] / c1) / (std::sqrt(v_[i].data[j] / c2) + eps_);
      }
    }
  }

  std::int64_t t() const { return t_; }

  // State export/import for checkpointing; tensors are keyed by parameter
  // index, which is stable because registration order is part of the format.
  void export_state(std::vector<std::pair<std::string, Tensor>>& out) const {
    Tensor tt({1});
    tt.data[0] = static_cast<double>(t_);
    out.emplace_back("adam.t", tt);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      out.emplace_back("adam.m." + std::to_string(i), m_[i]);
      out.emplace_back("adam.v." + std::to_string(i), v_[i]);
    }
  }

  void import_state(const Checkpoint& ck, std::size_t n_params) {
    const Tensor* tt = ck.find("adam.t");
    COTA_CHECK_IO(tt != nullptr, "checkpoint lacks optimizer state");
    t_ = static_cast<std::int64_t>(tt->data[0]);
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < n_params; ++i) {
      const Tensor* m = ck.find("adam.m." + std::to_string(i));
      const Tensor* v = ck.find("adam.v." + std::to_string(i));
      COTA_CHECK_IO(m && v, "checkpoint optimizer state incomplete");
      m_.push_back(*m);
      v_.push_back(*v);
    }
  }

 private:
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

struct TrainItem {
  Tensor mel;                     // [T, n_mels]
  std::vector<std::int64_t> ids;  // symbol sequence
  std::int64_t speaker_label = 0;
  std::string source_id;  // shows up in abort diagnostics
};

using Dataset = std::vector<TrainItem>;

namespace detail {

// Length-bucketed batching: items sorted by frame count so a batch pads
// little, batch order reshuffled every epoch from the seed alone.
inline std::vector<std::vector<std::size_t>> make_batches(const Dataset& data,
                                                          std::int64_t batch_size) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data[a].mel.dim(0) > data[b].mel.dim(0);
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

inline std::vector<std::size_t> epoch_batch_order(std::size_t n_batches,
                                                  std::uint64_t seed,
                                                  std::int64_t epoch) {
  std::vector<std::size_t> order(n_batches);
  for (std::size_t i = 0; i < n_batches; ++i) order[i] = i;
  Rng(seed).stream("order").stream(std::to_string(epoch)).shuffle(order);
  return order;
}

struct Batch {
  Tensor mel;  // [B, T_max, n_mels]
  std::vector<std::int64_t> lengths;
  std::vector<std::vector<std::int64_t>> seqs;
  std::vector<std::int64_t> labels;
  std::vector<std::string> sources;
};

inline Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& idx) {
  Batch b;
  std::int64_t B = static_cast<std::int64_t>(idx.size());
  std::int64_t T = 0, M = data[idx[0]].mel.dim(1);
  for (std::size_t i : idx) T = std::max(T, data[i].mel.dim(0));
  b.mel = Tensor::zeros({B, T, M});
  for (std::int64_t k = 0; k < B; ++k) {
    const TrainItem& item = data[idx[static_cast<std::size_t>(k)]];
    COTA_CHECK(item.mel.dim(1) == M, "batch: mixed mel widths");
    for (std::int64_t t = 0; t < item.mel.dim(0); ++t)
      for (std::int64_t m = 0; m < M; ++m) b.mel.at(k, t, m) = item.mel.at(t, m);
    b.lengths.push_back(item.mel.dim(0));
    b.seqs.push_back(item.ids);
    b.labels.push_back(item.speaker_label);
    b.sources.push_back(item.source_id);
  }
  return b;
}

// Linguistic features from the frozen stack, teacher-forced and gradient
// free; padded steps stay zero so nothing leaks into the decoder taps.
inline Tensor vc_linguistic_block(Cotatron& cot, const Batch& b, std::int64_t E) {
  NoGrad ng;
  std::int64_t B = b.mel.dim(0), T = b.mel.dim(1);
  CotatronOutput out = cot.forward(b.mel, b.lengths, b.seqs, 1.0, false, Rng(0));
  Tensor L = Tensor::zeros({B, E, T});
  for (std::int64_t k = 0; k < B; ++k)
    for (std::int64_t t = 0; t < b.lengths[static_cast<std::size_t>(k)]; ++t)
      for (std::int64_t e = 0; e < E; ++e) L.at(k, e, t) = out.contexts->val.at(k, t, e);
  return L;
}

inline Tensor vc_target(const Batch& b) {
  std::int64_t B = b.mel.dim(0), T = b.mel.dim(1), M = b.mel.dim(2);
  Tensor target = Tensor::zeros({B, M, T});
  for (std::int64_t k = 0; k < B; ++k)
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t m = 0; m < M; ++m) target.at(k, m, t) = b.mel.at(k, t, m);
  return target;
}

inline double validate_vc(Cotatron& cot, ResidualEncoder& res, VcDecoder& vc,
                          const Dataset& val, std::int64_t batch_size, std::int64_t E) {
  NoGrad ng;
  auto batches = make_batches(val, batch_size);
  double total = 0.0;
  std::int64_t n = 0;
  for (const auto& idx : batches) {
    Batch b = assemble_batch(val, idx);
    Var R = transpose12(res(b.mel, b.lengths));
    Var features = concat_ch({constant(vc_linguistic_block(cot, b, E)), R});
    Var pred = vc.decode(features, b.labels, b.lengths, false);
    Var loss = reconstruction_loss(pred, vc_target(b), b.lengths);
    total += loss->val.data[0] * static_cast<double>(idx.size());
    n += static_cast<std::int64_t>(idx.size());
  }
  return total / static_cast<double>(n);
}

inline std::string join_sources(const std::vector<std::string>& ss) {
  std::string out;
  for (const auto& s : ss) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

inline double wallclock_ms() {
  auto now = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double, std::milli>(now).count();
}

}  // namespace detail

// FNV-1a over the exact parameter bytes, in registration order; the freeze
// contract compares these across steps.
inline std::uint64_t param_hash(const ParamRegistry& reg) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(double));
      std::memcpy(&bits, &t.data[i], sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& [n, v] : reg.params) mix(v->val);
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline Checkpoint pack_checkpoint(const std::vector<ParamRegistry*>& regs,
                                  const Adam* adam, std::uint64_t step,
                                  std::uint64_t symbol_hash,
                                  const std::string& config_json) {
  Checkpoint ck;
  ck.step = step;
  ck.symbol_table_hash = symbol_hash;
  ck.config_json = config_json;
  for (const ParamRegistry* reg : regs) {
    for (const auto& [n, v] : reg->params) ck.tensors.emplace_back(n, v->val);
    for (const auto& [n, t] : reg->buffers) ck.tensors.emplace_back(n, *t);
  }
  if (adam) adam->export_state(ck.tensors);
  return ck;
}

inline void unpack_checkpoint(const Checkpoint& ck,
                              const std::vector<ParamRegistry*>& regs) {
  for (ParamRegistry* reg : regs) {
    for (auto& [n, v] : reg->params) {
      const Tensor* t = ck.find(n);
      COTA_CHECK_IO(t != nullptr, "checkpoint missing tensor ", n);
      COTA_CHECK_IO(t->shape == v->val.shape, "checkpoint shape mismatch for ", n);
      v->val = *t;
    }
    for (auto& [n, dst] : reg->buffers) {
      const Tensor* t = ck.find(n);
      COTA_CHECK_IO(t != nullptr, "checkpoint missing buffer ", n);
      COTA_CHECK_IO(t->shape == dst->shape, "checkpoint shape mismatch for ", n);
      *dst = *t;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run options and logging
// ---------------------------------------------------------------------------

struct TrainRunOptions {
  std::int64_t phase1_steps = 0;  // cotatron stage one
  std::int64_t phase2_steps = 0;  // cotatron stage two (union corpus)
  std::int64_t total_steps = 0;   // vc
  std::int64_t log_every = 10;
  std::int64_t ckpt_every = 1000;
  std::int64_t val_every = 1000;
  std::int64_t plateau_evals = 5;  // stop phase 2 after this many flat vals
  std::string out_dir;             // empty: keep everything in memory
  std::string resume_from;         // checkpoint path
  const Dataset* val = nullptr;
  bool verify_freeze = true;  // vc: hash the frozen stack every step
};

struct TrainLogEntry {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mel_pre = 0.0, mel_post = 0.0, speaker_ce = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<TrainLogEntry> log;
  std::vector<std::pair<std::int64_t, double>> val_log;  // (step, val loss)
  std::int64_t steps_run = 0;
  bool stopped_early = false;
  std::string final_checkpoint;  // path, when out_dir was given
};

namespace detail {

// Held-out loss, fully teacher-forced, eval mode, fixed batch order.
inline double validate_cotatron(Cotatron& model, const Dataset& val,
                                std::int64_t batch_size) {
  NoGrad ng;
  auto batches = make_batches(val, batch_size);
  double total = 0.0;
  std::int64_t n = 0;
  for (const auto& idx : batches) {
    Batch b = assemble_batch(val, idx);
    CotatronOutput out = model.forward(b.mel, b.lengths, b.seqs, 1.0, false, Rng(0));
    total += model.loss(out, b.mel, b.labels).value() * static_cast<double>(idx.size());
    n += static_cast<std::int64_t>(idx.size());
  }
  return total / static_cast<double>(n);
}

inline void write_log_line(JsonlWriter* w, const TrainLogEntry& e, TrainPhase phase) {
  if (!w) return;
  nlohmann::json j{{"step", e.step}, {"lr", e.lr}, {"loss", e.loss}};
  if (phase == TrainPhase::cotatron) {
    j["mel_pre"] = e.mel_pre;
    j["mel_post"] = e.mel_post;
    j["speaker_ce"] = e.speaker_ce;
  }
  j["grad_norm"] = e.grad_norm;
  j["wall_ms"] = e.wall_ms;
  w->write(j);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase one: the attention TTS
// ---------------------------------------------------------------------------

// Stage one runs on the first corpus alone, stage two on the union with the
// second, with the decay schedule restarted from zero. Aborts on a
// non-finite loss, naming the batch.
inline TrainReport train_cotatron(Cotatron& model, const Dataset& stage1,
                                  const Dataset& stage2_extra, const TrainConfig& cfg,
                                  const TrainRunOptions& opts) {
  cfg.check();
  COTA_CHECK(cfg.phase == TrainPhase::cotatron, "train_cotatron: wrong phase");
  COTA_CHECK(!stage1.empty(), "train_cotatron: empty stage-1 corpus");

  Dataset union_set = stage1;
  union_set.insert(union_set.end(), stage2_extra.begin(), stage2_extra.end());

  std::vector<Var> params = model.params().param_vars();
  Adam adam;
  std::int64_t start_step = 0;

  if (!opts.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(opts.resume_from);
    std::vector<ParamRegistry*> regs = {&model.params()};
    detail::unpack_checkpoint(ck, regs);
    adam.import_state(ck, params.size());
    start_step = static_cast<std::int64_t>(ck.step);
  }

  std::unique_ptr<JsonlWriter> logw;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    logw = std::make_unique<JsonlWriter>(opts.out_dir + "/train_cotatron.jsonl");
  }

  TrainReport report;
  auto save = [&](std::int64_t step, const std::string& name) {
    if (opts.out_dir.empty()) return std::string();
    std::string path = opts.out_dir + "/" + name;
    std::vector<ParamRegistry*> regs = {&model.params()};
    Checkpoint ck = detail::pack_checkpoint(regs, &adam, static_cast<std::uint64_t>(step),
                                            0, "{\"phase\":\"cotatron\"}");
    save_checkpoint(ck, path);
    return path;
  };

  std::int64_t total = opts.phase1_steps + opts.phase2_steps;
  for (std::int64_t step = start_step; step < total; ++step) {
    bool phase2 = step >= opts.phase1_steps;
    const Dataset& data = phase2 ? union_set : stage1;
    std::int64_t phase_step = phase2 ? step - opts.phase1_steps : step;

    auto batches = detail::make_batches(data, cfg.batch_size);
    std::int64_t per_epoch = static_cast<std::int64_t>(batches.size());
    std::int64_t epoch = phase_step / per_epoch;
    auto order = detail::epoch_batch_order(batches.size(),
                                           cfg.seed + (phase2 ? 1 : 0), epoch);
    const auto& idx = batches[order[static_cast<std::size_t>(phase_step % per_epoch)]];
    detail::Batch b = detail::assemble_batch(data, idx);

    Rng step_rng = Rng(cfg.seed).stream("step").stream(std::to_string(step));
    zero_grad(params);
    CotatronLoss loss;
    try {
      CotatronOutput out = model.forward(b.mel, b.lengths, b.seqs, cfg.tf_rate,
                                         true, step_rng);
      loss = model.loss(out, b.mel, b.labels);
    } catch (const std::exception& ex) {
      throw TrainAbort("step " + std::to_string(step) + " failed: " + ex.what() +
                       "; batch: " + detail::join_sources(b.sources));
    }
    if (!std::isfinite(loss.value()))
      throw TrainAbort("non-finite loss at step " + std::to_string(step) +
                       "; batch: " + detail::join_sources(b.sources));
    backward(loss.total);
    if (cfg.grad_clip) clip_grad_global_norm(params, *cfg.grad_clip);
    double gnorm = grad_global_norm(params);
    double lr = lr_schedule(phase_step, cfg);
    adam.step(params, lr, cfg.weight_decay);

    TrainLogEntry e;
    e.step = step;
    e.lr = lr;
    e.loss = loss.value();
    e.mel_pre = loss.mel_pre;
    e.mel_post = loss.mel_post;
    e.speaker_ce = loss.speaker_ce;
    e.grad_norm = gnorm;
    e.wall_ms = detail::wallclock_ms();
    if (opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == total)) {
      report.log.push_back(e);
      detail::write_log_line(logw.get(), e, TrainPhase::cotatron);
    }
    if (opts.val && opts.val_every > 0 && (step + 1) % opts.val_every == 0) {
      double v = detail::validate_cotatron(model, *opts.val, cfg.batch_size);
      report.val_log.emplace_back(step + 1, v);
      if (logw) logw->write({{"step", step + 1}, {"val_loss", v}});
    }
    if (opts.ckpt_every > 0 && (step + 1) % opts.ckpt_every == 0)
      save(step + 1, "cotatron_step" + std::to_string(step + 1) + ".ckpt");
    ++report.steps_run;
  }
  report.final_checkpoint = save(total, "cotatron.ckpt");
  return report;
}

// ---------------------------------------------------------------------------
// Phase two: residual encoder + conversion decoder
// ---------------------------------------------------------------------------

// The frozen speech encoder only supplies features: its forward runs without
// gradients, in eval mode, fully teacher-forced. Trains the residual
// encoder, the conversion decoder, and the speaker table jointly on the
// masked reconstruction loss.
inline TrainReport train_vc(Cotatron& cotatron, ResidualEncoder& res, VcDecoder& vc,
                            const Dataset& data, const TrainConfig& cfg,
                            const TrainRunOptions& opts) {
  cfg.check();
  COTA_CHECK(cfg.phase == TrainPhase::vc, "train_vc: wrong phase");
  COTA_CHECK(!data.empty(), "train_vc: empty corpus");
  COTA_CHECK(cfg.tf_rate == 1.0, "train_vc: feature extraction is teacher-forced");

  ParamRegistry res_reg;
  res.register_into(res_reg, "residual");
  std::vector<Var> params = res_reg.param_vars();
  for (const Var& v : vc.params().param_vars()) params.push_back(v);

  Adam adam;
  std::int64_t start_step = 0;
  if (!opts.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(opts.resume_from);
    std::vector<ParamRegistry*> regs = {&res_reg, &vc.params()};
    detail::unpack_checkpoint(ck, regs);
    adam.import_state(ck, params.size());
    start_step = static_cast<std::int64_t>(ck.step);
  }

  std::unique_ptr<JsonlWriter> logw;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    logw = std::make_unique<JsonlWriter>(opts.out_dir + "/train_vc.jsonl");
  }

  const std::uint64_t frozen_hash = param_hash(cotatron.params());
  std::int64_t E = cotatron.config().text_dim;

  TrainReport report;
  auto save = [&](std::int64_t step, const std::string& name) {
    if (opts.out_dir.empty()) return std::string();
    std::string path = opts.out_dir + "/" + name;
    std::vector<ParamRegistry*> regs = {&res_reg, &vc.params()};
    Checkpoint ck = detail::pack_checkpoint(regs, &adam, static_cast<std::uint64_t>(step),
                                            0, "{\"phase\":\"vc\"}");
    save_checkpoint(ck, path);
    return path;
  };

  auto batches = detail::make_batches(data, cfg.batch_size);
  std::int64_t per_epoch = static_cast<std::int64_t>(batches.size());

  // step count is a config knob; by default the run also stops once the
  // held-out loss stops improving across this many evaluations
  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t stale_evals = 0;

  for (std::int64_t step = start_step; step < opts.total_steps; ++step) {
    std::int64_t epoch = step / per_epoch;
    auto order = detail::epoch_batch_order(batches.size(), cfg.seed, epoch);
    const auto& idx = batches[order[static_cast<std::size_t>(step % per_epoch)]];
    detail::Batch b = detail::assemble_batch(data, idx);

    zero_grad(params);
    Var loss;
    try {
      Tensor L_block = detail::vc_linguistic_block(cotatron, b, E);
      Var R = transpose12(res(b.mel, b.lengths));  // [B,1,T], carries gradient
      Var features = concat_ch({constant(L_block), R});
      Var pred = vc.decode(features, b.labels, b.lengths, true);
      loss = reconstruction_loss(pred, detail::vc_target(b), b.lengths);
    } catch (const std::exception& ex) {
      throw TrainAbort("step " + std::to_string(step) + " failed: " + ex.what() +
                       "; batch: " + detail::join_sources(b.sources));
    }
    double loss_v = loss->val.data[0];
    if (!std::isfinite(loss_v))
      throw TrainAbort("non-finite loss at step " + std::to_string(step) +
                       "; batch: " + detail::join_sources(b.sources));
    backward(loss);
    if (cfg.grad_clip) clip_grad_global_norm(params, *cfg.grad_clip);
    double gnorm = grad_global_norm(params);
    double lr = lr_schedule(step, cfg);
    adam.step(params, lr, cfg.weight_decay);

    if (opts.verify_freeze)
      COTA_CHECK(param_hash(cotatron.params()) == frozen_hash,
                 "frozen model drifted at step ", step);

    TrainLogEntry e;
    e.step = step;
    e.lr = lr;
    e.loss = loss_v;
    e.grad_norm = gnorm;
    e.wall_ms = detail::wallclock_ms();
    if (opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == opts.total_steps)) {
      report.log.push_back(e);
      detail::write_log_line(logw.get(), e, TrainPhase::vc);
    }
    if (opts.ckpt_every > 0 && (step + 1) % opts.ckpt_every == 0)
      save(step + 1, "vc_step" + std::to_string(step + 1) + ".ckpt");
    ++report.steps_run;

    if (opts.val && opts.val_every > 0 && (step + 1) % opts.val_every == 0) {
      double v = detail::validate_vc(cotatron, res, vc, *opts.val, cfg.batch_size, E);
      report.val_log.emplace_back(step + 1, v);
      if (logw) logw->write({{"step", step + 1}, {"val_loss", v}});
      if (v < best_val) {
        best_val = v;
        stale_evals = 0;
      } else if (++stale_evals >= opts.plateau_evals && opts.plateau_evals > 0) {
        report.stopped_early = true;
        break;
      }
    }
  }
  report.final_checkpoint = save(report.steps_run + start_step, "vc.ckpt");
  return report;
}

}  // namespace cota
