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

// Objective quality metrics. Speaker classification accuracy asks whether a
// small classifier takes converted speech for the target voice; the voicing
// decision error compares voiced/unvoiced contours; the probe measures how
// much speaker identity each feature stream still carries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotatron/audio_frontend.hpp"
#include "cotatron/audio_io.hpp"
#include "cotatron/io.hpp"
#include "cotatron/nn.hpp"
#include "cotatron/norm.hpp"
#include "cotatron/rng.hpp"
#include "cotatron/tensor.hpp"
#include "cotatron/training.hpp"

namespace cota {

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::int64_t n_samples = 0;
  std::string config_digest;
};

namespace detail {

inline std::string digest_of(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

inline void check_unit_range(double v, const char* what) {
  COTA_CHECK(v >= 0.0 && v <= 1.0, what, " out of range: ", v);
}

}  // namespace detail

inline void write_metric_jsonl(const std::vector<MetricReport>& reports,
                               const std::string& path) {
  JsonlWriter w(path);
  for (const auto& r : reports)
    w.write({{"metric", r.metric},
             {"value", r.value},
             {"n_samples", r.n_samples},
             {"config_digest", r.config_digest}});
}

inline std::string render_metrics_markdown(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "| metric | value | samples | config |\n";
  os << "|---|---|---|---|\n";
  os.precision(4);
  for (const auto& r : reports)
    os << "| " << r.metric << " | " << r.value << " | " << r.n_samples << " | "
       << r.config_digest << " |\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Speaker classification accuracy
// ---------------------------------------------------------------------------

// One linear layer over mean-pooled cepstra. Deliberately small: the point
// is a fixed, reproducible yardstick, not a strong speaker model.
class ScaClassifier {
 public:
  ScaClassifier(std::int64_t n_classes, int n_coeffs, const Rng& rng)
      : n_classes_(n_classes), n_coeffs_(n_coeffs), lin_(n_coeffs, n_classes, rng) {}

  std::int64_t n_classes() const { return n_classes_; }
  int n_coeffs() const { return n_coeffs_; }

  Tensor pooled(const Tensor& mel) const {
    Tensor mfcc = mfcc_from_mel(mel, n_coeffs_);
    Tensor out = Tensor::zeros({1, n_coeffs_});
    for (std::int64_t t = 0; t < mfcc.dim(0); ++t)
      for (int c = 0; c < n_coeffs_; ++c) out.at(0, c) += mfcc.at(t, c);
    for (int c = 0; c < n_coeffs_; ++c)
      out.at(0, c) /= static_cast<double>(mfcc.dim(0));
    return out;
  }

  std::int64_t predict(const Tensor& mel) {
    NoGrad ng;
    Var logits = lin_(constant(pooled(mel)));
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < n_classes_; ++k)
      if (logits->val.at(0, k) > logits->val.at(0, best)) best = k;
    return best;
  }

  Linear& layer() { return lin_; }

 private:
  std::int64_t n_classes_;
  int n_coeffs_;
  Linear lin_;
};

struct ScaTrainResult {
  ScaClassifier classifier;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

namespace detail {

inline double sca_accuracy(ScaClassifier& clf, const std::vector<Tensor>& mels,
                           const std::vector<std::int64_t>& labels) {
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < mels.size(); ++i)
    if (clf.predict(mels[i]) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(mels.size());
}

}  // namespace detail

inline ScaTrainResult train_sca_classifier(const std::vector<Tensor>& train_mels,
                                           const std::vector<std::int64_t>& train_labels,
                                           const std::vector<Tensor>& test_mels,
                                           const std::vector<std::int64_t>& test_labels,
                                           std::int64_t n_classes, int n_coeffs = 13,
                                           std::uint64_t seed = 0) {
  COTA_CHECK(!train_mels.empty() && train_mels.size() == train_labels.size(),
             "sca: train set shape");
  COTA_CHECK(test_mels.size() == test_labels.size(), "sca: test set shape");
  std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
  std::int64_t distinct = 0;
  for (std::int64_t l : train_labels) {
    COTA_CHECK(l >= 0 && l < n_classes, "sca: label ", l, " outside inventory");
    if (!seen[static_cast<std::size_t>(l)]) {
      seen[static_cast<std::size_t>(l)] = true;
      ++distinct;
    }
  }
  COTA_CHECK(distinct >= 2, "sca: need at least two speakers, got ", distinct);
  for (std::int64_t l : test_labels)
    COTA_CHECK(l >= 0 && l < n_classes, "sca: label ", l, " outside inventory");

  ScaTrainResult res{ScaClassifier(n_classes, n_coeffs, Rng(seed).stream("init"))};

  std::int64_t B = static_cast<std::int64_t>(train_mels.size());
  Tensor X({B, n_coeffs});
  for (std::int64_t i = 0; i < B; ++i) {
    Tensor p = res.classifier.pooled(train_mels[static_cast<std::size_t>(i)]);
    for (int c = 0; c < n_coeffs; ++c) X.at(i, c) = p.at(0, c);
  }

  std::vector<Var> params = {res.classifier.layer().W, res.classifier.layer().b};
  Adam adam;
  double prev = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < 2000; ++epoch) {
    zero_grad(params);
    Var loss = cross_entropy_logits(res.classifier.layer()(constant(X)), train_labels);
    backward(loss);
    adam.step(params, 1e-2, 0.0);
    double v = loss->val.data[0];
    if (epoch > 50 && std::abs(prev - v) < 1e-10) break;
    prev = v;
  }

  res.train_accuracy = detail::sca_accuracy(res.classifier, train_mels, train_labels);
  res.test_accuracy = test_mels.empty()
                          ? 0.0
                          : detail::sca_accuracy(res.classifier, test_mels, test_labels);
  return res;
}

inline MetricReport sca(ScaClassifier& clf, const std::vector<Tensor>& converted,
                        const std::vector<std::int64_t>& target_labels) {
  COTA_CHECK(!converted.empty() && converted.size() == target_labels.size(),
             "sca: converted set shape");
  for (std::int64_t l : target_labels)
    COTA_CHECK(l >= 0 && l < clf.n_classes(), "sca: label ", l, " outside inventory");
  MetricReport r;
  r.metric = "sca";
  r.value = detail::sca_accuracy(clf, converted, target_labels);
  r.n_samples = static_cast<std::int64_t>(converted.size());
  r.config_digest = detail::digest_of("sca/linear-mean-mfcc-" +
                                      std::to_string(clf.n_coeffs()));
  detail::check_unit_range(r.value, "sca");
  return r;
}

// ---------------------------------------------------------------------------
// Voicing decision error
// ---------------------------------------------------------------------------

struct VdeResult {
  MetricReport report;
  bool truncated = false;  // frame counts differed; a length bug upstream
};

// Compares the voiced/unvoiced contour of a conversion against its source.
// Frame decisions come from the frontend's autocorrelation detector on the
// shared mel frame grid.
inline VdeResult vde(const Waveform& source, const Waveform& converted,
                     double threshold = 0.45, const MelConfig& cfg = {}) {
  std::vector<bool> a = voicing_decisions(source, threshold, cfg);
  std::vector<bool> b = voicing_decisions(converted, threshold, cfg);
  std::size_t n = std::min(a.size(), b.size());
  VdeResult res;
  res.truncated = a.size() != b.size();
  std::int64_t mismatches = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] != b[i]) ++mismatches;
  res.report.metric = "vde";
  res.report.value = static_cast<double>(mismatches) / static_cast<double>(n);
  res.report.n_samples = static_cast<std::int64_t>(n);
  std::ostringstream desc;
  desc << "vde/win" << cfg.n_fft << "/hop" << cfg.hop << "/thr" << threshold;
  res.report.config_digest = detail::digest_of(desc.str());
  detail::check_unit_range(res.report.value, "vde");
  return res;
}

// ---------------------------------------------------------------------------
// Disentanglement probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  std::int64_t channels = 128;
  int layers = 4;
  int kernel = 3;
  std::int64_t hidden = 128;
  double dropout = 0.5;
  int max_epochs = 20;
  int patience = 5;
  double lr = 1e-3;
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;

  std::string describe() const {
    std::ostringstream os;
    os << "probe/c" << channels << "x" << layers << "/k" << kernel << "/drop" << dropout
       << "/ep" << max_epochs;
    return os.str();
  }
};

struct ProbeData {
  std::vector<Tensor> features;  // each [T, D], one utterance
  std::vector<std::int64_t> labels;
};

// Convolutional stack, temporal max pool, small classifier head. Trained
// briefly with early stopping on the held-out accuracy; reports accuracy on
// a test split the training never saw.
class SpeakerProbe {
 public:
  SpeakerProbe(std::int64_t in_dim, std::int64_t n_classes, const ProbeConfig& cfg)
      : cfg_(cfg), n_classes_(n_classes) {
    Rng rng = Rng(cfg.seed).stream("probe");
    std::int64_t c = in_dim;
    for (int l = 0; l < cfg.layers; ++l) {
      convs_.emplace_back(c, cfg.channels, cfg.kernel,
                          rng.stream("conv" + std::to_string(l)));
      bns_.emplace_back(cfg.channels);
      c = cfg.channels;
    }
    mlp1_ = Linear(cfg.channels, cfg.hidden, rng.stream("mlp1"));
    mlp2_ = Linear(cfg.hidden, n_classes, rng.stream("mlp2"));
    for (int l = 0; l < cfg.layers; ++l) {
      convs_[static_cast<std::size_t>(l)].register_into(reg_, "conv" + std::to_string(l));
      bns_[static_cast<std::size_t>(l)].register_into(reg_, "bn" + std::to_string(l));
    }
    mlp1_.register_into(reg_, "mlp1");
    mlp2_.register_into(reg_, "mlp2");
  }

  SpeakerProbe(const SpeakerProbe&) = delete;
  SpeakerProbe& operator=(const SpeakerProbe&) = delete;

  // x: [B, D, T]
  Var forward(const Var& x, const std::vector<std::int64_t>& lengths, bool training,
              const Rng* drop_rng) {
    Tensor mask = make_time_mask(lengths, x->val.dim(2));
    Var h = x;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      h = mul_const(h, expand_mask3(mask, h->val.dim(1)));
      h = relu_v(bns_[l](convs_[l](h), training, &mask));
    }
    Var pooled = maxpool_time(h, lengths);
    Var hid = relu_v(mlp1_(pooled));
    hid = dropout(hid, training ? cfg_.dropout : 0.0, drop_rng);
    return mlp2_(hid);
  }

  ParamRegistry& params() { return reg_; }

 private:
  ProbeConfig cfg_;
  std::int64_t n_classes_;
  std::vector<Conv1dLayer> convs_;
  std::vector<BatchNormLayer> bns_;
  Linear mlp1_, mlp2_;
  ParamRegistry reg_;
};

namespace detail {

struct ProbeBatch {
  Tensor x;  // [B, D, T_max]
  std::vector<std::int64_t> lengths;
  std::vector<std::int64_t> labels;
};

inline ProbeBatch probe_batch(const ProbeData& data, const std::vector<std::size_t>& idx) {
  std::int64_t B = static_cast<std::int64_t>(idx.size());
  std::int64_t D = data.features[idx[0]].dim(1);
  std::int64_t T = 0;
  for (std::size_t i : idx) T = std::max(T, data.features[i].dim(0));
  ProbeBatch b;
  b.x = Tensor::zeros({B, D, T});
  for (std::int64_t k = 0; k < B; ++k) {
    const Tensor& f = data.features[idx[static_cast<std::size_t>(k)]];
    COTA_CHECK(f.dim(1) == D, "probe: mixed feature widths");
    for (std::int64_t t = 0; t < f.dim(0); ++t)
      for (std::int64_t d = 0; d < D; ++d) b.x.at(k, d, t) = f.at(t, d);
    b.lengths.push_back(f.dim(0));
    b.labels.push_back(data.labels[idx[static_cast<std::size_t>(k)]]);
  }
  return b;
}

inline double probe_accuracy(SpeakerProbe& probe, const ProbeData& data,
                             std::int64_t batch_size) {
  NoGrad ng;
  std::int64_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    idx.push_back(i);
    if (static_cast<std::int64_t>(idx.size()) == batch_size ||
        i + 1 == data.features.size()) {
      ProbeBatch b = probe_batch(data, idx);
      Var logits = probe.forward(constant(b.x), b.lengths, false, nullptr);
      for (std::int64_t k = 0; k < b.x.dim(0); ++k) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < logits->val.dim(1); ++c)
          if (logits->val.at(k, c) > logits->val.at(k, best)) best = c;
        if (best == b.labels[static_cast<std::size_t>(k)]) ++hits;
      }
      idx.clear();
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.features.size());
}

}  // namespace detail

inline MetricReport disentanglement_probe(const ProbeData& train, const ProbeData& val,
                                          const ProbeData& test, std::int64_t n_classes,
                                          const ProbeConfig& cfg = {}) {
  COTA_CHECK(!train.features.empty() && train.features.size() == train.labels.size(),
             "probe: train set shape");
  COTA_CHECK(!test.features.empty() && test.features.size() == test.labels.size(),
             "probe: test set shape");
  std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
  std::int64_t distinct = 0;
  for (std::int64_t l : train.labels) {
    COTA_CHECK(l >= 0 && l < n_classes, "probe: label ", l, " outside inventory");
    if (!seen[static_cast<std::size_t>(l)]) {
      seen[static_cast<std::size_t>(l)] = true;
      ++distinct;
    }
  }
  COTA_CHECK(distinct >= 2, "probe: need at least two speakers, got ", distinct);

  std::int64_t D = train.features[0].dim(1);
  SpeakerProbe probe(D, n_classes, cfg);
  std::vector<Var> params = probe.params().param_vars();
  Adam adam;

  double best_val = -1.0;
  int stale = 0;
  std::vector<Tensor> best_params;
  std::vector<Tensor> best_buffers;
  auto snapshot = [&] {
    best_params.clear();
    best_buffers.clear();
    for (const auto& [n, v] : probe.params().params) best_params.push_back(v->val);
    for (const auto& [n, t] : probe.params().buffers) best_buffers.push_back(*t);
  };
  auto restore = [&] {
    if (best_params.empty()) return;
    std::size_t i = 0;
    for (auto& [n, v] : probe.params().params) v->val = best_params[i++];
    i = 0;
    for (auto& [n, t] : probe.params().buffers) *t = best_buffers[i++];
  };

  std::vector<std::size_t> order(train.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng erng = Rng(cfg.seed).stream("epoch" + std::to_string(epoch));
    erng.stream("shuffle").shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      detail::ProbeBatch b = detail::probe_batch(train, idx);
      zero_grad(params);
      Rng drop = erng.stream("drop" + std::to_string(start));
      Var logits = probe.forward(constant(b.x), b.lengths, true, &drop);
      Var loss = cross_entropy_logits(logits, b.labels);
      backward(loss);
      adam.step(params, cfg.lr, 0.0);
    }
    const ProbeData& valset = val.features.empty() ? train : val;
    double acc = detail::probe_accuracy(probe, valset, cfg.batch_size);
    if (acc > best_val) {
      best_val = acc;
      stale = 0;
      snapshot();
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  restore();

  MetricReport r;
  r.metric = "probe";
  r.value = detail::probe_accuracy(probe, test, cfg.batch_size);
  r.n_samples = static_cast<std::int64_t>(test.features.size());
  r.config_digest = detail::digest_of(cfg.describe());
  detail::check_unit_range(r.value, "probe");
  return r;
}

}  // namespace cota
