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

// End-to-end inference: source audio plus its transcript in, converted mel
// out, with the target voice chosen by name. Rhythm rides on the alignment,
// so the converted spectrogram always has the source frame count. A crude
// phase-reconstruction vocoder is included purely so results are audible
// without any neural vocoder; it is a diagnostic, not a product.

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotatron/audio_frontend.hpp"
#include "cotatron/audio_io.hpp"
#include "cotatron/features.hpp"
#include "cotatron/io.hpp"
#include "cotatron/model.hpp"
#include "cotatron/text_frontend.hpp"
#include "cotatron/training.hpp"
#include "cotatron/vc_decoder.hpp"

namespace cota {

// ---------------------------------------------------------------------------
// Core conversion
// ---------------------------------------------------------------------------

struct ConversionResult {
  Tensor mel;            // [T, n_mels], same T as the source
  double mse_vs_source;  // with target == source this is the reconstruction error
};

inline ConversionResult convert_mel(Cotatron& cot, ResidualEncoder& res, VcDecoder& vc,
                                    const Tensor& mel, const std::vector<std::int64_t>& ids,
                                    std::int64_t target) {
  COTA_CHECK(mel.rank() == 2, "convert: mel must be [T, n_mels]");
  COTA_CHECK(!ids.empty(), "convert: empty symbol sequence");
  if (target < 0 || target >= vc.config().n_speakers)
    throw LookupError("target speaker row " + std::to_string(target) +
                      " is not in the table of " +
                      std::to_string(vc.config().n_speakers));
  NoGrad ng;
  std::int64_t T = mel.dim(0), M = mel.dim(1), E = cot.config().text_dim;

  Tensor a = extract_alignment(mel, ids, cot);
  TextEncoding enc = cot.encode_text({ids}, false, nullptr);
  Tensor enc_rows({enc.enc->val.dim(1), E});
  for (std::int64_t n = 0; n < enc_rows.dim(0); ++n)
    for (std::int64_t e = 0; e < E; ++e) enc_rows.at(n, e) = enc.enc->val.at(0, n, e);
  Tensor L = linguistic_features(a, enc_rows);  // [T, E]

  Tensor mel3({1, T, M});
  for (std::int64_t i = 0; i < mel.numel(); ++i) mel3.data[i] = mel.data[i];
  Var R = res(mel3, {T});  // [1, T, 1], from the source speech

  Tensor features = Tensor::zeros({1, E + 1, T});
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t e = 0; e < E; ++e) features.at(0, e, t) = L.at(t, e);
    features.at(0, E, t) = R->val.at(0, t, 0);
  }
  Var pred = vc.decode(constant(features), {target}, {T}, false);

  ConversionResult out;
  out.mel = Tensor({T, M});
  double mse = 0.0;
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t m = 0; m < M; ++m) {
      double v = pred->val.at(0, m, t);
      out.mel.at(t, m) = v;
      double d = v - mel.at(t, m);
      mse += d * d;
    }
  out.mse_vs_source = mse / static_cast<double>(T * M);
  return out;
}

// ---------------------------------------------------------------------------
// Crude waveform fallback
// ---------------------------------------------------------------------------

namespace detail {

// Complex spectra with the exact framing of the analysis stft: reflect
// padding of half a window, frames every hop.
inline std::vector<std::vector<std::complex<double>>> complex_stft(
    const std::vector<double>& x, const MelConfig& cfg) {
  auto padded = reflect_pad_signal(x, cfg.n_fft / 2);
  auto win = hann_window(cfg.n_fft);
  std::int64_t T = frame_count(static_cast<std::int64_t>(x.size()), cfg.hop);
  std::vector<std::vector<std::complex<double>>> out;
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t t = 0; t < T; ++t) {
    for (int i = 0; i < cfg.n_fft; ++i)
      frame[static_cast<std::size_t>(i)] =
          padded[static_cast<std::size_t>(t * cfg.hop + i)] * win[static_cast<std::size_t>(i)];
    out.push_back(rfft(frame));
  }
  return out;
}

// Windowed overlap-add; the result drops the half-window padding again so
// frame t sits at sample t * hop, giving (T - 1) * hop samples back.
inline std::vector<double> istft(const std::vector<std::vector<std::complex<double>>>& spec,
                                 const MelConfig& cfg) {
  std::int64_t T = static_cast<std::int64_t>(spec.size());
  std::int64_t n = (T - 1) * cfg.hop;
  std::int64_t padded_len = n + cfg.n_fft;
  std::vector<double> acc(static_cast<std::size_t>(padded_len), 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(padded_len), 0.0);
  auto win = hann_window(cfg.n_fft);
  for (std::int64_t t = 0; t < T; ++t) {
    auto frame = irfft(spec[static_cast<std::size_t>(t)],
                       static_cast<std::size_t>(cfg.n_fft));
    for (int i = 0; i < cfg.n_fft; ++i) {
      std::size_t k = static_cast<std::size_t>(t * cfg.hop + i);
      double w = win[static_cast<std::size_t>(i)];
      acc[k] += frame[static_cast<std::size_t>(i)] * w;
      wsum[k] += w * w;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  std::int64_t pad = cfg.n_fft / 2;
  for (std::int64_t i = 0; i < n; ++i) {
    std::size_t k = static_cast<std::size_t>(i + pad);
    out[static_cast<std::size_t>(i)] = acc[k] / std::max(wsum[k], 1e-8);
  }
  return out;
}

}  // namespace detail

// Pseudo-inverse of the mel filterbank back to linear-frequency magnitudes,
// then iterative phase reconstruction. Zero iterations means zero phase.
inline std::vector<double> mel_to_audio_fallback(const Tensor& logmel, int n_iters,
                                                 const MelConfig& cfg = {}) {
  COTA_CHECK(logmel.rank() == 2, "fallback vocoder: mel must be [T, n_mels]");
  COTA_CHECK(logmel.dim(1) == cfg.n_mels, "fallback vocoder: mel width mismatch");
  std::int64_t T = logmel.dim(0);
  std::int64_t bins = cfg.n_fft / 2 + 1;
  COTA_CHECK(T >= 4, "fallback vocoder: too few frames (", T, ")");

  RowMat fb = mel_filterbank(cfg);  // [n_mels, bins]
  Eigen::MatrixXd pinv =
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(fb).pseudoInverse();

  // magnitude targets, clamped to stay physical
  Eigen::MatrixXd mel_lin(cfg.n_mels, T);
  for (std::int64_t t = 0; t < T; ++t)
    for (int m = 0; m < cfg.n_mels; ++m) mel_lin(m, t) = std::exp(logmel.at(t, m));
  Eigen::MatrixXd mag = (pinv * mel_lin).cwiseMax(0.0);  // [bins, T]

  std::vector<std::vector<std::complex<double>>> spec(
      static_cast<std::size_t>(T),
      std::vector<std::complex<double>>(static_cast<std::size_t>(bins)));
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t k = 0; k < bins; ++k)
      spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = {mag(k, t), 0.0};

  std::vector<double> x = detail::istft(spec, cfg);
  for (int it = 0; it < n_iters; ++it) {
    auto est = detail::complex_stft(x, cfg);
    for (std::int64_t t = 0; t < T && t < static_cast<std::int64_t>(est.size()); ++t)
      for (std::int64_t k = 0; k < bins; ++k) {
        std::complex<double> c = est[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
        double amp = std::abs(c);
        spec[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
            amp > 1e-12 ? std::complex<double>(mag(k, t) * (c.real() / amp),
                                               mag(k, t) * (c.imag() / amp))
                        : std::complex<double>(mag(k, t), 0.0);
      }
    x = detail::istft(spec, cfg);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Loaded system and the file-level pipeline
// ---------------------------------------------------------------------------

// Owns the three networks plus the naming tables. Members register internal
// buffer pointers at construction, so the bundle is pinned in place.
class VoiceConversionSystem {
 public:
  VoiceConversionSystem(const CotatronConfig& mc, const ResidualEncoderConfig& rc,
                        const VcDecoderConfig& vcc, std::vector<std::string> speakers,
                        SymbolTable symbols)
      : cotatron(mc, Rng(0)),
        residual(rc, Rng(0)),
        decoder(vcc, Rng(0)),
        speakers_(std::move(speakers)),
        symbols_(std::move(symbols)) {
    COTA_CHECK(static_cast<std::int64_t>(speakers_.size()) == vcc.n_speakers,
               "system: speaker list size must match the table");
    COTA_CHECK(symbols_.size() == mc.n_symbols,
               "system: symbol table size must match the text encoder");
    residual.register_into(residual_reg_, "residual");
  }

  VoiceConversionSystem(const VoiceConversionSystem&) = delete;
  VoiceConversionSystem& operator=(const VoiceConversionSystem&) = delete;

  void load(const std::string& cotatron_ckpt, const std::string& vc_ckpt) {
    Checkpoint ca = load_checkpoint(cotatron_ckpt);
    std::vector<ParamRegistry*> ra = {&cotatron.params()};
    detail::unpack_checkpoint(ca, ra);
    Checkpoint cb = load_checkpoint(vc_ckpt);
    std::vector<ParamRegistry*> rb = {&residual_reg_, &decoder.params()};
    detail::unpack_checkpoint(cb, rb);
  }

  std::int64_t speaker_row(const std::string& name) const {
    for (std::size_t i = 0; i < speakers_.size(); ++i)
      if (speakers_[i] == name) return static_cast<std::int64_t>(i);
    throw LookupError("unknown target speaker \"" + name + "\"");
  }

  const std::vector<std::string>& speakers() const { return speakers_; }
  const SymbolTable& symbols() const { return symbols_; }

  Cotatron cotatron;
  ResidualEncoder residual;
  VcDecoder decoder;

 private:
  ParamRegistry residual_reg_;
  std::vector<std::string> speakers_;
  SymbolTable symbols_;
};

struct ConvertFileOutputs {
  std::string mel_path;
  std::string json_path;
  std::string wav_path;  // empty unless a waveform was requested
  ConversionResult result;
};

namespace detail {

inline std::uint64_t fnv64_bytes(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// The declared side effects are exactly the files named in the return value.
inline ConvertFileOutputs convert_file(VoiceConversionSystem& sys,
                                       const std::string& audio_path,
                                       const std::string& transcript,
                                       const std::string& target_speaker,
                                       const std::string& out_dir,
                                       int wav_iters = -1,
                                       const MelConfig& mel_cfg = {}) {
  std::int64_t row = sys.speaker_row(target_speaker);
  std::vector<std::int64_t> ids = tokenize(transcript, sys.symbols()).seq.ids;

  auto bytes = read_file_bytes(audio_path);
  Waveform w = load_audio(audio_path);
  Tensor mel = mel_spectrogram(w, mel_cfg);

  ConvertFileOutputs out;
  out.result = convert_mel(sys.cotatron, sys.residual, sys.decoder, mel, ids, row);

  std::filesystem::create_directories(out_dir);
  std::string stem = std::filesystem::path(audio_path).stem().string();
  out.mel_path = out_dir + "/" + stem + "_to_" + target_speaker + ".mel";
  out.json_path = out_dir + "/" + stem + "_to_" + target_speaker + ".json";
  save_mel(out.result.mel, out.mel_path);

  nlohmann::json meta{{"source_audio", audio_path},
                      {"transcript", transcript},
                      {"target_speaker", target_speaker},
                      {"target_row", row},
                      {"frames", out.result.mel.dim(0)},
                      {"n_mels", out.result.mel.dim(1)},
                      {"sample_rate", mel_cfg.sample_rate},
                      {"input_checksum", detail::fnv64_bytes(bytes)},
                      {"mse_vs_source", out.result.mse_vs_source}};
  write_file_bytes(out.json_path, [&] {
    std::string s = meta.dump(2);
    s.push_back('\n');
    return std::vector<std::uint8_t>(s.begin(), s.end());
  }());

  if (wav_iters >= 0) {
    std::vector<double> samples = mel_to_audio_fallback(out.result.mel, wav_iters, mel_cfg);
    double peak = 0.0;
    for (double s : samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.0)
      for (double& s : samples) s *= kPeakTarget / peak;
    out.wav_path = out_dir + "/" + stem + "_to_" + target_speaker + ".wav";
    Waveform ww;
    ww.samples = std::move(samples);
    ww.sample_rate = mel_cfg.sample_rate;
    write_wav16(out.wav_path, ww);
  }
  return out;
}

}  // namespace cota
