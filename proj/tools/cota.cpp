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

// Command-line surface for the whole pipeline: corpus preparation, the two
// training phases, feature extraction, conversion, metrics, and alignment
// plots. Every key setting resolves as CLI flag > config file > built-in
// default; all randomness flows from --seed through named substreams.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cotatron/conversion.hpp"
#include "cotatron/corpus.hpp"
#include "cotatron/evaluation.hpp"
#include "cotatron/plot.hpp"
#include "cotatron/synth.hpp"

using nlohmann::json;
using namespace cota;

namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void emit(const json& j) { std::printf("%s\n", j.dump().c_str()); }

// First exception wins; the rest of the work still runs to completion.
void parallel_for(std::int64_t n, int workers, const std::function<void(std::int64_t)>& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (workers == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex mu;
  std::exception_ptr first;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------
// Config file handling
// ---------------------------------------------------------------------------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(read_text(path), nullptr, false);
  COTA_CHECK(!j.is_discarded(), "config is not valid JSON: ", path);
  COTA_CHECK(j.is_object(), "config root must be an object: ", path);
  return j;
}

template <typename T>
T cfg(const json& j, const char* section, const char* key, T fallback) {
  if (j.contains(section) && j[section].contains(key))
    return j[section][key].get<T>();
  return fallback;
}

MelConfig mel_from_config(const json& j) {
  MelConfig c;
  c.sample_rate = cfg(j, "mel", "sample_rate", c.sample_rate);
  c.n_fft = cfg(j, "mel", "n_fft", c.n_fft);
  c.hop = cfg(j, "mel", "hop", c.hop);
  c.n_mels = cfg(j, "mel", "n_mels", c.n_mels);
  c.fmin = cfg(j, "mel", "fmin", c.fmin);
  c.fmax = cfg(j, "mel", "fmax", c.fmax);
  return c;
}

json mel_to_json(const MelConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"n_fft", c.n_fft},   {"hop", c.hop},
          {"n_mels", c.n_mels},           {"fmin", c.fmin},     {"fmax", c.fmax},
          {"clamp_floor", c.clamp_floor}};
}

MelConfig mel_from_json(const json& j) {
  MelConfig c;
  c.sample_rate = j.at("sample_rate");
  c.n_fft = j.at("n_fft");
  c.hop = j.at("hop");
  c.n_mels = j.at("n_mels");
  c.fmin = j.at("fmin");
  c.fmax = j.at("fmax");
  c.clamp_floor = j.at("clamp_floor");
  return c;
}

CotatronConfig model_from_config(const json& j, std::int64_t n_symbols,
                                 std::int64_t n_speakers, std::int64_t n_mels) {
  std::string preset = j.value("preset", "toy");
  COTA_CHECK(preset == "toy" || preset == "full", "preset must be toy or full, got ",
             preset);
  CotatronConfig c = preset == "toy" ? CotatronConfig::toy(n_symbols, n_speakers)
                                     : CotatronConfig::full(n_symbols, n_speakers);
  c.n_mels = n_mels;
  c.max_symbols = cfg(j, "model", "max_symbols", c.max_symbols);
  c.embed_dim = cfg(j, "model", "embed_dim", c.embed_dim);
  c.enc_channels = cfg(j, "model", "enc_channels", c.enc_channels);
  c.text_dim = cfg(j, "model", "text_dim", c.text_dim);
  c.z_dim = cfg(j, "model", "z_dim", c.z_dim);
  c.prenet_dim = cfg(j, "model", "prenet_dim", c.prenet_dim);
  c.attn_rnn_dim = cfg(j, "model", "attn_rnn_dim", c.attn_rnn_dim);
  c.dec_rnn_dim = cfg(j, "model", "dec_rnn_dim", c.dec_rnn_dim);
  c.attn_dim = cfg(j, "model", "attn_dim", c.attn_dim);
  c.postnet_channels = cfg(j, "model", "postnet_channels", c.postnet_channels);
  c.head_hidden = cfg(j, "model", "head_hidden", c.head_hidden);
  c.dropout = cfg(j, "model", "dropout", c.dropout);
  if (j.contains("model") && j["model"].contains("spk_channels"))
    c.spk_channels = j["model"]["spk_channels"].get<std::vector<std::int64_t>>();
  return c;
}

json model_to_json(const CotatronConfig& c) {
  return {{"n_symbols", c.n_symbols},
          {"n_speakers", c.n_speakers},
          {"n_mels", c.n_mels},
          {"max_symbols", c.max_symbols},
          {"embed_dim", c.embed_dim},
          {"enc_channels", c.enc_channels},
          {"enc_conv_layers", c.enc_conv_layers},
          {"enc_kernel", c.enc_kernel},
          {"text_dim", c.text_dim},
          {"spk_channels", c.spk_channels},
          {"z_dim", c.z_dim},
          {"prenet_dim", c.prenet_dim},
          {"attn_rnn_dim", c.attn_rnn_dim},
          {"dec_rnn_dim", c.dec_rnn_dim},
          {"dca_static", c.dca_static},
          {"dca_dynamic", c.dca_dynamic},
          {"dca_kernel", c.dca_kernel},
          {"dca_dyn_hidden", c.dca_dyn_hidden},
          {"attn_dim", c.attn_dim},
          {"prior_len", c.prior_len},
          {"prior_alpha", c.prior_alpha},
          {"prior_beta", c.prior_beta},
          {"postnet_channels", c.postnet_channels},
          {"postnet_layers", c.postnet_layers},
          {"postnet_kernel", c.postnet_kernel},
          {"head_hidden", c.head_hidden},
          {"dropout", c.dropout},
          {"mel_floor_log", c.mel_floor_log}};
}

CotatronConfig model_from_json(const json& j) {
  CotatronConfig c;
  c.n_symbols = j.at("n_symbols");
  c.n_speakers = j.at("n_speakers");
  c.n_mels = j.at("n_mels");
  c.max_symbols = j.at("max_symbols");
  c.embed_dim = j.at("embed_dim");
  c.enc_channels = j.at("enc_channels");
  c.enc_conv_layers = j.at("enc_conv_layers");
  c.enc_kernel = j.at("enc_kernel");
  c.text_dim = j.at("text_dim");
  c.spk_channels = j.at("spk_channels").get<std::vector<std::int64_t>>();
  c.z_dim = j.at("z_dim");
  c.prenet_dim = j.at("prenet_dim");
  c.attn_rnn_dim = j.at("attn_rnn_dim");
  c.dec_rnn_dim = j.at("dec_rnn_dim");
  c.dca_static = j.at("dca_static");
  c.dca_dynamic = j.at("dca_dynamic");
  c.dca_kernel = j.at("dca_kernel");
  c.dca_dyn_hidden = j.at("dca_dyn_hidden");
  c.attn_dim = j.at("attn_dim");
  c.prior_len = j.at("prior_len");
  c.prior_alpha = j.at("prior_alpha");
  c.prior_beta = j.at("prior_beta");
  c.postnet_channels = j.at("postnet_channels");
  c.postnet_layers = j.at("postnet_layers");
  c.postnet_kernel = j.at("postnet_kernel");
  c.head_hidden = j.at("head_hidden");
  c.dropout = j.at("dropout");
  c.mel_floor_log = j.at("mel_floor_log");
  return c;
}

ResidualEncoderConfig residual_from_config(const json& j, std::int64_t n_mels) {
  ResidualEncoderConfig c;
  c.n_mels = n_mels;
  c.channels = {4, 4, 8, 8, 8, 8};
  if (j.contains("residual") && j["residual"].contains("channels"))
    c.channels = j["residual"]["channels"].get<std::vector<std::int64_t>>();
  c.smooth_len = cfg(j, "residual", "smooth_len", c.smooth_len);
  return c;
}

json residual_to_json(const ResidualEncoderConfig& c) {
  return {{"n_mels", c.n_mels}, {"channels", c.channels}, {"smooth_len", c.smooth_len}};
}

ResidualEncoderConfig residual_from_json(const json& j) {
  ResidualEncoderConfig c;
  c.n_mels = j.at("n_mels");
  c.channels = j.at("channels").get<std::vector<std::int64_t>>();
  c.smooth_len = j.at("smooth_len");
  return c;
}

VcDecoderConfig decoder_from_config(const json& j, std::int64_t text_dim,
                                    std::int64_t n_mels, std::int64_t n_speakers) {
  std::string preset = j.value("preset", "toy");
  VcDecoderConfig c = preset == "toy" ? VcDecoderConfig::toy(n_speakers)
                                      : VcDecoderConfig{};
  c.text_dim = text_dim;
  c.n_mels = n_mels;
  c.n_speakers = n_speakers;
  c.emb_dim = cfg(j, "decoder", "emb_dim", c.emb_dim);
  if (j.contains("decoder") && j["decoder"].contains("channels"))
    c.channels = j["decoder"]["channels"].get<std::vector<std::int64_t>>();
  return c;
}

json decoder_to_json(const VcDecoderConfig& c) {
  return {{"text_dim", c.text_dim},
          {"n_mels", c.n_mels},
          {"n_speakers", c.n_speakers},
          {"emb_dim", c.emb_dim},
          {"channels", c.channels}};
}

VcDecoderConfig decoder_from_json(const json& j) {
  VcDecoderConfig c;
  c.text_dim = j.at("text_dim");
  c.n_mels = j.at("n_mels");
  c.n_speakers = j.at("n_speakers");
  c.emb_dim = j.at("emb_dim");
  c.channels = j.at("channels").get<std::vector<std::int64_t>>();
  return c;
}

TrainConfig train_from_config(const json& j, TrainPhase phase, std::uint64_t seed) {
  TrainConfig c = phase == TrainPhase::cotatron ? TrainConfig::cotatron_defaults()
                                                : TrainConfig::vc_defaults();
  c.batch_size = cfg(j, "train", "batch_size", c.batch_size);
  c.lr_initial = cfg(j, "train", "lr_initial", c.lr_initial);
  c.lr_final = cfg(j, "train", "lr_final", c.lr_final);
  c.decay_start_step = cfg(j, "train", "decay_start_step", c.decay_start_step);
  c.decay_end_step = cfg(j, "train", "decay_end_step", c.decay_end_step);
  c.weight_decay = cfg(j, "train", "weight_decay", c.weight_decay);
  c.tf_rate = cfg(j, "train", "tf_rate", c.tf_rate);
  if (j.contains("train") && j["train"].contains("grad_clip")) {
    if (j["train"]["grad_clip"].is_null())
      c.grad_clip.reset();
    else
      c.grad_clip = j["train"]["grad_clip"].get<double>();
  }
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

std::vector<std::string> speakers_of(const Manifest& m) {
  std::set<std::string> s;
  for (const auto& u : m.utterances) s.insert(u.speaker_id);
  return {s.begin(), s.end()};
}

std::int64_t speaker_index(const std::vector<std::string>& speakers,
                           const std::string& name) {
  auto it = std::find(speakers.begin(), speakers.end(), name);
  if (it == speakers.end())
    throw LookupError("unknown speaker: " + name);
  return it - speakers.begin();
}

Dataset build_dataset(const Manifest& m, const SymbolTable& table,
                      const MelConfig& mel_cfg, const std::vector<std::string>& speakers,
                      int workers) {
  Dataset data(static_cast<std::size_t>(m.size()));
  parallel_for(m.size(), workers, [&](std::int64_t i) {
    const Utterance& u = m.utterances[static_cast<std::size_t>(i)];
    TrainItem item;
    item.mel = mel_spectrogram(load_audio(u.audio_path), mel_cfg);
    item.ids = tokenize(u.transcript, table).seq.ids;
    item.speaker_label = speaker_index(speakers, u.speaker_id);
    item.source_id = u.audio_path;
    data[static_cast<std::size_t>(i)] = std::move(item);
  });
  return data;
}

// ---------------------------------------------------------------------------
// Sidecar metadata next to checkpoints
// ---------------------------------------------------------------------------

void write_sidecar(const std::string& out_dir, const json& j) {
  write_text(out_dir + "/model.json", j.dump(2) + "\n");
}

json read_sidecar_for(const std::string& ckpt_path) {
  fs::path side = fs::path(ckpt_path).parent_path() / "model.json";
  COTA_CHECK(fs::exists(side), "no model.json next to checkpoint: ", ckpt_path);
  return json::parse(read_text(side.string()));
}

SymbolTable table_from_sidecar(const json& side) {
  return SymbolTable::from_json(side.at("symbols").dump());
}

struct CotatronBundle {
  SymbolTable table;
  MelConfig mel_cfg;
  CotatronConfig mc;
  std::vector<std::string> speakers;
  std::unique_ptr<Cotatron> model;
};

CotatronBundle load_cotatron_bundle(const std::string& ckpt_path) {
  json side = read_sidecar_for(ckpt_path);
  COTA_CHECK(side.value("kind", "") == "cotatron",
             "expected a transcription-stage model.json next to ", ckpt_path);
  CotatronBundle b;
  b.table = table_from_sidecar(side);
  b.mel_cfg = mel_from_json(side.at("mel"));
  b.mc = model_from_json(side.at("model"));
  b.speakers = side.at("speakers").get<std::vector<std::string>>();
  b.model = std::make_unique<Cotatron>(b.mc, Rng(0));
  Checkpoint ck = load_checkpoint(ckpt_path);
  std::vector<ParamRegistry*> regs = {&b.model->params()};
  detail::unpack_checkpoint(ck, regs);
  return b;
}

std::unique_ptr<VoiceConversionSystem> load_system(const std::string& cot_ckpt,
                                                   const std::string& vc_ckpt,
                                                   MelConfig* mel_out) {
  json side = read_sidecar_for(vc_ckpt);
  COTA_CHECK(side.value("kind", "") == "vc",
             "expected a conversion-stage model.json next to ", vc_ckpt);
  auto sys = std::make_unique<VoiceConversionSystem>(
      model_from_json(side.at("model")), residual_from_json(side.at("residual")),
      decoder_from_json(side.at("decoder")),
      side.at("speakers").get<std::vector<std::string>>(),
      table_from_sidecar(side));
  sys->load(cot_ckpt, vc_ckpt);
  if (mel_out) *mel_out = mel_from_json(side.at("mel"));
  return sys;
}

// ---------------------------------------------------------------------------
// Subcommand state
// ---------------------------------------------------------------------------

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";
  int workers = 1;
};

void add_common(CLI::App* cmd, Common* c) {
  cmd->add_option("--config", c->config_path,
                  "JSON config file; flags given here beat config keys");
  cmd->add_option("--seed", c->seed, "master seed; all randomness derives from it");
  cmd->add_option("--out", c->out, "output directory (created if missing)");
  cmd->add_option("--workers", c->workers, "worker threads for data preparation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cotatron voice conversion pipeline"};
  app.set_version_flag("--version", std::string("cota ") + kVersionString + " (format " +
                                        std::to_string(kFormatVersion) + ")");
  app.require_subcommand(1);

  // ---- prepare-data -------------------------------------------------------
  Common pd;
  std::string pd_root, pd_layout = "vctk-like";
  double pd_min_minutes = 0.0, pd_train = 0.8, pd_val = 0.1, pd_test = 0.1;
  auto* cmd_pd = app.add_subcommand(
      "prepare-data", "scan a corpus, filter, and write train/val/test manifests");
  cmd_pd->add_option("--root", pd_root, "corpus root directory or TSV manifest")
      ->required();
  cmd_pd->add_option("--layout", pd_layout, "vctk-like | libritts-like | flat-tsv");
  cmd_pd->add_option("--min-minutes", pd_min_minutes,
                     "drop speakers with less audio than this (0 keeps all)");
  cmd_pd->add_option("--train-frac", pd_train, "transcript share for training");
  cmd_pd->add_option("--val-frac", pd_val, "transcript share for validation");
  cmd_pd->add_option("--test-frac", pd_test, "transcript share for testing");
  add_common(cmd_pd, &pd);

  // ---- synth-corpus -------------------------------------------------------
  Common sc;
  int sc_speakers = 2, sc_lines = 10, sc_takes = 1;
  auto* cmd_sc = app.add_subcommand(
      "synth-corpus", "generate the deterministic toy corpus used by the examples");
  cmd_sc->add_option("--speakers", sc_speakers, "number of voices (1..6)");
  cmd_sc->add_option("--lines", sc_lines, "lines per voice (1..25)");
  cmd_sc->add_option("--takes", sc_takes, "recordings per line");
  add_common(cmd_sc, &sc);

  // ---- train-cotatron -----------------------------------------------------
  Common tc;
  std::string tc_train, tc_val, tc_resume;
  std::int64_t tc_steps = 0;
  std::int64_t tc_batch = 0;
  auto* cmd_tc = app.add_subcommand(
      "train-cotatron", "train the transcription-guided encoder (phase one)");
  cmd_tc->add_option("--train", tc_train, "training manifest TSV")->required();
  cmd_tc->add_option("--val", tc_val, "validation manifest TSV");
  cmd_tc->add_option("--steps", tc_steps, "total steps (config key run.steps, default 2000)");
  cmd_tc->add_option("--batch-size", tc_batch,
                     "batch size (config key train.batch_size)");
  cmd_tc->add_option("--resume", tc_resume, "checkpoint to resume from");
  add_common(cmd_tc, &tc);

  // ---- train-vc -----------------------------------------------------------
  Common tv;
  std::string tv_train, tv_val, tv_cotatron;
  std::int64_t tv_steps = 0, tv_batch = 0;
  auto* cmd_tv = app.add_subcommand(
      "train-vc", "train residual encoder and decoder against a frozen phase-one model");
  cmd_tv->add_option("--train", tv_train, "training manifest TSV")->required();
  cmd_tv->add_option("--val", tv_val, "validation manifest TSV");
  cmd_tv->add_option("--cotatron", tv_cotatron, "phase-one checkpoint")->required();
  cmd_tv->add_option("--steps", tv_steps, "total steps (config key run.steps, default 500)");
  cmd_tv->add_option("--batch-size", tv_batch, "batch size (config key train.batch_size)");
  add_common(cmd_tv, &tv);

  // ---- extract ------------------------------------------------------------
  Common ex;
  std::string ex_manifest, ex_cotatron, ex_vc;
  auto* cmd_ex = app.add_subcommand(
      "extract", "write linguistic and residual features for a manifest");
  cmd_ex->add_option("--manifest", ex_manifest, "manifest TSV")->required();
  cmd_ex->add_option("--cotatron", ex_cotatron, "phase-one checkpoint")->required();
  cmd_ex->add_option("--vc", ex_vc, "phase-two checkpoint")->required();
  add_common(cmd_ex, &ex);

  // ---- convert ------------------------------------------------------------
  Common cv;
  std::string cv_audio, cv_text, cv_target, cv_cotatron, cv_vc;
  int cv_wav_iters = 60;
  auto* cmd_cv = app.add_subcommand("convert", "convert one utterance to a target voice");
  cmd_cv->add_option("--audio", cv_audio, "source audio file")->required();
  cmd_cv->add_option("--text", cv_text, "transcript of the source audio")->required();
  cmd_cv->add_option("--target", cv_target, "target speaker name")->required();
  cmd_cv->add_option("--cotatron", cv_cotatron, "phase-one checkpoint")->required();
  cmd_cv->add_option("--vc", cv_vc, "phase-two checkpoint")->required();
  cmd_cv->add_option("--wav-iters", cv_wav_iters,
                     "phase-recovery iterations for the audio preview; -1 skips the wav");
  add_common(cmd_cv, &cv);

  // ---- evaluate -----------------------------------------------------------
  auto* cmd_ev = app.add_subcommand("evaluate", "objective metrics");
  cmd_ev->require_subcommand(1);

  Common ev_sca;
  std::string sca_train, sca_test, sca_converted;
  int sca_coeffs = 13;
  auto* cmd_sca = cmd_ev->add_subcommand(
      "sca", "speaker-classification accuracy of converted utterances");
  cmd_sca->add_option("--train", sca_train, "manifest for classifier training")
      ->required();
  cmd_sca->add_option("--test", sca_test, "held-out manifest of genuine recordings")
      ->required();
  cmd_sca->add_option("--converted-dir", sca_converted,
                      "directory of converted .mel/.json pairs to score");
  cmd_sca->add_option("--coeffs", sca_coeffs, "cepstral coefficients per frame");
  add_common(cmd_sca, &ev_sca);

  Common ev_vde;
  std::string vde_source, vde_converted;
  double vde_threshold = 0.45;
  auto* cmd_vde = cmd_ev->add_subcommand(
      "vde", "voicing decision error between source and converted audio");
  cmd_vde->add_option("--source", vde_source, "source audio")->required();
  cmd_vde->add_option("--converted", vde_converted, "converted audio")->required();
  cmd_vde->add_option("--threshold", vde_threshold, "voicing score threshold in (0,1)");
  add_common(cmd_vde, &ev_vde);

  Common ev_pr;
  std::string pr_manifest, pr_features, pr_kind = "L";
  auto* cmd_pr = cmd_ev->add_subcommand(
      "probe", "speaker-identity probe on extracted feature streams");
  cmd_pr->add_option("--manifest", pr_manifest, "manifest TSV (labels)")->required();
  cmd_pr->add_option("--features", pr_features, "feature archive from `extract`")
      ->required();
  cmd_pr->add_option("--kind", pr_kind, "which stream to probe: L | LR | M");
  add_common(cmd_pr, &ev_pr);

  // ---- plot-alignment -----------------------------------------------------
  Common pl;
  std::string pl_audio, pl_text, pl_cotatron;
  int pl_cell = 3;
  auto* cmd_pl = app.add_subcommand("plot-alignment",
                                    "render the attention alignment as a PNG heatmap");
  cmd_pl->add_option("--audio", pl_audio, "audio file")->required();
  cmd_pl->add_option("--text", pl_text, "transcript")->required();
  cmd_pl->add_option("--cotatron", pl_cotatron, "phase-one checkpoint")->required();
  cmd_pl->add_option("--cell", pl_cell, "pixels per matrix cell");
  add_common(cmd_pl, &pl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n",
                 json({{"error", "usage"}, {"message", e.what()}}).dump().c_str());
    return 2;
  }

  try {
    if (*cmd_pd) {
      json conf = load_config(pd.config_path);
      BuildReport rep = build_manifest(pd_root, pd_layout);
      rep.manifest.check();
      Manifest m = rep.manifest;
      if (pd_min_minutes > 0.0) m = filter_speaker_minutes(m, pd_min_minutes);
      Splits s = split_by_transcription(m, pd_train, pd_val, pd_test, pd.seed);
      fs::create_directories(pd.out);
      save_splits(s, pd.out + "/corpus");
      emit({{"utterances", m.size()},
            {"skipped", rep.skipped},
            {"speakers", speakers_of(m).size()},
            {"train", s.train.size()},
            {"val", s.val.size()},
            {"test", s.test.size()},
            {"out", pd.out}});
    } else if (*cmd_sc) {
      auto utts = make_toy_corpus(sc_speakers, sc_lines, sc.seed, sc_takes);
      fs::create_directories(sc.out);
      write_toy_corpus(utts, sc.out);
      emit({{"utterances", utts.size()},
            {"speakers", sc_speakers},
            {"lines", sc_lines},
            {"takes", sc_takes},
            {"out", sc.out}});
    } else if (*cmd_tc) {
      json conf = load_config(tc.config_path);
      SymbolTable table = SymbolTable::make_default();
      MelConfig mel_cfg = mel_from_config(conf);
      Manifest train_m = load_manifest(tc_train);
      train_m.check();
      auto speakers = speakers_of(train_m);
      Dataset train_d = build_dataset(train_m, table, mel_cfg, speakers, tc.workers);
      Dataset val_d;
      if (!tc_val.empty()) {
        Manifest vm = load_manifest(tc_val);
        val_d = build_dataset(vm, table, mel_cfg, speakers, tc.workers);
      }

      CotatronConfig mc = model_from_config(
          conf, table.size(), static_cast<std::int64_t>(speakers.size()), mel_cfg.n_mels);
      Cotatron model(mc, Rng(tc.seed).stream("model"));

      TrainConfig tcfg = train_from_config(conf, TrainPhase::cotatron, tc.seed);
      if (tc_batch > 0) tcfg.batch_size = tc_batch;
      TrainRunOptions opts;
      opts.phase1_steps =
          tc_steps > 0 ? tc_steps : cfg<std::int64_t>(conf, "run", "steps", 2000);
      opts.phase2_steps = cfg<std::int64_t>(conf, "run", "stage2_steps", 0);
      opts.log_every = cfg<std::int64_t>(conf, "run", "log_every", 10);
      opts.ckpt_every = cfg<std::int64_t>(conf, "run", "ckpt_every", 1000);
      opts.val_every = cfg<std::int64_t>(conf, "run", "val_every", 1000);
      opts.out_dir = tc.out;
      opts.resume_from = tc_resume;
      if (!val_d.empty()) opts.val = &val_d;

      fs::create_directories(tc.out);
      write_sidecar(tc.out, {{"kind", "cotatron"},
                             {"version", kVersionString},
                             {"format", kFormatVersion},
                             {"mel", mel_to_json(mel_cfg)},
                             {"model", model_to_json(mc)},
                             {"speakers", speakers},
                             {"symbols", json::parse(table.to_json())},
                             {"seed", tc.seed}});
      TrainReport rep = train_cotatron(model, train_d, {}, tcfg, opts);
      emit({{"final_checkpoint", rep.final_checkpoint},
            {"steps", rep.steps_run},
            {"final_loss", rep.log.empty() ? 0.0 : rep.log.back().loss}});
    } else if (*cmd_tv) {
      json conf = load_config(tv.config_path);
      CotatronBundle base = load_cotatron_bundle(tv_cotatron);
      Manifest train_m = load_manifest(tv_train);
      train_m.check();
      Dataset train_d =
          build_dataset(train_m, base.table, base.mel_cfg, base.speakers, tv.workers);
      Dataset val_d;
      if (!tv_val.empty()) {
        Manifest vm = load_manifest(tv_val);
        val_d = build_dataset(vm, base.table, base.mel_cfg, base.speakers, tv.workers);
      }

      ResidualEncoderConfig rc = residual_from_config(conf, base.mel_cfg.n_mels);
      VcDecoderConfig vcc = decoder_from_config(
          conf, base.mc.text_dim, base.mel_cfg.n_mels,
          static_cast<std::int64_t>(base.speakers.size()));
      ResidualEncoder res(rc, Rng(tv.seed).stream("residual"));
      VcDecoder vc(vcc, Rng(tv.seed).stream("decoder"));

      TrainConfig tcfg = train_from_config(conf, TrainPhase::vc, tv.seed);
      if (tv_batch > 0) tcfg.batch_size = tv_batch;
      TrainRunOptions opts;
      opts.total_steps =
          tv_steps > 0 ? tv_steps : cfg<std::int64_t>(conf, "run", "steps", 500);
      opts.log_every = cfg<std::int64_t>(conf, "run", "log_every", 10);
      opts.ckpt_every = cfg<std::int64_t>(conf, "run", "ckpt_every", 1000);
      opts.val_every = cfg<std::int64_t>(conf, "run", "val_every", 1000);
      opts.plateau_evals = cfg<int>(conf, "run", "plateau_evals", 5);
      opts.out_dir = tv.out;
      if (!val_d.empty()) opts.val = &val_d;

      fs::create_directories(tv.out);
      write_sidecar(tv.out, {{"kind", "vc"},
                             {"version", kVersionString},
                             {"format", kFormatVersion},
                             {"mel", mel_to_json(base.mel_cfg)},
                             {"model", model_to_json(base.mc)},
                             {"residual", residual_to_json(rc)},
                             {"decoder", decoder_to_json(vcc)},
                             {"speakers", base.speakers},
                             {"symbols", json::parse(base.table.to_json())},
                             {"seed", tv.seed}});
      TrainReport rep = train_vc(*base.model, res, vc, train_d, tcfg, opts);
      emit({{"final_checkpoint", rep.final_checkpoint},
            {"steps", rep.steps_run},
            {"stopped_early", rep.stopped_early},
            {"final_loss", rep.log.empty() ? 0.0 : rep.log.back().loss}});
    } else if (*cmd_ex) {
      MelConfig mel_cfg;
      auto sys = load_system(ex_cotatron, ex_vc, &mel_cfg);
      Manifest m = load_manifest(ex_manifest);
      m.check();
      std::vector<FeatureRecord> records(static_cast<std::size_t>(m.size()));
      parallel_for(m.size(), ex.workers, [&](std::int64_t i) {
        NoGrad ng;
        const Utterance& u = m.utterances[static_cast<std::size_t>(i)];
        Tensor mel = mel_spectrogram(load_audio(u.audio_path), mel_cfg);
        auto ids = tokenize(u.transcript, sys->symbols()).seq.ids;
        std::int64_t T = mel.dim(0);

        Tensor a = extract_alignment(mel, ids, sys->cotatron);
        TextEncoding te = sys->cotatron.encode_text({ids}, false, nullptr);
        std::int64_t N = te.enc->val.dim(1), E = te.enc->val.dim(2);
        Tensor enc({N, E});
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t e = 0; e < E; ++e) enc.at(n, e) = te.enc->val.at(0, n, e);

        Tensor mel3({1, T, mel.dim(1)});
        std::copy(mel.data.begin(), mel.data.end(), mel3.data.begin());
        Var r = sys->residual(mel3, {T});

        FeatureRecord rec;
        rec.manifest_row = static_cast<std::uint32_t>(i);
        rec.linguistic = linguistic_features(a, enc);
        rec.residual = Tensor({T, 1});
        for (std::int64_t t = 0; t < T; ++t) rec.residual.at(t, 0) = r->val.at(0, t, 0);
        records[static_cast<std::size_t>(i)] = std::move(rec);
      });
      fs::create_directories(ex.out);
      save_features(records, ex.out + "/features.fea");
      save_manifest(m, ex.out + "/features.manifest.tsv");
      emit({{"records", records.size()},
            {"archive", ex.out + "/features.fea"},
            {"manifest", ex.out + "/features.manifest.tsv"}});
    } else if (*cmd_cv) {
      MelConfig mel_cfg;
      auto sys = load_system(cv_cotatron, cv_vc, &mel_cfg);
      ConvertFileOutputs out =
          convert_file(*sys, cv_audio, cv_text, cv_target, cv.out, cv_wav_iters, mel_cfg);
      json line = {{"mel", out.mel_path},
                   {"metadata", out.json_path},
                   {"frames", out.result.mel.dim(0)},
                   {"mse_vs_source", out.result.mse_vs_source}};
      if (!out.wav_path.empty()) line["wav"] = out.wav_path;
      emit(line);
    } else if (*cmd_sca) {
      json conf = load_config(ev_sca.config_path);
      MelConfig mel_cfg = mel_from_config(conf);
      Manifest train_m = load_manifest(sca_train);
      Manifest test_m = load_manifest(sca_test);
      auto speakers = speakers_of(train_m);
      COTA_CHECK(speakers.size() >= 2, "classifier needs at least two speakers");

      auto mels_of = [&](const Manifest& m, std::vector<Tensor>* mels,
                         std::vector<std::int64_t>* labels) {
        mels->resize(static_cast<std::size_t>(m.size()));
        labels->resize(static_cast<std::size_t>(m.size()));
        parallel_for(m.size(), ev_sca.workers, [&](std::int64_t i) {
          const Utterance& u = m.utterances[static_cast<std::size_t>(i)];
          (*mels)[static_cast<std::size_t>(i)] =
              mel_spectrogram(load_audio(u.audio_path), mel_cfg);
          (*labels)[static_cast<std::size_t>(i)] = speaker_index(speakers, u.speaker_id);
        });
      };
      std::vector<Tensor> train_mels, test_mels;
      std::vector<std::int64_t> train_y, test_y;
      mels_of(train_m, &train_mels, &train_y);
      mels_of(test_m, &test_mels, &test_y);

      auto res = train_sca_classifier(train_mels, train_y, test_mels, test_y,
                                      static_cast<std::int64_t>(speakers.size()),
                                      sca_coeffs, ev_sca.seed);
      std::vector<MetricReport> reports;
      MetricReport genuine = sca(res.classifier, test_mels, test_y);
      genuine.metric = "sca_genuine";
      reports.push_back(genuine);

      json line = {{"train_accuracy", res.train_accuracy},
                   {"test_accuracy", res.test_accuracy}};
      if (!sca_converted.empty()) {
        std::vector<Tensor> conv_mels;
        std::vector<std::int64_t> conv_y;
        std::vector<fs::path> metas;
        for (const auto& e : fs::directory_iterator(sca_converted))
          if (e.path().extension() == ".json") metas.push_back(e.path());
        std::sort(metas.begin(), metas.end());
        COTA_CHECK(!metas.empty(), "no converted .json metadata under ", sca_converted);
        for (const auto& meta : metas) {
          json j = json::parse(read_text(meta.string()));
          conv_mels.push_back(load_mel(fs::path(meta).replace_extension(".mel").string()));
          conv_y.push_back(
              speaker_index(speakers, j.at("target_speaker").get<std::string>()));
        }
        MetricReport converted = sca(res.classifier, conv_mels, conv_y);
        reports.push_back(converted);
        line["converted_sca"] = converted.value;
        line["converted_n"] = converted.n_samples;
      }
      fs::create_directories(ev_sca.out);
      write_metric_jsonl(reports, ev_sca.out + "/metrics.jsonl");
      write_text(ev_sca.out + "/metrics.md", render_metrics_markdown(reports));
      line["out"] = ev_sca.out;
      emit(line);
    } else if (*cmd_vde) {
      Waveform src = load_audio(vde_source);
      Waveform conv = load_audio(vde_converted);
      json conf = load_config(ev_vde.config_path);
      VdeResult r = vde(src, conv, vde_threshold, mel_from_config(conf));
      fs::create_directories(ev_vde.out);
      write_metric_jsonl({r.report}, ev_vde.out + "/metrics.jsonl");
      write_text(ev_vde.out + "/metrics.md", render_metrics_markdown({r.report}));
      emit({{"vde", r.report.value},
            {"frames", r.report.n_samples},
            {"truncated", r.truncated},
            {"out", ev_vde.out}});
    } else if (*cmd_pr) {
      json conf = load_config(ev_pr.config_path);
      MelConfig mel_cfg = mel_from_config(conf);
      COTA_CHECK(pr_kind == "L" || pr_kind == "LR" || pr_kind == "M",
                 "--kind must be L, LR, or M, got ", pr_kind);
      Manifest m = load_manifest(pr_manifest);
      m.check();
      auto speakers = speakers_of(m);
      auto records = load_features(pr_features);
      COTA_CHECK(static_cast<std::int64_t>(records.size()) == m.size(),
                 "feature archive rows (", records.size(),
                 ") do not match the manifest (", m.size(), ")");

      ProbeData all;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const Utterance& u = m.utterances[i];
        Tensor f;
        if (pr_kind == "L") {
          f = records[i].linguistic;
        } else if (pr_kind == "LR") {
          const Tensor& L = records[i].linguistic;
          std::int64_t T = L.dim(0), E = L.dim(1);
          f = Tensor({T, E + 1});
          for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t e = 0; e < E; ++e) f.at(t, e) = L.at(t, e);
            f.at(t, E) = records[i].residual.at(t, 0);
          }
        } else {
          f = mel_spectrogram(load_audio(u.audio_path), mel_cfg);
        }
        all.features.push_back(std::move(f));
        all.labels.push_back(speaker_index(speakers, u.speaker_id));
      }

      std::vector<std::size_t> order(all.features.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng(ev_pr.seed).stream("probe-split").shuffle(order);
      ProbeData train, val, test;
      for (std::size_t r = 0; r < order.size(); ++r) {
        ProbeData* dst = r < order.size() * 7 / 10
                             ? &train
                             : (r < order.size() * 17 / 20 ? &val : &test);
        dst->features.push_back(all.features[order[r]]);
        dst->labels.push_back(all.labels[order[r]]);
      }

      ProbeConfig pc;
      pc.channels = cfg<std::int64_t>(conf, "probe", "channels", pc.channels);
      pc.hidden = cfg<std::int64_t>(conf, "probe", "hidden", pc.hidden);
      pc.max_epochs = cfg(conf, "probe", "max_epochs", pc.max_epochs);
      pc.lr = cfg(conf, "probe", "lr", pc.lr);
      pc.batch_size = cfg<std::int64_t>(conf, "probe", "batch_size", pc.batch_size);
      pc.seed = ev_pr.seed;
      MetricReport r = disentanglement_probe(
          train, val, test, static_cast<std::int64_t>(speakers.size()), pc);
      r.metric = "probe_" + pr_kind;
      fs::create_directories(ev_pr.out);
      write_metric_jsonl({r}, ev_pr.out + "/metrics.jsonl");
      write_text(ev_pr.out + "/metrics.md", render_metrics_markdown({r}));
      emit({{"kind", pr_kind},
            {"accuracy", r.value},
            {"test_samples", r.n_samples},
            {"chance", 1.0 / static_cast<double>(speakers.size())},
            {"out", ev_pr.out}});
    } else if (*cmd_pl) {
      CotatronBundle base = load_cotatron_bundle(pl_cotatron);
      Tensor mel = mel_spectrogram(load_audio(pl_audio), base.mel_cfg);
      auto ids = tokenize(pl_text, base.table).seq.ids;
      Tensor a = extract_alignment(mel, ids, *base.model);
      fs::create_directories(pl.out);
      std::string png = pl.out + "/alignment.png";
      write_alignment_png(a, png, pl_cell);
      emit({{"png", png}, {"frames", a.dim(0)}, {"symbols", a.dim(1)}});
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "%s\n",
                 json({{"error", "validation"}, {"message", e.what()}}).dump().c_str());
    return 1;
  } catch (const LookupError& e) {
    std::fprintf(stderr, "%s\n",
                 json({{"error", "lookup"}, {"message", e.what()}}).dump().c_str());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "%s\n",
                 json({{"error", "io"}, {"message", e.what()}}).dump().c_str());
    return 1;
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "%s\n",
                 json({{"error", "train"}, {"message", e.what()}}).dump().c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n",
                 json({{"error", "internal"}, {"message", e.what()}}).dump().c_str());
    return 1;
  }
  return 0;
}
