// Copyright 2026 The cgmmse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Single entry point: synth-data | train | enhance | evaluate | sparsify.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// abort.

#ifndef CGMMSE_CLI_HPP
#define CGMMSE_CLI_HPP

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgmmse/config.hpp"
#include "cgmmse/data.hpp"
#include "cgmmse/eval.hpp"
#include "cgmmse/net.hpp"
#include "cgmmse/posterior.hpp"
#include "cgmmse/spectrogram_io.hpp"
#include "cgmmse/train.hpp"

namespace cgmmse::cli {

namespace detail {

struct CommonParams {
  int sample_rate;
  std::size_t frame_len;
  std::size_t hop_len;
  std::uint64_t seed;
  std::string out_dir;
  std::size_t threads;
};

inline CommonParams common_params(const Config& cfg) {
  CommonParams p;
  p.sample_rate = static_cast<int>(cfg.get_size("sample_rate", 16000));
  p.frame_len = cfg.get_size("frame_len", 512);
  p.hop_len = cfg.get_size("hop_len", 256);
  p.seed = cfg.get_u64("seed", 0);
  p.out_dir = cfg.get_str("out_dir", "out");
  p.threads = cfg.get_size("threads", 0);
  return p;
}

inline std::vector<std::string> config_echo_lines(const Config& cfg) {
  std::vector<std::string> out;
  for (const auto& kv : cfg.echo()) out.push_back("config." + kv);
  return out;
}

inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return fnv1a(buf);
}

/// Small per-command provenance record for the non-training commands.
inline void write_command_manifest(const std::string& out_dir,
                                   const std::string& command,
                                   const Config& cfg,
                                   const std::vector<std::string>& outputs) {
  std::filesystem::create_directories(out_dir);
  train::RunManifest m;
  m.add("command", command);
  for (const auto& line : config_echo_lines(cfg)) m.lines.push_back(line);
  for (const auto& o : outputs) m.add("output", o);
  m.write(out_dir + "/" + command + ".manifest");
}

inline int run_synth_data(const Config& cfg) {
  const CommonParams common = common_params(cfg);
  data::CorpusConfig corpus;
  corpus.n_train = cfg.get_size("n_train", corpus.n_train);
  corpus.n_val = cfg.get_size("n_val", corpus.n_val);
  corpus.n_test = cfg.get_size("n_test", corpus.n_test);
  corpus.duration_s = cfg.get_double("duration_s", corpus.duration_s);
  corpus.sample_rate = common.sample_rate;
  corpus.train_snr_lo = cfg.get_double("train_snr_lo", corpus.train_snr_lo);
  corpus.train_snr_hi = cfg.get_double("train_snr_hi", corpus.train_snr_hi);
  corpus.test_snr_grid =
      cfg.get_double_list("test_snr_grid", corpus.test_snr_grid);
  corpus.master_seed = common.seed;
  const data::Manifest manifest = data::build_corpus(corpus, common.out_dir);
  write_command_manifest(common.out_dir, "synth-data", cfg,
                         {common.out_dir + "/manifest.txt"});
  std::cout << "wrote " << manifest.rows.size() << " utterances to "
            << common.out_dir << '\n';
  return 0;
}

inline train::TrainConfig train_config_from(const Config& cfg,
                                            const CommonParams& common) {
  train::TrainConfig tc;
  tc.lr_init = cfg.get_double("lr_init", tc.lr_init);
  tc.plateau_patience = cfg.get_size("plateau_patience", tc.plateau_patience);
  tc.plateau_factor = cfg.get_double("plateau_factor", tc.plateau_factor);
  tc.early_stop_patience =
      cfg.get_size("early_stop_patience", tc.early_stop_patience);
  tc.max_epochs = cfg.get_size("max_epochs", tc.max_epochs);
  tc.batch_size = cfg.get_size("batch_size", tc.batch_size);
  tc.weight_decay = cfg.get_double("weight_decay", tc.weight_decay);
  tc.beta = cfg.get_double("beta", tc.beta);
  tc.finetune_lr = cfg.get_double("finetune_lr", tc.finetune_lr);
  tc.grad_clip_norm = cfg.get_double("grad_clip_norm", tc.grad_clip_norm);
  tc.seed = common.seed;
  tc.threads = common.threads;
  tc.context = cfg.get_size("context", tc.context);
  tc.hidden_dims = cfg.get_size_list("hidden_dims", tc.hidden_dims);
  tc.wta.total_epochs = cfg.get_size("wta_total_epochs", tc.wta.total_epochs);
  tc.wta.k_halve_every =
      cfg.get_size("wta_k_halve_every", tc.wta.k_halve_every);
  tc.wta.lr_decay_start =
      cfg.get_size("wta_lr_decay_start", tc.wta.lr_decay_start);
  tc.wta.lr_halve_every =
      cfg.get_size("wta_lr_halve_every", tc.wta.lr_halve_every);
  tc.wta.lr_floor = cfg.get_double("wta_lr_floor", tc.wta.lr_floor);
  return tc;
}

inline int run_train(const Config& cfg) {
  const CommonParams common = common_params(cfg);
  const std::string model = cfg.require_str("model");
  const std::string manifest_path = cfg.require_str("manifest");
  const data::Manifest manifest = data::Manifest::read(manifest_path);
  const train::TrainConfig tc = train_config_from(cfg, common);

  train::Dataset dataset;
  dataset.train = train::load_split(manifest, "train", common.frame_len,
                                    common.hop_len, common.sample_rate);
  dataset.val = train::load_split(manifest, "val", common.frame_len,
                                  common.hop_len, common.sample_rate);

  train::TrainIo io;
  io.out_dir = common.out_dir;
  io.run_name = cfg.get_str("run_name", model);
  io.manifest_extra = config_echo_lines(cfg);
  io.manifest_extra.push_back("dataset_hash=" +
                              std::to_string(file_hash(manifest_path)));

  train::TrainResult result;
  if (model == "wf") {
    result = train::train_baseline(tc, dataset, io);
  } else if (model == "cgmm1") {
    result = train::train_cgmm(tc, dataset, 1, false, nullptr, io);
  } else if (model == "cgmm4") {
    result = train::train_cgmm(tc, dataset, 4, false, nullptr, io);
  } else if (model == "cgmm4-cons") {
    result = train::train_cgmm(tc, dataset, 4, true, nullptr, io);
  } else if (model == "cgmm4-pre") {
    train::TrainIo wta_io = io;
    wta_io.run_name = io.run_name + "_wta";
    const train::TrainResult pre = train::pretrain_wta(tc, dataset, 4, wta_io);
    result = train::train_cgmm(tc, dataset, 4, false, &pre.best, io);
  } else {
    throw std::invalid_argument(
        "unknown model '" + model +
        "' (expected wf | cgmm1 | cgmm4 | cgmm4-cons | cgmm4-pre)");
  }
  std::cout << "model " << model << ": best val loss "
            << format_double(result.best_val) << " at epoch "
            << result.best_epoch << ", checkpoint " << result.checkpoint_path
            << '\n';
  return 0;
}

inline int run_enhance(const Config& cfg) {
  const CommonParams common = common_params(cfg);
  const std::string ckpt_path = cfg.require_str("checkpoint");
  const std::string input_path = cfg.require_str("input_wav");
  const net::NetParams params = net::load_checkpoint(ckpt_path);
  if (params.cfg.num_bins != common.frame_len / 2 + 1)
    throw DataError("checkpoint expects " +
                    std::to_string(params.cfg.num_bins) +
                    " bins, frame_len " + std::to_string(common.frame_len) +
                    " gives " + std::to_string(common.frame_len / 2 + 1));

  const dsp::Waveform noisy = dsp::read_wav(input_path, common.sample_rate);
  const dsp::ComplexSpectrogram x =
      dsp::stft(noisy, common.frame_len, common.hop_len);
  const post::PosteriorParams p = net::forward(params, x);
  const post::UncertaintyMaps maps = post::decompose_uncertainty(p, x);

  dsp::ComplexSpectrogram mean = x;
  mean.coefficients.assign(maps.mean.begin(), maps.mean.end());
  dsp::Waveform enhanced = dsp::istft(mean);
  enhanced.samples.resize(noisy.samples.size());

  std::filesystem::create_directories(common.out_dir);
  const std::string stem =
      std::filesystem::path(input_path).stem().string();
  const std::string out_wav = cfg.get_str(
      "output_wav", common.out_dir + "/" + stem + "_enhanced.wav");
  dsp::write_wav(out_wav, enhanced);
  const std::string unc_csv = common.out_dir + "/" + stem + "_uncertainty.csv";
  post::write_uncertainty_csv(unc_csv, maps);
  const std::string mean_dump = common.out_dir + "/" + stem + "_mean.spec";
  dsp::write_spectrogram_dump(mean_dump, mean);
  write_command_manifest(common.out_dir, "enhance", cfg,
                         {out_wav, unc_csv, mean_dump});
  std::cout << "enhanced " << input_path << " -> " << out_wav << '\n';
  return 0;
}

inline int run_evaluate(const Config& cfg) {
  const CommonParams common = common_params(cfg);
  const net::NetParams params =
      net::load_checkpoint(cfg.require_str("checkpoint"));
  const data::Manifest manifest =
      data::Manifest::read(cfg.require_str("manifest"));
  const std::string split = cfg.get_str("split", "test");
  const eval::MetricReport report = eval::evaluate_checkpoint(
      params, manifest, split, common.out_dir, common.frame_len,
      common.hop_len, common.sample_rate, common.threads);
  write_command_manifest(common.out_dir, "evaluate", cfg,
                         {common.out_dir + "/metrics.csv",
                          common.out_dir + "/metrics_summary.csv",
                          common.out_dir + "/sparsification.csv"});
  const eval::Aggregate sdr_out =
      eval::aggregate(report.column(&eval::UtteranceMetrics::si_sdr_out));
  std::cout << "evaluated " << report.rows.size() << " utterances, mean SI-SDR "
            << format_double(sdr_out.mean) << " dB\n";
  return 0;
}

inline int run_sparsify(const Config& cfg) {
  const CommonParams common = common_params(cfg);
  const std::string path = cfg.require_str("heatmap");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open heatmap csv " + path);
  std::string line;
  if (!std::getline(in, line) || line != "f,t,error,aleatoric,epistemic")
    throw DataError("unexpected heatmap header in " + path);
  struct Cell { std::size_t f, t; double err, alea, epis; };
  std::vector<Cell> cells;
  std::size_t max_f = 0, max_t = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Cell c;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    if (cols.size() != 5)
      throw DataError("malformed heatmap row in " + path + ": " + line);
    c.f = std::stoull(cols[0]);
    c.t = std::stoull(cols[1]);
    c.err = std::stod(cols[2]);
    c.alea = std::stod(cols[3]);
    c.epis = std::stod(cols[4]);
    max_f = std::max(max_f, c.f);
    max_t = std::max(max_t, c.t);
    cells.push_back(c);
  }
  if (cells.empty()) throw DataError("empty heatmap csv " + path);
  const std::size_t num_t = max_t + 1;
  const std::size_t n = (max_f + 1) * num_t;
  if (cells.size() != n)
    throw DataError("heatmap csv " + path + " is not a dense (f, t) grid");
  std::vector<double> err(n), alea(n), epis(n), total(n);
  for (const Cell& c : cells) {
    const std::size_t i = c.f * num_t + c.t;
    err[i] = c.err;
    alea[i] = c.alea;
    epis[i] = c.epis;
    total[i] = c.alea + c.epis;
  }

  const eval::SparsificationCurve oracle =
      eval::sparsify(err, {}, eval::RankKind::oracle);
  const eval::SparsificationCurve random_curve =
      eval::sparsify(err, {}, eval::RankKind::random, common.seed);
  std::map<std::string, std::vector<double>> curves;
  curves["aleatoric"] =
      eval::sparsify(err, alea, eval::RankKind::predicted).rmse;
  curves["epistemic"] =
      eval::sparsify(err, epis, eval::RankKind::predicted).rmse;
  curves["total"] = eval::sparsify(err, total, eval::RankKind::predicted).rmse;

  std::filesystem::create_directories(common.out_dir);
  const std::string out_csv = common.out_dir + "/sparsification.csv";
  eval::detail::write_curve_csv(out_csv, eval::sparsification_fractions(),
                                curves, oracle.rmse, random_curve.rmse);
  write_command_manifest(common.out_dir, "sparsify", cfg, {out_csv});
  std::cout << "wrote " << out_csv << '\n';
  return 0;
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  CLI::App app{"CGMM speech enhancement with predictive uncertainty"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string seed_str;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value lines)");
    sub->add_option("--set", overrides, "override a config key (key=value)")
        ->take_all();
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    sub->add_option("--seed", seed_str, "seed (overrides seed)");
  };
  CLI::App* synth = app.add_subcommand("synth-data", "generate the corpus");
  CLI::App* tr = app.add_subcommand("train", "train a model");
  CLI::App* enh = app.add_subcommand("enhance", "enhance one WAV file");
  CLI::App* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
  CLI::App* sp = app.add_subcommand("sparsify", "curves from a heatmap CSV");
  for (CLI::App* sub : {synth, tr, enh, ev, sp}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    Config cfg;
    if (!config_path.empty()) cfg = parse_config_file(config_path);
    for (const auto& kv : overrides) apply_override(cfg, kv);
    if (!out_dir.empty()) cfg.set("out_dir", out_dir);
    if (!seed_str.empty()) cfg.set("seed", seed_str);

    if (synth->parsed()) return detail::run_synth_data(cfg);
    if (tr->parsed()) return detail::run_train(cfg);
    if (enh->parsed()) return detail::run_enhance(cfg);
    if (ev->parsed()) return detail::run_evaluate(cfg);
    if (sp->parsed()) return detail::run_sparsify(cfg);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cgmmse::cli

#endif  // CGMMSE_CLI_HPP
