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
// Training pipeline: AdamW updates, plateau LR halving with early
// stopping, winner-takes-all pre-training with the K-halving schedule,
// and fine-tuning from a pretrained checkpoint. Runs are deterministic
// for a fixed seed: data order, per-utterance gradients and the
// accumulation order are all fixed; worker threads only fill
// pre-assigned slots.

#ifndef CGMMSE_TRAIN_HPP
#define CGMMSE_TRAIN_HPP

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "cgmmse/data.hpp"
#include "cgmmse/losses.hpp"
#include "cgmmse/net.hpp"
#include "cgmmse/wav.hpp"

namespace cgmmse::train {

struct WtaSchedule {
  std::size_t total_epochs = 24;   // full-scale reference: 125
  std::size_t k_halve_every = 6;   // full-scale reference: 25
  std::size_t lr_decay_start = 125;  // lr halving begins after this epoch
  std::size_t lr_halve_every = 5;
  double lr_floor = 1e-6;
};

struct TrainConfig {
  double lr_init = 1e-3;
  std::size_t plateau_patience = 3;
  double plateau_factor = 0.5;
  std::size_t early_stop_patience = 10;
  std::size_t max_epochs = 48;
  std::size_t batch_size = 8;
  double weight_decay = 5e-4;
  double beta = 0.5;       // gradient-modification exponent, all components
  double finetune_lr = 1e-5;
  double grad_clip_norm = 5.0;  // used only when variances are trainable
  std::uint64_t seed = 0;
  std::size_t threads = 0;      // 0 = hardware concurrency
  WtaSchedule wta;
  // network body shared by every model
  std::size_t context = 3;
  std::vector<std::size_t> hidden_dims{128, 128};

  void validate() const {
    if (!(lr_init > 0.0) || !(finetune_lr > 0.0) ||
        !(plateau_factor > 0.0) || !(wta.lr_floor > 0.0))
      throw std::invalid_argument("TrainConfig: rates must be positive");
    if (batch_size == 0 || max_epochs == 0 || wta.total_epochs == 0 ||
        wta.k_halve_every == 0 || wta.lr_halve_every == 0)
      throw std::invalid_argument("TrainConfig: counts must be positive");
    if (!(beta >= 0.0 && beta <= 1.0))
      throw std::invalid_argument("TrainConfig: beta outside [0, 1]");
  }
};

struct Utterance {
  std::string id;
  double snr_db = 0.0;
  dsp::ComplexSpectrogram noisy;
  dsp::ComplexSpectrogram clean;
  net::Features feat;
};

struct Dataset {
  std::vector<Utterance> train;
  std::vector<Utterance> val;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  std::size_t wta_k = 0;  // 0 when not WTA
};

/// Append-only provenance record, line-delimited key=value text.
/// Lines starting with "walltime" are excluded from reproducibility
/// comparisons; everything else is bit-stable for a fixed config+seed.
struct RunManifest {
  std::vector<std::string> lines;

  void add(const std::string& key, const std::string& value) {
    lines.push_back(key + "=" + value);
  }
  void add(const std::string& key, double value) {
    add(key, format_double(value));
  }
  void add(const std::string& key, std::size_t value) {
    add(key, std::to_string(value));
  }
  void add_epoch(const EpochRecord& r) {
    std::string line = "epoch=" + std::to_string(r.epoch) +
                       " train_loss=" + format_double(r.train_loss) +
                       " val_loss=" + format_double(r.val_loss) +
                       " lr=" + format_double(r.lr);
    if (r.wta_k > 0) line += " k=" + std::to_string(r.wta_k);
    lines.push_back(line);
  }
  void write(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("RunManifest: cannot open " + path);
    for (const auto& l : lines) os << l << '\n';
  }
};

struct TrainIo {
  std::string out_dir;   // empty: nothing written
  std::string run_name = "run";
  // Extra provenance lines (config echo, dataset hash) prepended to the
  // run manifest by the caller.
  std::vector<std::string> manifest_extra;
};

struct TrainResult {
  net::NetParams best;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::vector<EpochRecord> history;
  RunManifest manifest;
  std::string checkpoint_path;
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
};

/// One AdamW update (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected,
/// decoupled weight decay). Rejects non-finite gradients.
inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& grads, AdamState& state,
                      double lr, double weight_decay) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state shape mismatch");
  for (double g : grads)
    if (!std::isfinite(g))
      throw NumericError("adam_step: non-finite gradient");
  ++state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = kBeta1 * state.m[i] + (1.0 - kBeta1) * grads[i];
    state.v[i] = kBeta2 * state.v[i] + (1.0 - kBeta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -=
        lr * (m_hat / (std::sqrt(v_hat) + kEps) + weight_decay * params[i]);
  }
}

namespace detail {

/// Index-slot parallelism: fn(i) writes only slot i, so scheduling cannot
/// change results.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t num_threads, Fn&& fn) {
  if (num_threads == 0) num_threads = std::thread::hardware_concurrency();
  if (num_threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  num_threads = std::min(num_threads, n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
      fn(i);
  };
  std::vector<std::thread> pool;
  pool.reserve(num_threads - 1);
  for (std::size_t w = 1; w < num_threads; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

inline void fisher_yates(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
}

enum class LossKind { mse, cgmm_beta, wta };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::cgmm_beta: return "cgmm_nll_beta";
    case LossKind::wta: return "wta";
  }
  return "?";
}

inline double utterance_loss(const net::NetParams& params, const Utterance& u,
                             LossKind kind, const loss::GradModConfig& mod,
                             std::size_t wta_k, std::vector<double>* grad_out) {
  net::ForwardTape tape;
  const post::PosteriorParams p =
      net::forward(params, u.feat, grad_out ? &tape : nullptr);
  loss::LossGrad g;
  switch (kind) {
    case LossKind::mse:
      g = loss::mse_loss(p, u.clean, u.noisy);
      break;
    case LossKind::cgmm_beta:
      g = loss::cgmm_nll_beta(p, u.clean, u.noisy, mod);
      break;
    case LossKind::wta:
      g = loss::wta_loss(p, u.clean, u.noisy, wta_k).grad;
      break;
  }
  if (grad_out) *grad_out = net::backward(params, tape, g);
  return g.value;
}

struct RunSpec {
  LossKind kind = LossKind::mse;
  std::size_t num_components = 1;
  bool constant_variance = false;
  const net::NetParams* init = nullptr;  // pretrained body + mask head
  std::string model_name;
};

inline TrainResult run_training(const TrainConfig& cfg, const Dataset& data,
                                const RunSpec& spec, const TrainIo& io) {
  cfg.validate();
  if (data.train.empty() || data.val.empty())
    throw DataError("run_training: empty train or validation split");
  if (!io.out_dir.empty()) std::filesystem::create_directories(io.out_dir);

  const auto t_start = std::chrono::steady_clock::now();
  net::NetConfig netcfg;
  netcfg.context = cfg.context;
  netcfg.hidden_dims = cfg.hidden_dims;
  netcfg.num_components = spec.num_components;
  netcfg.num_bins = data.train.front().noisy.num_bins;
  netcfg.constant_variance = spec.constant_variance;

  net::NetParams params = net::init_params(netcfg, cfg.seed);
  if (spec.init) net::transplant_body_and_mask_head(params, *spec.init);

  const loss::GradModConfig mod =
      loss::GradModConfig::uniform(spec.num_components, cfg.beta);
  const bool is_wta = spec.kind == LossKind::wta;
  const bool clip_active = spec.kind == LossKind::cgmm_beta &&
                           !spec.constant_variance && cfg.grad_clip_norm > 0.0;
  const std::size_t num_epochs = is_wta ? cfg.wta.total_epochs : cfg.max_epochs;
  double lr = spec.init ? cfg.finetune_lr : cfg.lr_init;

  if (is_wta) {
    // The K schedule must reach a single winner before training ends.
    std::size_t k = spec.num_components;
    const std::size_t halvings = (cfg.wta.total_epochs - 1) / cfg.wta.k_halve_every;
    if ((k >> halvings) > 1)
      throw std::invalid_argument(
          "TrainConfig: WTA schedule does not reach K=1 within total_epochs");
  }

  TrainResult res;
  for (const auto& line : io.manifest_extra) res.manifest.lines.push_back(line);
  res.manifest.add("model", spec.model_name);
  res.manifest.add("loss", std::string(loss_name(spec.kind)));
  res.manifest.add("seed", static_cast<std::size_t>(cfg.seed));
  res.manifest.add("num_components", spec.num_components);
  res.manifest.add("constant_variance",
                   std::string(spec.constant_variance ? "1" : "0"));
  res.manifest.add("num_bins", netcfg.num_bins);
  res.manifest.add("context", netcfg.context);
  {
    std::string dims;
    for (std::size_t i = 0; i < netcfg.hidden_dims.size(); ++i)
      dims += (i ? "," : "") + std::to_string(netcfg.hidden_dims[i]);
    res.manifest.add("hidden_dims", dims);
  }
  res.manifest.add("param_count", params.theta.size());
  res.manifest.add("lr_init", lr);
  res.manifest.add("weight_decay", cfg.weight_decay);
  res.manifest.add("beta", cfg.beta);
  res.manifest.add("batch_size", cfg.batch_size);
  res.manifest.add("train_utterances", data.train.size());
  res.manifest.add("val_utterances", data.val.size());
  res.manifest.add("pretrained_init", std::string(spec.init ? "1" : "0"));

  const std::string loss_csv =
      io.out_dir.empty() ? ""
                         : io.out_dir + "/" + io.run_name + "_losses.csv";

  AdamState adam;
  net::NetParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t plateau_ctr = 0, stop_ctr = 0;

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto write_outputs = [&](const std::string& status) {
    res.manifest.add("status", status);
    res.manifest.add("best_epoch", best_epoch);
    res.manifest.add("best_val_loss", best_val);
    if (!io.out_dir.empty()) {
      std::filesystem::create_directories(io.out_dir);
      const std::string ckpt = io.out_dir + "/" + io.run_name + ".ckpt";
      net::CheckpointMeta meta;
      meta.seed = cfg.seed;
      meta.epoch = best_epoch;
      meta.loss = best_val;
      // atomic replace: write to temp, then rename
      const std::string tmp = ckpt + ".tmp";
      net::save_checkpoint(tmp, best, meta);
      std::filesystem::rename(tmp, ckpt);
      res.checkpoint_path = ckpt;
      res.manifest.add("checkpoint", ckpt);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        t_start)
              .count();
      res.manifest.add("walltime_s", wall);
      res.manifest.write(io.out_dir + "/" + io.run_name + ".manifest");
    }
  };

  try {
    for (std::size_t epoch = 1; epoch <= num_epochs; ++epoch) {
      std::size_t wta_k = 0;
      if (is_wta) {
        const std::size_t halvings = (epoch - 1) / cfg.wta.k_halve_every;
        wta_k = std::max<std::size_t>(spec.num_components >> halvings, 1);
        if (epoch > cfg.wta.lr_decay_start) {
          const std::size_t n = (epoch - cfg.wta.lr_decay_start +
                                 cfg.wta.lr_halve_every - 1) /
                                cfg.wta.lr_halve_every;
          lr = std::max(cfg.lr_init * std::pow(0.5, static_cast<double>(n)),
                        cfg.wta.lr_floor);
        }
      }

      Rng shuffle_rng(mix_seed(cfg.seed, epoch));
      detail::fisher_yates(order, shuffle_rng);

      double train_loss_sum = 0.0;
      std::vector<std::vector<double>> batch_grads(cfg.batch_size);
      std::vector<double> batch_losses(cfg.batch_size);
      for (std::size_t start = 0; start < order.size();
           start += cfg.batch_size) {
        const std::size_t bsz =
            std::min(cfg.batch_size, order.size() - start);
        parallel_for(bsz, cfg.threads, [&](std::size_t b) {
          batch_losses[b] =
              utterance_loss(params, data.train[order[start + b]], spec.kind,
                             mod, wta_k, &batch_grads[b]);
        });
        std::vector<double> grad(params.theta.size(), 0.0);
        for (std::size_t b = 0; b < bsz; ++b) {
          train_loss_sum += batch_losses[b];
          for (std::size_t i = 0; i < grad.size(); ++i)
            grad[i] += batch_grads[b][i];
        }
        const double inv_b = 1.0 / static_cast<double>(bsz);
        for (double& g : grad) g *= inv_b;
        if (clip_active) {
          double norm_sq = 0.0;
          for (double g : grad) norm_sq += g * g;
          const double norm = std::sqrt(norm_sq);
          if (norm > cfg.grad_clip_norm) {
            const double scale = cfg.grad_clip_norm / norm;
            for (double& g : grad) g *= scale;
          }
        }
        adam_step(params.theta, grad, adam, lr, cfg.weight_decay);
      }
      const double train_loss =
          train_loss_sum / static_cast<double>(order.size());
      if (!std::isfinite(train_loss))
        throw NumericError("training loss diverged (NaN/inf) at epoch " +
                           std::to_string(epoch));

      std::vector<double> val_losses(data.val.size());
      parallel_for(data.val.size(), cfg.threads, [&](std::size_t i) {
        val_losses[i] =
            utterance_loss(params, data.val[i], spec.kind, mod, wta_k, nullptr);
      });
      double val_loss = 0.0;
      for (double v : val_losses) val_loss += v;
      val_loss /= static_cast<double>(data.val.size());

      EpochRecord rec{epoch, train_loss, val_loss, lr, wta_k};
      res.history.push_back(rec);
      res.manifest.add_epoch(rec);
      if (!loss_csv.empty()) {
        const bool header = epoch == 1;
        loss::append_loss_csv(loss_csv, epoch, "train", loss_name(spec.kind),
                              train_loss, header);
        loss::append_loss_csv(loss_csv, epoch, "val", loss_name(spec.kind),
                              val_loss, false);
      }

      if (is_wta) {
        // No validation-driven stopping for WTA; keep the final weights.
        best = params;
        best_val = val_loss;
        best_epoch = epoch;
        continue;
      }

      const bool improved = val_loss < best_val - 1e-6;
      if (improved) {
        best = params;
        best_val = val_loss;
        best_epoch = epoch;
        plateau_ctr = 0;
        stop_ctr = 0;
      } else {
        ++plateau_ctr;
        ++stop_ctr;
      }
      if (stop_ctr >= cfg.early_stop_patience) break;
      if (plateau_ctr >= cfg.plateau_patience) {
        lr *= cfg.plateau_factor;
        plateau_ctr = 0;
      }
    }
  } catch (const NumericError& e) {
    res.manifest.add("aborted", std::string(e.what()));
    write_outputs("aborted");
    throw NumericError(std::string(e.what()) +
                       (io.out_dir.empty()
                            ? ""
                            : "; see manifest " + io.out_dir + "/" +
                                  io.run_name + ".manifest"));
  }

  res.best = best;
  res.best_epoch = best_epoch;
  res.best_val = best_val;
  write_outputs("ok");
  return res;
}

}  // namespace detail

/// Single Wiener mask trained with the MSE loss.
inline TrainResult train_baseline(const TrainConfig& cfg, const Dataset& data,
                                  const TrainIo& io = {}) {
  detail::RunSpec spec;
  spec.kind = detail::LossKind::mse;
  spec.num_components = 1;
  spec.model_name = "wf";
  return detail::run_training(cfg, data, spec, io);
}

/// Mixture model trained with the beta-weighted NLL. With
/// constant_variance the variances are pinned to 1 and not optimized.
/// An init checkpoint provides body and mask-head weights (variance and
/// weight heads are freshly initialized) and switches to finetune_lr.
inline TrainResult train_cgmm(const TrainConfig& cfg, const Dataset& data,
                              std::size_t num_components,
                              bool constant_variance,
                              const net::NetParams* init = nullptr,
                              const TrainIo& io = {}) {
  detail::RunSpec spec;
  spec.kind = detail::LossKind::cgmm_beta;
  spec.num_components = num_components;
  spec.constant_variance = constant_variance;
  spec.init = init;
  spec.model_name = "cgmm" + std::to_string(num_components) +
                    (constant_variance ? "-cons" : "") +
                    (init ? "-pre" : "");
  return detail::run_training(cfg, data, spec, io);
}

/// Mask-only winner-takes-all pre-training with the K-halving schedule
/// (K starts at L and halves every k_halve_every epochs until 1).
inline TrainResult pretrain_wta(const TrainConfig& cfg, const Dataset& data,
                                std::size_t num_components,
                                const TrainIo& io = {}) {
  if (num_components < 2)
    throw std::invalid_argument("pretrain_wta: requires L >= 2");
  detail::RunSpec spec;
  spec.kind = detail::LossKind::wta;
  spec.num_components = num_components;
  spec.model_name = "wta" + std::to_string(num_components);
  return detail::run_training(cfg, data, spec, io);
}

/// Schedule helper, exposed for tests: winner count at a 1-based epoch.
inline std::size_t wta_k_at_epoch(std::size_t num_components,
                                  std::size_t k_halve_every,
                                  std::size_t epoch) {
  const std::size_t halvings = (epoch - 1) / k_halve_every;
  return std::max<std::size_t>(num_components >> halvings, 1);
}

/// Loads one manifest split as spectrogram pairs with cached features.
inline std::vector<Utterance> load_split(const data::Manifest& manifest,
                                         const std::string& split,
                                         std::size_t frame_len,
                                         std::size_t hop_len,
                                         int sample_rate) {
  std::vector<Utterance> out;
  for (const auto& row : manifest.rows) {
    if (row.split != split) continue;
    Utterance u;
    u.id = row.id;
    u.snr_db = row.spec.snr_db;
    const dsp::Waveform mix = dsp::read_wav(row.mix_path, sample_rate);
    const dsp::Waveform clean = dsp::read_wav(row.clean_path, sample_rate);
    u.noisy = dsp::stft(mix, frame_len, hop_len);
    u.clean = dsp::stft(clean, frame_len, hop_len);
    u.feat = net::make_features(u.noisy);
    out.push_back(std::move(u));
  }
  if (out.empty())
    throw DataError("load_split: no rows with split '" + split + "'");
  return out;
}

}  // namespace cgmmse::train

#endif  // CGMMSE_TRAIN_HPP
