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
// Enhancement metrics (SI-SDR, segmental SNR, spectral RMSE) and
// uncertainty-quality evaluation via sparsification curves: residual RMSE
// versus the fraction of highest-ranked bins removed, compared against
// the oracle ranking by true error.

#ifndef CGMMSE_EVAL_HPP
#define CGMMSE_EVAL_HPP

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "cgmmse/data.hpp"
#include "cgmmse/net.hpp"
#include "cgmmse/posterior.hpp"
#include "cgmmse/train.hpp"

namespace cgmmse::eval {

/// |ref - est| per bin, frequency-major like the spectrogram layout.
inline std::vector<double> spectral_error(const dsp::ComplexSpectrogram& est,
                                          const dsp::ComplexSpectrogram& ref) {
  if (est.num_bins != ref.num_bins || est.num_frames != ref.num_frames)
    throw std::invalid_argument("spectral_error: shape mismatch");
  std::vector<double> err(est.coefficients.size());
  for (std::size_t i = 0; i < err.size(); ++i)
    err[i] = std::abs(ref.coefficients[i] - est.coefficients[i]);
  return err;
}

enum class RankKind { predicted, oracle, random };

struct SparsificationCurve {
  std::vector<double> fractions;  // 0.00, 0.01, ..., 0.99
  std::vector<double> rmse;
  RankKind kind = RankKind::predicted;
};

inline std::vector<double> sparsification_fractions() {
  std::vector<double> q(100);
  for (std::size_t i = 0; i < q.size(); ++i)
    q[i] = static_cast<double>(i) / 100.0;
  return q;
}

/// Removes the q highest-ranked bins for each fraction q and reports the
/// RMSE of the rest. Ranking key: the uncertainty map (predicted), the
/// true error (oracle), or a seeded shuffle (random). Ties break by flat
/// (f, t) index, i.e. lexicographic (f, t).
inline SparsificationCurve sparsify(const std::vector<double>& errors,
                                    const std::vector<double>& uncertainty,
                                    RankKind kind, std::uint64_t seed = 0) {
  const std::size_t n = errors.size();
  if (n == 0) throw std::invalid_argument("sparsify: empty error map");
  if (kind == RankKind::predicted && uncertainty.size() != n)
    throw std::invalid_argument("sparsify: error/uncertainty shape mismatch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (kind == RankKind::random) {
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
  } else {
    const std::vector<double>& key =
        kind == RankKind::oracle ? errors : uncertainty;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  }

  // Prefix sums of squared error in removal order.
  std::vector<double> removed_sq(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    removed_sq[i + 1] = removed_sq[i] + errors[order[i]] * errors[order[i]];
  const double total_sq = removed_sq[n];

  SparsificationCurve curve;
  curve.kind = kind;
  curve.fractions = sparsification_fractions();
  curve.rmse.resize(curve.fractions.size());
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    std::size_t k = static_cast<std::size_t>(
        std::llround(curve.fractions[i] * static_cast<double>(n)));
    k = std::min(k, n - 1);
    const double rest = std::max(total_sq - removed_sq[k], 0.0);
    curve.rmse[i] = std::sqrt(rest / static_cast<double>(n - k));
  }
  return curve;
}

/// Trapezoidal area between a curve and the oracle over the fraction grid.
inline double ause(const SparsificationCurve& predicted,
                   const SparsificationCurve& oracle) {
  if (predicted.fractions != oracle.fractions)
    throw std::invalid_argument("ause: fraction grids differ");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < predicted.fractions.size(); ++i) {
    const double d0 = predicted.rmse[i] - oracle.rmse[i];
    const double d1 = predicted.rmse[i + 1] - oracle.rmse[i + 1];
    area += 0.5 * (d0 + d1) *
            (predicted.fractions[i + 1] - predicted.fractions[i]);
  }
  return area;
}

inline constexpr double kSiSdrCapDb = 60.0;

/// Scale-invariant SDR: project the estimate onto the reference, report
/// 10 log10(target/residual energy), capped at +60 dB.
inline double si_sdr(const dsp::Waveform& est, const dsp::Waveform& ref) {
  if (est.samples.size() != ref.samples.size())
    throw std::invalid_argument("si_sdr: length mismatch");
  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    dot += est.samples[i] * ref.samples[i];
    ref_energy += ref.samples[i] * ref.samples[i];
  }
  if (ref_energy <= 0.0)
    throw std::invalid_argument("si_sdr: zero-energy reference");
  const double alpha = dot / ref_energy;
  double target_energy = 0.0, resid_energy = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    const double target = alpha * ref.samples[i];
    const double resid = est.samples[i] - target;
    target_energy += target * target;
    resid_energy += resid * resid;
  }
  if (resid_energy <= target_energy * 1e-12) return kSiSdrCapDb;
  return std::min(10.0 * std::log10(target_energy / resid_energy),
                  kSiSdrCapDb);
}

/// Segmental SNR: 32 ms non-overlapping frames, per-frame SNR clamped to
/// [-10, 35] dB, averaged over frames whose reference energy is within
/// 40 dB of the loudest frame.
inline double seg_snr(const dsp::Waveform& est, const dsp::Waveform& ref) {
  if (est.samples.size() != ref.samples.size())
    throw std::invalid_argument("seg_snr: length mismatch");
  const std::size_t frame = std::max<std::size_t>(
      static_cast<std::size_t>(ref.sample_rate * 32 / 1000), 1);
  const std::size_t num_frames = ref.samples.size() / frame;
  if (num_frames == 0) throw std::invalid_argument("seg_snr: signal too short");
  std::vector<double> ref_energy(num_frames, 0.0), err_energy(num_frames, 0.0);
  for (std::size_t i = 0; i < num_frames * frame; ++i) {
    const double e = ref.samples[i];
    const double d = est.samples[i] - ref.samples[i];
    ref_energy[i / frame] += e * e;
    err_energy[i / frame] += d * d;
  }
  double peak = 0.0;
  for (double e : ref_energy) peak = std::max(peak, e);
  if (peak <= 0.0) throw std::invalid_argument("seg_snr: silent reference");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < num_frames; ++i) {
    if (ref_energy[i] <= peak * 1e-4) continue;
    const double snr =
        10.0 * std::log10(ref_energy[i] / std::max(err_energy[i], 1e-30));
    acc += std::clamp(snr, -10.0, 35.0);
    ++count;
  }
  return acc / static_cast<double>(std::max<std::size_t>(count, 1));
}

inline double spectral_rmse(const std::vector<double>& errors) {
  double acc = 0.0;
  for (double e : errors) acc += e * e;
  return std::sqrt(acc / static_cast<double>(errors.size()));
}

struct UtteranceMetrics {
  std::string id;
  double snr_db = 0.0;
  double si_sdr_in = 0.0;
  double si_sdr_out = 0.0;
  double seg_snr_db = 0.0;
  double spec_rmse = 0.0;
  double ause_aleatoric = 0.0;
  double ause_epistemic = 0.0;
  double ause_total = 0.0;
  double ause_random = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double ci95_half = 0.0;  // 1.96 * sd / sqrt(n)
  std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = values.size();
  if (a.n == 0) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    const double sd = std::sqrt(ss / static_cast<double>(a.n - 1));
    a.ci95_half = 1.96 * sd / std::sqrt(static_cast<double>(a.n));
  }
  return a;
}

struct MetricReport {
  std::vector<UtteranceMetrics> rows;
  std::vector<double> fractions;
  // Mean curves across utterances, keyed aleatoric|epistemic|total plus
  // oracle and random baselines.
  std::map<std::string, std::vector<double>> mean_curves;

  std::vector<double> column(double UtteranceMetrics::* field) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.*field);
    return out;
  }
};

namespace detail {

inline void write_curve_csv(const std::string& path,
                            const std::vector<double>& fractions,
                            const std::map<std::string, std::vector<double>>& curves,
                            const std::vector<double>& oracle,
                            const std::vector<double>& random_curve) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("write_curve_csv: cannot open " + path);
  os << "fraction,rmse_predicted,rmse_oracle,rmse_random,key\n";
  for (const auto& [key, rmse] : curves) {
    for (std::size_t i = 0; i < fractions.size(); ++i)
      os << format_double(fractions[i]) << ',' << format_double(rmse[i]) << ','
         << format_double(oracle[i]) << ',' << format_double(random_curve[i])
         << ',' << key << '\n';
  }
}

}  // namespace detail

/// Runs forward / posterior mean / uncertainty decomposition / iSTFT on
/// every manifest row of the split and writes metrics.csv,
/// metrics_summary.csv, per-utterance heatmap and sparsification CSVs,
/// and the aggregate sparsification.csv.
inline MetricReport evaluate_checkpoint(const net::NetParams& params,
                                        const data::Manifest& manifest,
                                        const std::string& split,
                                        const std::string& out_dir,
                                        std::size_t frame_len,
                                        std::size_t hop_len, int sample_rate,
                                        std::size_t threads = 0) {
  std::vector<const data::ManifestRow*> rows;
  for (const auto& r : manifest.rows)
    if (r.split == split) rows.push_back(&r);
  if (rows.empty())
    throw DataError("evaluate_checkpoint: no rows with split '" + split + "'");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  MetricReport report;
  report.fractions = sparsification_fractions();
  report.rows.resize(rows.size());
  const char* keys[3] = {"aleatoric", "epistemic", "total"};
  std::map<std::string, std::vector<double>> curve_sums;
  for (const char* k : keys)
    curve_sums[k].assign(report.fractions.size(), 0.0);
  curve_sums["oracle"].assign(report.fractions.size(), 0.0);
  curve_sums["random"].assign(report.fractions.size(), 0.0);

  struct PerUtt {
    UtteranceMetrics metrics;
    std::map<std::string, std::vector<double>> curves;
    std::vector<double> errors;
    post::UncertaintyMaps maps;
  };
  std::vector<PerUtt> results(rows.size());

  train::detail::parallel_for(rows.size(), threads, [&](std::size_t i) {
    const data::ManifestRow& row = *rows[i];
    PerUtt& r = results[i];
    const dsp::Waveform mix = dsp::read_wav(row.mix_path, sample_rate);
    const dsp::Waveform clean = dsp::read_wav(row.clean_path, sample_rate);
    const dsp::ComplexSpectrogram noisy = dsp::stft(mix, frame_len, hop_len);
    const dsp::ComplexSpectrogram ref = dsp::stft(clean, frame_len, hop_len);

    const post::PosteriorParams p = net::forward(params, noisy);
    r.maps = post::decompose_uncertainty(p, noisy);

    dsp::ComplexSpectrogram mean = noisy;
    mean.coefficients.assign(r.maps.mean.begin(), r.maps.mean.end());
    dsp::Waveform est = dsp::istft(mean);
    est.samples.resize(mix.samples.size());

    r.errors = spectral_error(mean, ref);
    r.metrics.id = row.id;
    r.metrics.snr_db = row.spec.snr_db;
    r.metrics.si_sdr_in = si_sdr(mix, clean);
    r.metrics.si_sdr_out = si_sdr(est, clean);
    r.metrics.seg_snr_db = seg_snr(est, clean);
    r.metrics.spec_rmse = spectral_rmse(r.errors);

    const SparsificationCurve oracle =
        sparsify(r.errors, {}, RankKind::oracle);
    const SparsificationCurve random_curve =
        sparsify(r.errors, {}, RankKind::random, mix_seed(0xAA, i));
    r.curves["oracle"] = oracle.rmse;
    r.curves["random"] = random_curve.rmse;
    const std::vector<double>* maps[3] = {&r.maps.aleatoric, &r.maps.epistemic,
                                          &r.maps.total};
    double* ause_out[3] = {&r.metrics.ause_aleatoric,
                           &r.metrics.ause_epistemic, &r.metrics.ause_total};
    for (int k = 0; k < 3; ++k) {
      const SparsificationCurve c =
          sparsify(r.errors, *maps[k], RankKind::predicted);
      r.curves[keys[k]] = c.rmse;
      *ause_out[k] = ause(c, oracle);
    }
    r.metrics.ause_random = ause(random_curve, oracle);
  });

  // Aggregation in manifest order.
  for (std::size_t i = 0; i < results.size(); ++i) {
    report.rows[i] = results[i].metrics;
    for (auto& [key, sum] : curve_sums) {
      const auto& c = results[i].curves.at(key);
      for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += c[j];
    }
  }
  for (auto& [key, sum] : curve_sums) {
    for (double& v : sum) v /= static_cast<double>(results.size());
    report.mean_curves[key] = sum;
  }

  if (!out_dir.empty()) {
    {
      std::ofstream os(out_dir + "/metrics.csv", std::ios::trunc);
      if (!os) throw DataError("evaluate_checkpoint: cannot write metrics.csv");
      os << "id,snr_db,si_sdr_in,si_sdr_out,seg_snr,spec_rmse\n";
      for (const auto& r : report.rows)
        os << r.id << ',' << format_double(r.snr_db) << ','
           << format_double(r.si_sdr_in) << ',' << format_double(r.si_sdr_out)
           << ',' << format_double(r.seg_snr_db) << ','
           << format_double(r.spec_rmse) << '\n';
    }
    {
      std::ofstream os(out_dir + "/metrics_summary.csv", std::ios::trunc);
      if (!os)
        throw DataError("evaluate_checkpoint: cannot write metrics_summary.csv");
      os << "metric,mean,ci95_lo,ci95_hi,n\n";
      auto emit = [&](const char* name, double UtteranceMetrics::* field) {
        const Aggregate a = aggregate(report.column(field));
        os << name << ',' << format_double(a.mean) << ','
           << format_double(a.mean - a.ci95_half) << ','
           << format_double(a.mean + a.ci95_half) << ',' << a.n << '\n';
      };
      emit("si_sdr_in", &UtteranceMetrics::si_sdr_in);
      emit("si_sdr_out", &UtteranceMetrics::si_sdr_out);
      emit("seg_snr", &UtteranceMetrics::seg_snr_db);
      emit("spec_rmse", &UtteranceMetrics::spec_rmse);
      emit("ause_aleatoric", &UtteranceMetrics::ause_aleatoric);
      emit("ause_epistemic", &UtteranceMetrics::ause_epistemic);
      emit("ause_total", &UtteranceMetrics::ause_total);
      emit("ause_random", &UtteranceMetrics::ause_random);
    }
    std::map<std::string, std::vector<double>> pred_curves;
    for (const char* k : keys) pred_curves[k] = report.mean_curves[k];
    detail::write_curve_csv(out_dir + "/sparsification.csv", report.fractions,
                            pred_curves, report.mean_curves["oracle"],
                            report.mean_curves["random"]);
    for (std::size_t i = 0; i < results.size(); ++i) {
      const PerUtt& r = results[i];
      std::map<std::string, std::vector<double>> per_pred;
      for (const char* k : keys) per_pred[k] = r.curves.at(k);
      detail::write_curve_csv(
          out_dir + "/sparsification_" + r.metrics.id + ".csv",
          report.fractions, per_pred, r.curves.at("oracle"),
          r.curves.at("random"));
      std::ofstream os(out_dir + "/heatmap_" + r.metrics.id + ".csv",
                       std::ios::trunc);
      if (!os) throw DataError("evaluate_checkpoint: cannot write heatmap csv");
      os << "f,t,error,aleatoric,epistemic\n";
      const std::size_t t_frames = r.maps.num_frames;
      for (std::size_t f = 0; f < r.maps.num_bins; ++f)
        for (std::size_t t = 0; t < t_frames; ++t) {
          const std::size_t bin = f * t_frames + t;
          os << f << ',' << t << ',' << format_double(r.errors[bin]) << ','
             << format_double(r.maps.aleatoric[bin]) << ','
             << format_double(r.maps.epistemic[bin]) << '\n';
        }
    }
  }
  return report;
}

}  // namespace cgmmse::eval

#endif  // CGMMSE_EVAL_HPP
