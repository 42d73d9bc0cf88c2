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
// Closed-form posterior of clean speech under complex Gaussian mixture
// priors on speech and noise. Each (speech i, noise j) pair contributes a
// Wiener gain, a residual variance, and an evidence-weighted mixture
// weight; the posterior mean and the aleatoric/epistemic variance split
// follow from the mixture in closed form.

#ifndef CGMMSE_POSTERIOR_HPP
#define CGMMSE_POSTERIOR_HPP

#include <algorithm>
#include <complex>
#include <cstddef>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cgmmse/dsp.hpp"
#include "cgmmse/util.hpp"

namespace cgmmse::post {

/// Zero-mean complex Gaussian mixture priors for speech (I components)
/// and noise (J components). Variances are per component per TF bin,
/// indexed (i * F + f) * T + t; weights are global per component.
struct PriorCGMM {
  std::size_t num_speech = 0;  // I
  std::size_t num_noise = 0;   // J
  std::size_t num_bins = 0;    // F
  std::size_t num_frames = 0;  // T
  std::vector<double> speech_vars;
  std::vector<double> noise_vars;
  std::vector<double> speech_weights;
  std::vector<double> noise_weights;

  std::size_t var_idx(std::size_t comp, std::size_t f, std::size_t t) const {
    return (comp * num_bins + f) * num_frames + t;
  }

  void validate() const {
    if (num_speech == 0 || num_noise == 0 || num_bins == 0 || num_frames == 0)
      throw std::invalid_argument("PriorCGMM: empty dimensions");
    const std::size_t per = num_bins * num_frames;
    if (speech_vars.size() != num_speech * per ||
        noise_vars.size() != num_noise * per ||
        speech_weights.size() != num_speech ||
        noise_weights.size() != num_noise)
      throw std::invalid_argument("PriorCGMM: buffer size mismatch");
    double ws = 0.0, wn = 0.0;
    for (double w : speech_weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("PriorCGMM: negative speech weight");
      ws += w;
    }
    for (double w : noise_weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("PriorCGMM: negative noise weight");
      wn += w;
    }
    if (std::abs(ws - 1.0) > 1e-12 || std::abs(wn - 1.0) > 1e-12)
      throw std::invalid_argument("PriorCGMM: weights must sum to one");
    for (double v : speech_vars)
      if (!(v >= kEpsVar))
        throw std::invalid_argument("PriorCGMM: speech variance below floor");
    for (double v : noise_vars)
      if (!(v >= kEpsVar))
        throw std::invalid_argument("PriorCGMM: noise variance below floor");
  }
};

/// Per-TF-bin mixture parameters: L Wiener gains, L residual variances,
/// L weights summing to one. Component-innermost layout:
/// index (f * T + t) * L + l. The pair (i, j) flattens to l = i * J + j.
struct PosteriorParams {
  std::size_t num_bins = 0;        // F
  std::size_t num_frames = 0;      // T
  std::size_t num_components = 0;  // L
  std::vector<double> masks;
  std::vector<double> variances;
  std::vector<double> weights;

  std::size_t idx(std::size_t f, std::size_t t, std::size_t l) const {
    return (f * num_frames + t) * num_components + l;
  }
  std::size_t num_entries() const {
    return num_bins * num_frames * num_components;
  }

  static PosteriorParams zeros(std::size_t f, std::size_t t, std::size_t l) {
    PosteriorParams p;
    p.num_bins = f;
    p.num_frames = t;
    p.num_components = l;
    p.masks.assign(f * t * l, 0.0);
    p.variances.assign(f * t * l, 1.0);
    p.weights.assign(f * t * l, 1.0 / static_cast<double>(l));
    return p;
  }

  void validate() const {
    if (num_components == 0) throw std::invalid_argument("PosteriorParams: L == 0");
    const std::size_t n = num_entries();
    if (masks.size() != n || variances.size() != n || weights.size() != n)
      throw std::invalid_argument("PosteriorParams: buffer size mismatch");
    for (double m : masks)
      if (!std::isfinite(m))
        throw std::invalid_argument("PosteriorParams: non-finite mask");
    for (double v : variances)
      if (!(v >= kEpsVar))
        throw std::invalid_argument("PosteriorParams: variance below floor");
    for (std::size_t bin = 0; bin < num_bins * num_frames; ++bin) {
      double sum = 0.0;
      for (std::size_t l = 0; l < num_components; ++l) {
        const double w = weights[bin * num_components + l];
        if (!(w >= 0.0))
          throw std::invalid_argument("PosteriorParams: negative weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument(
            "PosteriorParams: weights do not sum to one");
    }
  }
};

/// Posterior-mean estimate plus the per-bin variance decomposition.
/// total == aleatoric + epistemic per bin by construction.
struct UncertaintyMaps {
  std::size_t num_bins = 0;
  std::size_t num_frames = 0;
  std::vector<std::complex<double>> mean;  // f * T + t
  std::vector<double> aleatoric;
  std::vector<double> epistemic;
  std::vector<double> total;
};

struct WienerPair {
  double gain;      // speech_var / (speech_var + noise_var)
  double variance;  // speech_var * noise_var / (speech_var + noise_var)
};

inline WienerPair wiener_pair(double speech_var, double noise_var) {
  if (!(speech_var >= kEpsVar) || !(noise_var >= kEpsVar))
    throw std::invalid_argument("wiener_pair: variance below floor");
  const double denom = speech_var + noise_var;
  return {speech_var / denom, speech_var * noise_var / denom};
}

/// Log-density of the circular complex Gaussian N_C(x; 0, var).
inline double log_complex_gaussian(std::complex<double> x, double var) {
  return -std::log(kPi * var) - std::norm(x) / var;
}

/// Bayes posterior for every TF bin. Pair weights are evidence-weighted
/// responsibilities
///   w(i,j | X) ∝ Ω(i) Ω(j) N_C(X; 0, speech_var_i + noise_var_j),
/// normalized per bin; computed in the log domain with max-subtraction.
inline PosteriorParams posterior_from_priors(const PriorCGMM& prior,
                                             const dsp::ComplexSpectrogram& x) {
  prior.validate();
  if (x.num_bins != prior.num_bins || x.num_frames != prior.num_frames)
    throw std::invalid_argument(
        "posterior_from_priors: spectrogram/prior shape mismatch");

  const std::size_t big_i = prior.num_speech, big_j = prior.num_noise;
  const std::size_t num_l = big_i * big_j;
  PosteriorParams p;
  p.num_bins = prior.num_bins;
  p.num_frames = prior.num_frames;
  p.num_components = num_l;
  p.masks.resize(p.num_entries());
  p.variances.resize(p.num_entries());
  p.weights.resize(p.num_entries());

  std::vector<double> log_w(num_l);
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::complex<double> obs = x.at(f, t);
      const std::size_t base = p.idx(f, t, 0);
      double max_log = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < big_i; ++i) {
        const double vs = prior.speech_vars[prior.var_idx(i, f, t)];
        for (std::size_t j = 0; j < big_j; ++j) {
          const double vn = prior.noise_vars[prior.var_idx(j, f, t)];
          const std::size_t l = i * big_j + j;
          const WienerPair wp = wiener_pair(vs, vn);
          p.masks[base + l] = wp.gain;
          p.variances[base + l] = std::max(wp.variance, kEpsVar);
          log_w[l] = std::log(prior.speech_weights[i]) +
                     std::log(prior.noise_weights[j]) +
                     log_complex_gaussian(obs, vs + vn);
          max_log = std::max(max_log, log_w[l]);
        }
      }
      double norm = 0.0;
      for (std::size_t l = 0; l < num_l; ++l) {
        log_w[l] = std::exp(log_w[l] - max_log);
        norm += log_w[l];
      }
      for (std::size_t l = 0; l < num_l; ++l)
        p.weights[base + l] = log_w[l] / norm;
    }
  }
  return p;
}

/// E(S|X) for one bin: the weighted mixture of Wiener estimates.
inline std::complex<double> posterior_mean(const PosteriorParams& p,
                                           std::size_t f, std::size_t t,
                                           std::complex<double> x_ft) {
  const std::size_t base = p.idx(f, t, 0);
  double gain = 0.0;
  for (std::size_t l = 0; l < p.num_components; ++l)
    gain += p.weights[base + l] * p.masks[base + l];
  return gain * x_ft;
}

/// Whole-map posterior mean, shaped like the input spectrogram.
inline dsp::ComplexSpectrogram posterior_mean_map(
    const PosteriorParams& p, const dsp::ComplexSpectrogram& x) {
  if (x.num_bins != p.num_bins || x.num_frames != p.num_frames)
    throw std::invalid_argument("posterior_mean_map: shape mismatch");
  dsp::ComplexSpectrogram est = x;
  for (std::size_t f = 0; f < p.num_bins; ++f)
    for (std::size_t t = 0; t < p.num_frames; ++t)
      est.at(f, t) = posterior_mean(p, f, t, x.at(f, t));
  return est;
}

/// Law-of-total-variance split:
///   aleatoric = sum_l w_l * lambda_l
///   epistemic = sum_l w_l * |W_l X - E(S|X)|^2
inline UncertaintyMaps decompose_uncertainty(const PosteriorParams& p,
                                             const dsp::ComplexSpectrogram& x) {
  if (x.num_bins != p.num_bins || x.num_frames != p.num_frames)
    throw std::invalid_argument("decompose_uncertainty: shape mismatch");
  UncertaintyMaps u;
  u.num_bins = p.num_bins;
  u.num_frames = p.num_frames;
  const std::size_t n = p.num_bins * p.num_frames;
  u.mean.resize(n);
  u.aleatoric.resize(n);
  u.epistemic.resize(n);
  u.total.resize(n);
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t bin = f * p.num_frames + t;
      const std::size_t base = bin * p.num_components;
      const std::complex<double> obs = x.at(f, t);
      const std::complex<double> mean = posterior_mean(p, f, t, obs);
      double alea = 0.0, epis = 0.0;
      for (std::size_t l = 0; l < p.num_components; ++l) {
        const double w = p.weights[base + l];
        alea += w * p.variances[base + l];
        epis += w * std::norm(p.masks[base + l] * obs - mean);
      }
      u.mean[bin] = mean;
      u.aleatoric[bin] = alea;
      u.epistemic[bin] = epis;
      u.total[bin] = alea + epis;
    }
  }
  return u;
}

/// CSV export: f, t, re(mean), im(mean), aleatoric, epistemic.
inline void write_uncertainty_csv(const std::string& path,
                                  const UncertaintyMaps& u) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("write_uncertainty_csv: cannot open " + path);
  os << "f,t,re_mean,im_mean,aleatoric,epistemic\n";
  for (std::size_t f = 0; f < u.num_bins; ++f) {
    for (std::size_t t = 0; t < u.num_frames; ++t) {
      const std::size_t bin = f * u.num_frames + t;
      os << f << ',' << t << ',' << format_double(u.mean[bin].real()) << ','
         << format_double(u.mean[bin].imag()) << ','
         << format_double(u.aleatoric[bin]) << ','
         << format_double(u.epistemic[bin]) << '\n';
    }
  }
}

}  // namespace cgmmse::post

#endif  // CGMMSE_POSTERIOR_HPP
