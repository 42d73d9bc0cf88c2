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
// Test-only oracles, independent of the implementation paths they check:
// an O(N^2) DFT sum, central finite differences, a brute-force grid-
// integrated Bayes posterior, a Monte-Carlo mixture sampler, and a naive
// log-sum-exp evaluation of the beta-weighted loss with frozen factors.

#ifndef CGMMSE_TESTS_ORACLES_HPP
#define CGMMSE_TESTS_ORACLES_HPP

#include <complex>
#include <functional>
#include <vector>

#include "cgmmse/posterior.hpp"
#include "cgmmse/util.hpp"

namespace oracles {

/// Direct O(N^2) DFT sum.
inline std::vector<std::complex<double>> dft_direct(
    const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t m = 0; m < n; ++m) {
      const double ang = -2.0 * cgmmse::kPi * static_cast<double>(k) *
                         static_cast<double>(m) / static_cast<double>(n);
      acc += x[m] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

/// Central finite difference with step scaled to the parameter magnitude.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double h_base = 1e-6) {
  const double h = h_base * std::max(1.0, std::abs(x));
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Gradcheck-style relative error. The denominator floor keeps the check
/// meaningful for vanishing gradients, where central differences bottom
/// out at cancellation noise (~1e-10 absolute): below the floor this is
/// an absolute comparison at 1e-8.
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

/// Brute-force numerical Bayes for a single TF bin: evaluates
/// prior(S) * likelihood(X | S) on a grid over the complex plane and
/// normalizes by the midpoint-rule integral.
struct GridPosterior {
  double z = 0.0;  // integral of the unnormalized posterior (= evidence)
  std::function<double(std::complex<double>)> unnormalized;

  double density(std::complex<double> s) const { return unnormalized(s) / z; }
};

inline double complex_gaussian_pdf(std::complex<double> x, double var) {
  return std::exp(-std::norm(x) / var) / (cgmmse::kPi * var);
}

inline GridPosterior grid_posterior(const std::vector<double>& speech_vars,
                                    const std::vector<double>& speech_weights,
                                    const std::vector<double>& noise_vars,
                                    const std::vector<double>& noise_weights,
                                    std::complex<double> x,
                                    std::size_t grid_points = 400) {
  GridPosterior gp;
  gp.unnormalized = [=](std::complex<double> s) {
    double prior = 0.0;
    for (std::size_t i = 0; i < speech_vars.size(); ++i)
      prior += speech_weights[i] * complex_gaussian_pdf(s, speech_vars[i]);
    double lik = 0.0;
    for (std::size_t j = 0; j < noise_vars.size(); ++j)
      lik += noise_weights[j] * complex_gaussian_pdf(x - s, noise_vars[j]);
    return prior * lik;
  };

  // Box covering all posterior-component centers plus 8 sigma.
  double lo_re = 0.0, hi_re = 0.0, lo_im = 0.0, hi_im = 0.0, sigma = 0.0;
  for (std::size_t i = 0; i < speech_vars.size(); ++i) {
    for (std::size_t j = 0; j < noise_vars.size(); ++j) {
      const double w = speech_vars[i] / (speech_vars[i] + noise_vars[j]);
      const double lam =
          speech_vars[i] * noise_vars[j] / (speech_vars[i] + noise_vars[j]);
      lo_re = std::min(lo_re, w * x.real());
      hi_re = std::max(hi_re, w * x.real());
      lo_im = std::min(lo_im, w * x.imag());
      hi_im = std::max(hi_im, w * x.imag());
      sigma = std::max(sigma, std::sqrt(lam));
    }
  }
  lo_re -= 8.0 * sigma;
  hi_re += 8.0 * sigma;
  lo_im -= 8.0 * sigma;
  hi_im += 8.0 * sigma;

  const double h_re = (hi_re - lo_re) / static_cast<double>(grid_points);
  const double h_im = (hi_im - lo_im) / static_cast<double>(grid_points);
  double sum = 0.0;
  for (std::size_t a = 0; a < grid_points; ++a) {
    const double re = lo_re + (static_cast<double>(a) + 0.5) * h_re;
    for (std::size_t b = 0; b < grid_points; ++b) {
      const double im = lo_im + (static_cast<double>(b) + 0.5) * h_im;
      sum += gp.unnormalized({re, im});
    }
  }
  gp.z = sum * h_re * h_im;
  return gp;
}

/// Draws from the closed-form posterior mixture of one bin.
inline std::vector<std::complex<double>> sample_posterior_mixture(
    const cgmmse::post::PosteriorParams& p, std::size_t f, std::size_t t,
    std::complex<double> x, std::size_t count, std::uint64_t seed) {
  cgmmse::Rng rng(seed);
  const std::size_t base = p.idx(f, t, 0);
  std::vector<std::complex<double>> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform();
    std::size_t l = 0;
    double cum = 0.0;
    for (; l + 1 < p.num_components; ++l) {
      cum += p.weights[base + l];
      if (u < cum) break;
    }
    const double sd = std::sqrt(p.variances[base + l] / 2.0);
    const std::complex<double> center = p.masks[base + l] * x;
    out[i] = center + std::complex<double>(sd * rng.normal(), sd * rng.normal());
  }
  return out;
}

/// Naive beta-weighted NLL with the scale factors supplied explicitly
/// (frozen), no max-subtraction. Used both as the log-sum-exp stability
/// oracle and as the objective for frozen-factor finite differences.
inline double beta_value_frozen(const cgmmse::post::PosteriorParams& p,
                                const cgmmse::dsp::ComplexSpectrogram& s,
                                const cgmmse::dsp::ComplexSpectrogram& x,
                                const std::vector<double>& frozen_factors) {
  double acc = 0.0;
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t base = p.idx(f, t, 0);
      double sum = 0.0;
      for (std::size_t l = 0; l < p.num_components; ++l) {
        const double lam = p.variances[base + l];
        const double resid = std::norm(s.at(f, t) - p.masks[base + l] * x.at(f, t));
        const double theta =
            std::log(p.weights[base + l]) - std::log(lam) - resid / lam;
        sum += std::exp(frozen_factors[base + l] * theta);
      }
      acc -= std::log(sum);
    }
  }
  return acc / static_cast<double>(p.num_bins * p.num_frames);
}

}  // namespace oracles

#endif  // CGMMSE_TESTS_ORACLES_HPP
