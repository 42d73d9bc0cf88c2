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
// Loss family over per-bin mixture parameters, with analytic gradients:
//
//   mse_loss       (1/FT) sum |S - W X|^2, single component
//   cg_nll         (1/FT) sum [log lambda + |S - W X|^2 / lambda]
//   cgmm_nll       -(1/FT) sum log sum_l exp(Theta_l),
//                  Theta_l = log w_l - log lambda_l - |S - W_l X|^2/lambda_l
//   cgmm_nll_beta  cgmm_nll with each Theta_l scaled by the stop-gradient
//                  factor c_l = lambda_l^beta_l, which divides the
//                  component gradients by lambda^(1-beta) / lambda^(2-beta)
//                  instead of lambda / lambda^2
//   wta_loss       mean of the K best per-hypothesis MSEs; gradients reach
//                  winners only
//
// Gradients are with respect to the masks W_l, the variances lambda_l,
// and the pre-softmax weight logits (the softmax Jacobian is already
// applied here, so d_logit feeds a linear head directly). The per-bin
// log score Theta omits the constant -log(pi) per component; oracle
// comparisons against the true density must add back log(pi) per bin.

#ifndef CGMMSE_LOSSES_HPP
#define CGMMSE_LOSSES_HPP

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cgmmse/posterior.hpp"

namespace cgmmse::loss {

/// Per-component gradient-modification exponents, beta in [0, 1].
struct GradModConfig {
  std::vector<double> betas;

  static GradModConfig uniform(std::size_t num_components, double beta) {
    return {std::vector<double>(num_components, beta)};
  }

  void validate(std::size_t num_components) const {
    if (betas.size() != num_components)
      throw std::invalid_argument("GradModConfig: beta count != L");
    for (double b : betas)
      if (!(b >= 0.0 && b <= 1.0))
        throw std::invalid_argument("GradModConfig: beta outside [0, 1]");
  }
};

/// Scalar loss plus per-bin gradients, shaped like PosteriorParams.
struct LossGrad {
  double value = 0.0;
  std::size_t num_bins = 0;
  std::size_t num_frames = 0;
  std::size_t num_components = 0;
  std::vector<double> d_mask;
  std::vector<double> d_var;
  std::vector<double> d_logit;

  static LossGrad zeros(std::size_t f, std::size_t t, std::size_t l) {
    LossGrad g;
    g.num_bins = f;
    g.num_frames = t;
    g.num_components = l;
    g.d_mask.assign(f * t * l, 0.0);
    g.d_var.assign(f * t * l, 0.0);
    g.d_logit.assign(f * t * l, 0.0);
    return g;
  }
};

namespace detail {

inline void check_shapes(const post::PosteriorParams& p,
                         const dsp::ComplexSpectrogram& s,
                         const dsp::ComplexSpectrogram& x) {
  if (s.num_bins != p.num_bins || s.num_frames != p.num_frames ||
      x.num_bins != p.num_bins || x.num_frames != p.num_frames)
    throw std::invalid_argument("loss: spectrogram/params shape mismatch");
}

// d|S - W X|^2 / dW for real W.
inline double d_residual_sq(std::complex<double> s, std::complex<double> x,
                            double w) {
  return 2.0 * (-(s * std::conj(x)).real() + w * std::norm(x));
}

// Finite sub-floor variances are caller errors; non-finite ones mean the
// producing network diverged and the training loop must abort.
inline void check_variance(double lam, const char* who) {
  if (lam >= kEpsVar) return;
  if (!std::isfinite(lam))
    throw NumericError(std::string(who) + ": non-finite variance");
  throw std::invalid_argument(std::string(who) + ": variance below floor");
}

}  // namespace detail

inline LossGrad mse_loss(const post::PosteriorParams& p,
                         const dsp::ComplexSpectrogram& s,
                         const dsp::ComplexSpectrogram& x) {
  detail::check_shapes(p, s, x);
  if (p.num_components != 1)
    throw std::invalid_argument("mse_loss: requires L == 1");
  LossGrad g = LossGrad::zeros(p.num_bins, p.num_frames, 1);
  const double inv_n =
      1.0 / static_cast<double>(p.num_bins * p.num_frames);
  double acc = 0.0;
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t bin = f * p.num_frames + t;
      const std::complex<double> sv = s.at(f, t), xv = x.at(f, t);
      const double w = p.masks[bin];
      acc += std::norm(sv - w * xv);
      g.d_mask[bin] = inv_n * detail::d_residual_sq(sv, xv, w);
    }
  }
  g.value = acc * inv_n;
  return g;
}

inline LossGrad cg_nll(const post::PosteriorParams& p,
                       const dsp::ComplexSpectrogram& s,
                       const dsp::ComplexSpectrogram& x) {
  detail::check_shapes(p, s, x);
  if (p.num_components != 1)
    throw std::invalid_argument("cg_nll: requires L == 1");
  LossGrad g = LossGrad::zeros(p.num_bins, p.num_frames, 1);
  const double inv_n =
      1.0 / static_cast<double>(p.num_bins * p.num_frames);
  double acc = 0.0;
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t bin = f * p.num_frames + t;
      const double lam = p.variances[bin];
      detail::check_variance(lam, "cg_nll");
      const std::complex<double> sv = s.at(f, t), xv = x.at(f, t);
      const double w = p.masks[bin];
      const double resid_sq = std::norm(sv - w * xv);
      acc += std::log(lam) + resid_sq / lam;
      g.d_mask[bin] = inv_n * detail::d_residual_sq(sv, xv, w) / lam;
      g.d_var[bin] = inv_n * (lam - resid_sq) / (lam * lam);
    }
  }
  g.value = acc * inv_n;
  return g;
}

inline LossGrad cgmm_nll(const post::PosteriorParams& p,
                         const dsp::ComplexSpectrogram& s,
                         const dsp::ComplexSpectrogram& x) {
  detail::check_shapes(p, s, x);
  const std::size_t num_l = p.num_components;
  LossGrad g = LossGrad::zeros(p.num_bins, p.num_frames, num_l);
  const double inv_n =
      1.0 / static_cast<double>(p.num_bins * p.num_frames);
  std::vector<double> theta(num_l), resp(num_l), resid_sq(num_l);
  double acc = 0.0;
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t base = p.idx(f, t, 0);
      const std::complex<double> sv = s.at(f, t), xv = x.at(f, t);
      double max_theta = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < num_l; ++l) {
        const double lam = p.variances[base + l];
        detail::check_variance(lam, "cgmm_nll");
        resid_sq[l] = std::norm(sv - p.masks[base + l] * xv);
        theta[l] = std::log(p.weights[base + l]) - std::log(lam) -
                   resid_sq[l] / lam;
        max_theta = std::max(max_theta, theta[l]);
      }
      if (!std::isfinite(max_theta))
        throw NumericError("cgmm_nll: all component scores are -inf");
      double z = 0.0;
      for (std::size_t l = 0; l < num_l; ++l) {
        resp[l] = std::exp(theta[l] - max_theta);
        z += resp[l];
      }
      const double lse = max_theta + std::log(z);
      acc -= lse;
      double resp_sum = 0.0;
      for (std::size_t l = 0; l < num_l; ++l) {
        resp[l] /= z;
        resp_sum += resp[l];
      }
      for (std::size_t l = 0; l < num_l; ++l) {
        const double lam = p.variances[base + l];
        g.d_mask[base + l] =
            inv_n * resp[l] *
            detail::d_residual_sq(sv, xv, p.masks[base + l]) / lam;
        g.d_var[base + l] =
            inv_n * resp[l] * (lam - resid_sq[l]) / (lam * lam);
        g.d_logit[base + l] =
            inv_n * (p.weights[base + l] * resp_sum - resp[l]);
      }
    }
  }
  g.value = acc * inv_n;
  return g;
}

/// Eq. of the beta-weighted loss: each component score is scaled by
/// c_l = lambda_l^beta_l, with c_l held constant under differentiation
/// (stop gradient). Responsibilities are the softmax of the scaled
/// scores; component gradients pick up the factor c_l.
inline LossGrad cgmm_nll_beta(const post::PosteriorParams& p,
                              const dsp::ComplexSpectrogram& s,
                              const dsp::ComplexSpectrogram& x,
                              const GradModConfig& mod) {
  detail::check_shapes(p, s, x);
  const std::size_t num_l = p.num_components;
  mod.validate(num_l);
  LossGrad g = LossGrad::zeros(p.num_bins, p.num_frames, num_l);
  const double inv_n =
      1.0 / static_cast<double>(p.num_bins * p.num_frames);
  std::vector<double> score(num_l), resp(num_l), resid_sq(num_l),
      factor(num_l);
  double acc = 0.0;
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t base = p.idx(f, t, 0);
      const std::complex<double> sv = s.at(f, t), xv = x.at(f, t);
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < num_l; ++l) {
        const double lam = p.variances[base + l];
        detail::check_variance(lam, "cgmm_nll_beta");
        resid_sq[l] = std::norm(sv - p.masks[base + l] * xv);
        factor[l] = std::pow(lam, mod.betas[l]);
        const double theta = std::log(p.weights[base + l]) - std::log(lam) -
                             resid_sq[l] / lam;
        score[l] = factor[l] * theta;
        max_score = std::max(max_score, score[l]);
      }
      if (!std::isfinite(max_score))
        throw NumericError("cgmm_nll_beta: all component scores are -inf");
      double z = 0.0;
      for (std::size_t l = 0; l < num_l; ++l) {
        resp[l] = std::exp(score[l] - max_score);
        z += resp[l];
      }
      acc -= max_score + std::log(z);
      double weighted_resp_sum = 0.0;
      for (std::size_t l = 0; l < num_l; ++l) {
        resp[l] /= z;
        weighted_resp_sum += resp[l] * factor[l];
      }
      for (std::size_t l = 0; l < num_l; ++l) {
        const double lam = p.variances[base + l];
        const double rc = resp[l] * factor[l];
        g.d_mask[base + l] =
            inv_n * rc * detail::d_residual_sq(sv, xv, p.masks[base + l]) /
            lam;
        g.d_var[base + l] = inv_n * rc * (lam - resid_sq[l]) / (lam * lam);
        g.d_logit[base + l] =
            inv_n * (p.weights[base + l] * weighted_resp_sum - rc);
      }
    }
  }
  g.value = acc * inv_n;
  return g;
}

struct WtaResult {
  LossGrad grad;
  std::vector<std::size_t> winner_ids;  // ascending hypothesis index
  std::vector<double> hypothesis_mse;   // per hypothesis, for logging
};

/// Winner-takes-all: rank hypotheses by whole-spectrogram MSE, average the
/// K best, backpropagate through winners only. Uses p.masks only; d_var
/// and d_logit stay zero. Ties rank by hypothesis index.
inline WtaResult wta_loss(const post::PosteriorParams& p,
                          const dsp::ComplexSpectrogram& s,
                          const dsp::ComplexSpectrogram& x, std::size_t k) {
  detail::check_shapes(p, s, x);
  const std::size_t num_l = p.num_components;
  if (k < 1 || k > num_l)
    throw std::invalid_argument("wta_loss: K must be in [1, L]");

  const double inv_n =
      1.0 / static_cast<double>(p.num_bins * p.num_frames);
  std::vector<double> mse(num_l, 0.0);
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t base = p.idx(f, t, 0);
      const std::complex<double> sv = s.at(f, t), xv = x.at(f, t);
      for (std::size_t l = 0; l < num_l; ++l)
        mse[l] += std::norm(sv - p.masks[base + l] * xv);
    }
  }
  for (double& m : mse) m *= inv_n;

  std::vector<std::size_t> order(num_l);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mse[a] < mse[b]; });
  std::vector<std::size_t> winners(order.begin(),
                                   order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(winners.begin(), winners.end());

  std::vector<char> is_winner(num_l, 0);
  for (std::size_t w : winners) is_winner[w] = 1;

  WtaResult res;
  res.grad = LossGrad::zeros(p.num_bins, p.num_frames, num_l);
  double value = 0.0;
  for (std::size_t w : winners) value += mse[w];
  value /= static_cast<double>(k);
  res.grad.value = value;
  const double scale = inv_n / static_cast<double>(k);
  for (std::size_t f = 0; f < p.num_bins; ++f) {
    for (std::size_t t = 0; t < p.num_frames; ++t) {
      const std::size_t base = p.idx(f, t, 0);
      const std::complex<double> sv = s.at(f, t), xv = x.at(f, t);
      for (std::size_t l = 0; l < num_l; ++l) {
        if (!is_winner[l]) continue;
        res.grad.d_mask[base + l] =
            scale * detail::d_residual_sq(sv, xv, p.masks[base + l]);
      }
    }
  }
  res.winner_ids = std::move(winners);
  res.hypothesis_mse = std::move(mse);
  return res;
}

/// Loss-curve log, one row per (epoch, split, loss) observation.
inline void append_loss_csv(const std::string& path, std::size_t epoch,
                            const std::string& split, const std::string& name,
                            double value, bool write_header) {
  std::ofstream os(path, write_header ? std::ios::trunc : std::ios::app);
  if (!os) throw DataError("append_loss_csv: cannot open " + path);
  if (write_header) os << "epoch,split,loss,value\n";
  os << epoch << ',' << split << ',' << name << ',' << format_double(value)
     << '\n';
}

}  // namespace cgmmse::loss

#endif  // CGMMSE_LOSSES_HPP
