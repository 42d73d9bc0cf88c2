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
// Compact per-frame mask-estimation network with exact hand-derived
// reverse-mode gradients. Input per frame t is the flattened log power
// log(|X_{f, t-c..t+c}|^2 + eps) over a symmetric context of c frames
// (missing frames count as zero spectrum). A leaky-ReLU MLP body feeds
// three linear heads per TF bin and component:
//
//   mask   W_l      = sigmoid(mask_logit)            in (0, 1)
//   var    lambda_l = eps + exp(clamp(var_logit, +-14))
//   weight Omega_l  = softmax_l(weight_logits)
//
// forward/backward are deterministic and allocation-exact: two calls with
// the same parameters, config and input produce bit-identical results.

#ifndef CGMMSE_NET_HPP
#define CGMMSE_NET_HPP

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cgmmse/losses.hpp"
#include "cgmmse/posterior.hpp"

namespace cgmmse::net {

inline constexpr double kVarLogitClamp = 14.0;

struct NetConfig {
  std::size_t context = 3;                     // frames each side
  std::vector<std::size_t> hidden_dims{128, 128};
  std::size_t num_components = 1;              // L
  std::size_t num_bins = 257;                  // F, fixed per model
  double leaky_slope = 0.2;
  bool constant_variance = false;              // lambda pinned to 1

  std::size_t input_dim() const { return (2 * context + 1) * num_bins; }
  std::size_t head_dim() const { return num_bins * num_components; }

  void validate() const {
    if (num_components < 1) throw std::invalid_argument("NetConfig: L < 1");
    if (hidden_dims.empty())
      throw std::invalid_argument("NetConfig: hidden_dims empty");
    if (num_bins == 0) throw std::invalid_argument("NetConfig: num_bins == 0");
  }
};

struct ParamSlice {
  std::string name;
  std::size_t offset;
  std::size_t rows;  // 1 for biases
  std::size_t cols;
  std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
  std::vector<ParamSlice> slices;
  std::size_t total = 0;

  const ParamSlice& find(const std::string& name) const {
    for (const auto& s : slices)
      if (s.name == name) return s;
    throw std::invalid_argument("ParamLayout: no slice named " + name);
  }
};

inline ParamLayout make_layout(const NetConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    layout.slices.push_back({name, layout.total, rows, cols});
    layout.total += rows * cols;
  };
  std::size_t prev = cfg.input_dim();
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
    add("body" + std::to_string(i) + ".w", prev, cfg.hidden_dims[i]);
    add("body" + std::to_string(i) + ".b", 1, cfg.hidden_dims[i]);
    prev = cfg.hidden_dims[i];
  }
  add("head_mask.w", prev, cfg.head_dim());
  add("head_mask.b", 1, cfg.head_dim());
  add("head_var.w", prev, cfg.head_dim());
  add("head_var.b", 1, cfg.head_dim());
  add("head_weight.w", prev, cfg.head_dim());
  add("head_weight.b", 1, cfg.head_dim());
  return layout;
}

struct NetParams {
  NetConfig cfg;
  std::vector<double> theta;
};

/// Fan-in scaled uniform init; biases zero. The variance head gets a
/// 100x smaller weight scale so the initial lambda sits near 1.
inline NetParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  const ParamLayout layout = make_layout(cfg);
  NetParams p;
  p.cfg = cfg;
  p.theta.assign(layout.total, 0.0);
  Rng rng(seed);
  for (const auto& s : layout.slices) {
    if (s.name.ends_with(".b")) continue;
    double scale = std::sqrt(1.0 / static_cast<double>(s.rows));
    if (s.name == "head_var.w") scale *= 0.01;
    for (std::size_t i = 0; i < s.size(); ++i)
      p.theta[s.offset + i] = rng.uniform(-scale, scale);
  }
  return p;
}

/// Cached per-utterance input features: log power, frame-major
/// (logpow[t * F + f]).
struct Features {
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  std::vector<double> logpow;
};

inline Features make_features(const dsp::ComplexSpectrogram& x) {
  Features feat;
  feat.num_frames = x.num_frames;
  feat.num_bins = x.num_bins;
  feat.logpow.resize(x.num_frames * x.num_bins);
  for (std::size_t f = 0; f < x.num_bins; ++f)
    for (std::size_t t = 0; t < x.num_frames; ++t)
      feat.logpow[t * x.num_bins + f] = std::log(std::norm(x.at(f, t)) + kEpsVar);
  return feat;
}

namespace detail {

// C[n x m] = A[n x k] * B[k x m], row-major.
inline void matmul(const double* a, std::size_t n, std::size_t k,
                   const double* b, std::size_t m, double* c) {
  std::fill(c, c + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x m] = A^T[k x n] * B[n x m] where A is [n x k].
inline void matmul_at_b(const double* a, std::size_t n, std::size_t k,
                        const double* b, std::size_t m, double* c) {
  std::fill(c, c + k * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t r = 0; r < k; ++r) {
      const double av = arow[r];
      double* crow = c + r * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[n x m] = A[n x k] * B^T where B is [m x k].
inline void matmul_a_bt(const double* a, std::size_t n, std::size_t k,
                        const double* b, std::size_t m, double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double dot = 0.0;
      for (std::size_t p = 0; p < k; ++p) dot += arow[p] * brow[p];
      crow[j] = dot;
    }
  }
}

inline void add_bias(double* a, std::size_t n, std::size_t m,
                     const double* bias) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) a[i * m + j] += bias[j];
}

inline void colsum(const double* a, std::size_t n, std::size_t m, double* out) {
  std::fill(out, out + m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += a[i * m + j];
}

}  // namespace detail

/// Intermediates retained by forward for the matching backward pass.
struct ForwardTape {
  std::size_t num_frames = 0;
  std::vector<double> input;                    // [T x input_dim]
  std::vector<std::vector<double>> pre_acts;    // z per body layer
  std::vector<std::vector<double>> acts;        // leaky(z) per body layer
  std::vector<double> mask_logits;              // [T x F*L]
  std::vector<double> var_logits;
  std::vector<double> weight_logits;
  post::PosteriorParams out;
};

inline post::PosteriorParams forward(const NetParams& params,
                                     const Features& feat,
                                     ForwardTape* tape = nullptr) {
  const NetConfig& cfg = params.cfg;
  cfg.validate();
  if (feat.num_bins != cfg.num_bins)
    throw std::invalid_argument("forward: feature bins != config num_bins");
  const ParamLayout layout = make_layout(cfg);
  if (params.theta.size() != layout.total)
    throw std::invalid_argument("forward: parameter vector size mismatch");

  const std::size_t t_frames = feat.num_frames;
  const std::size_t f_bins = cfg.num_bins;
  const std::size_t num_l = cfg.num_components;
  const std::size_t din = cfg.input_dim();
  const std::size_t ctx = cfg.context;
  const double log_floor = std::log(kEpsVar);

  // Context gather: row t is the concatenation of log-power frames
  // t-c .. t+c, out-of-range frames filled with log(eps).
  std::vector<double> input(t_frames * din);
  for (std::size_t t = 0; t < t_frames; ++t) {
    double* row = input.data() + t * din;
    for (std::size_t d = 0; d < 2 * ctx + 1; ++d) {
      const std::ptrdiff_t src =
          static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(d) -
          static_cast<std::ptrdiff_t>(ctx);
      double* dst = row + d * f_bins;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_frames))
        std::fill(dst, dst + f_bins, log_floor);
      else
        std::memcpy(dst, feat.logpow.data() + src * f_bins,
                    f_bins * sizeof(double));
    }
  }

  std::vector<std::vector<double>> pre_acts, acts;
  const double* prev_act = input.data();
  std::size_t prev_dim = din;
  for (std::size_t layer = 0; layer < cfg.hidden_dims.size(); ++layer) {
    const std::size_t cur = cfg.hidden_dims[layer];
    const auto& w = layout.find("body" + std::to_string(layer) + ".w");
    const auto& b = layout.find("body" + std::to_string(layer) + ".b");
    std::vector<double> z(t_frames * cur);
    detail::matmul(prev_act, t_frames, prev_dim, params.theta.data() + w.offset,
                   cur, z.data());
    detail::add_bias(z.data(), t_frames, cur, params.theta.data() + b.offset);
    std::vector<double> a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
      a[i] = z[i] > 0.0 ? z[i] : cfg.leaky_slope * z[i];
    pre_acts.push_back(std::move(z));
    acts.push_back(std::move(a));
    prev_act = acts.back().data();
    prev_dim = cur;
  }

  const std::size_t hd = cfg.head_dim();
  auto run_head = [&](const char* name) {
    const auto& w = layout.find(std::string(name) + ".w");
    const auto& b = layout.find(std::string(name) + ".b");
    std::vector<double> logits(t_frames * hd);
    detail::matmul(prev_act, t_frames, prev_dim,
                   params.theta.data() + w.offset, hd, logits.data());
    detail::add_bias(logits.data(), t_frames, hd,
                     params.theta.data() + b.offset);
    return logits;
  };
  std::vector<double> mask_logits = run_head("head_mask");
  std::vector<double> var_logits = run_head("head_var");
  std::vector<double> weight_logits = run_head("head_weight");

  post::PosteriorParams out;
  out.num_bins = f_bins;
  out.num_frames = t_frames;
  out.num_components = num_l;
  out.masks.resize(out.num_entries());
  out.variances.resize(out.num_entries());
  out.weights.resize(out.num_entries());
  for (std::size_t t = 0; t < t_frames; ++t) {
    for (std::size_t f = 0; f < f_bins; ++f) {
      const std::size_t head_base = t * hd + f * num_l;
      const std::size_t par_base = (f * t_frames + t) * num_l;
      double max_logit = weight_logits[head_base];
      for (std::size_t l = 1; l < num_l; ++l)
        max_logit = std::max(max_logit, weight_logits[head_base + l]);
      double z = 0.0;
      for (std::size_t l = 0; l < num_l; ++l)
        z += std::exp(weight_logits[head_base + l] - max_logit);
      for (std::size_t l = 0; l < num_l; ++l) {
        const double ml = mask_logits[head_base + l];
        out.masks[par_base + l] = 1.0 / (1.0 + std::exp(-ml));
        if (cfg.constant_variance) {
          out.variances[par_base + l] = 1.0;
        } else {
          const double vl = std::clamp(var_logits[head_base + l],
                                       -kVarLogitClamp, kVarLogitClamp);
          out.variances[par_base + l] = kEpsVar + std::exp(vl);
        }
        out.weights[par_base + l] =
            std::exp(weight_logits[head_base + l] - max_logit) / z;
      }
    }
  }

  if (tape) {
    tape->num_frames = t_frames;
    tape->input = std::move(input);
    tape->pre_acts = std::move(pre_acts);
    tape->acts = std::move(acts);
    tape->mask_logits = std::move(mask_logits);
    tape->var_logits = std::move(var_logits);
    tape->weight_logits = std::move(weight_logits);
    tape->out = out;
  }
  return out;
}

inline post::PosteriorParams forward(const NetParams& params,
                                     const dsp::ComplexSpectrogram& x,
                                     ForwardTape* tape = nullptr) {
  return forward(params, make_features(x), tape);
}

/// Exact gradient of the loss w.r.t. theta, given the loss gradients
/// w.r.t. this tape's PosteriorParams. upstream.d_logit is taken as the
/// gradient w.r.t. the pre-softmax weight logits (the loss applied the
/// softmax Jacobian); d_mask and d_var are mapped through the sigmoid and
/// exp-clamp head activations here. With constant_variance the variance
/// head is frozen and receives no gradient.
inline std::vector<double> backward(const NetParams& params,
                                    const ForwardTape& tape,
                                    const loss::LossGrad& upstream) {
  const NetConfig& cfg = params.cfg;
  const ParamLayout layout = make_layout(cfg);
  const std::size_t t_frames = tape.num_frames;
  const std::size_t f_bins = cfg.num_bins;
  const std::size_t num_l = cfg.num_components;
  const std::size_t hd = cfg.head_dim();
  if (upstream.num_bins != f_bins || upstream.num_frames != t_frames ||
      upstream.num_components != num_l)
    throw std::invalid_argument("backward: upstream/tape shape mismatch");
  if (tape.out.num_entries() != upstream.d_mask.size())
    throw std::invalid_argument("backward: tape does not match upstream");

  std::vector<double> d_mask_logit(t_frames * hd, 0.0);
  std::vector<double> d_var_logit(t_frames * hd, 0.0);
  std::vector<double> d_weight_logit(t_frames * hd, 0.0);
  for (std::size_t t = 0; t < t_frames; ++t) {
    for (std::size_t f = 0; f < f_bins; ++f) {
      const std::size_t head_base = t * hd + f * num_l;
      const std::size_t par_base = (f * t_frames + t) * num_l;
      for (std::size_t l = 0; l < num_l; ++l) {
        const double m = tape.out.masks[par_base + l];
        d_mask_logit[head_base + l] =
            upstream.d_mask[par_base + l] * m * (1.0 - m);
        if (!cfg.constant_variance) {
          const double vl = tape.var_logits[head_base + l];
          if (vl > -kVarLogitClamp && vl < kVarLogitClamp) {
            // d(lambda)/d(var_logit) = exp(var_logit) = lambda - eps
            d_var_logit[head_base + l] =
                upstream.d_var[par_base + l] *
                (tape.out.variances[par_base + l] - kEpsVar);
          }
        }
        d_weight_logit[head_base + l] = upstream.d_logit[par_base + l];
      }
    }
  }

  std::vector<double> grad(layout.total, 0.0);
  const std::size_t last = cfg.hidden_dims.size() - 1;
  const std::vector<double>& last_act = tape.acts[last];
  const std::size_t last_dim = cfg.hidden_dims[last];

  std::vector<double> d_act(t_frames * last_dim, 0.0);
  std::vector<double> scratch(t_frames * last_dim);
  auto head_backward = [&](const char* name, const std::vector<double>& dlogit) {
    const auto& w = layout.find(std::string(name) + ".w");
    const auto& b = layout.find(std::string(name) + ".b");
    detail::matmul_at_b(last_act.data(), t_frames, last_dim, dlogit.data(), hd,
                        grad.data() + w.offset);
    detail::colsum(dlogit.data(), t_frames, hd, grad.data() + b.offset);
    detail::matmul_a_bt(dlogit.data(), t_frames, hd,
                        params.theta.data() + w.offset, last_dim,
                        scratch.data());
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] += scratch[i];
  };
  head_backward("head_mask", d_mask_logit);
  if (!cfg.constant_variance) head_backward("head_var", d_var_logit);
  head_backward("head_weight", d_weight_logit);

  for (std::size_t layer = cfg.hidden_dims.size(); layer-- > 0;) {
    const std::size_t cur = cfg.hidden_dims[layer];
    const std::size_t prev_dim =
        layer == 0 ? cfg.input_dim() : cfg.hidden_dims[layer - 1];
    const double* prev_act =
        layer == 0 ? tape.input.data() : tape.acts[layer - 1].data();
    const auto& w = layout.find("body" + std::to_string(layer) + ".w");
    const auto& b = layout.find("body" + std::to_string(layer) + ".b");

    std::vector<double> dz(t_frames * cur);
    const std::vector<double>& z = tape.pre_acts[layer];
    for (std::size_t i = 0; i < dz.size(); ++i)
      dz[i] = d_act[i] * (z[i] > 0.0 ? 1.0 : cfg.leaky_slope);

    detail::matmul_at_b(prev_act, t_frames, prev_dim, dz.data(), cur,
                        grad.data() + w.offset);
    detail::colsum(dz.data(), t_frames, cur, grad.data() + b.offset);
    if (layer > 0) {
      d_act.assign(t_frames * prev_dim, 0.0);
      detail::matmul_a_bt(dz.data(), t_frames, cur,
                          params.theta.data() + w.offset, prev_dim,
                          d_act.data());
    }
  }
  return grad;
}

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
};

inline void save_checkpoint(const std::string& path, const NetParams& params,
                            const CheckpointMeta& meta) {
  std::ostringstream hidden;
  for (std::size_t i = 0; i < params.cfg.hidden_dims.size(); ++i)
    hidden << (i ? "," : "") << params.cfg.hidden_dims[i];
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("save_checkpoint: cannot open " + path);
  os << "CGMMSE-CKPT v1\n"
     << "context=" << params.cfg.context << '\n'
     << "hidden_dims=" << hidden.str() << '\n'
     << "num_components=" << params.cfg.num_components << '\n'
     << "num_bins=" << params.cfg.num_bins << '\n'
     << "leaky_slope=" << format_double(params.cfg.leaky_slope) << '\n'
     << "constant_variance=" << (params.cfg.constant_variance ? 1 : 0) << '\n'
     << "seed=" << meta.seed << '\n'
     << "epoch=" << meta.epoch << '\n'
     << "loss=" << format_double(meta.loss) << '\n'
     << "param_count=" << params.theta.size() << '\n'
     << "DATA\n";
  os.write(reinterpret_cast<const char*>(params.theta.data()),
           static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
  if (!os) throw DataError("save_checkpoint: short write to " + path);
}

inline NetParams load_checkpoint(const std::string& path,
                                 CheckpointMeta* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "CGMMSE-CKPT v1")
    throw DataError("load_checkpoint: bad magic in " + path);
  NetParams p;
  CheckpointMeta m;
  std::size_t param_count = 0;
  while (std::getline(in, line)) {
    if (line == "DATA") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("load_checkpoint: malformed header line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "context") p.cfg.context = std::stoull(val);
    else if (key == "hidden_dims") {
      p.cfg.hidden_dims.clear();
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) p.cfg.hidden_dims.push_back(std::stoull(tok));
    } else if (key == "num_components") p.cfg.num_components = std::stoull(val);
    else if (key == "num_bins") p.cfg.num_bins = std::stoull(val);
    else if (key == "leaky_slope") p.cfg.leaky_slope = std::stod(val);
    else if (key == "constant_variance") p.cfg.constant_variance = val == "1";
    else if (key == "seed") m.seed = std::stoull(val);
    else if (key == "epoch") m.epoch = std::stoull(val);
    else if (key == "loss") m.loss = std::stod(val);
    else if (key == "param_count") param_count = std::stoull(val);
    else throw DataError("load_checkpoint: unknown header key: " + key);
  }
  const ParamLayout layout = make_layout(p.cfg);
  if (param_count != layout.total)
    throw DataError("load_checkpoint: param_count does not match layout");
  p.theta.resize(param_count);
  in.read(reinterpret_cast<char*>(p.theta.data()),
          static_cast<std::streamsize>(param_count * sizeof(double)));
  if (!in) throw DataError("load_checkpoint: truncated payload in " + path);
  if (meta) *meta = m;
  return p;
}

/// Copies body and mask-head parameters from a pretrained model, leaving
/// the destination's freshly initialized variance and weight heads alone.
inline void transplant_body_and_mask_head(NetParams& dst,
                                          const NetParams& src) {
  const ParamLayout dst_layout = make_layout(dst.cfg);
  const ParamLayout src_layout = make_layout(src.cfg);
  for (const auto& s : dst_layout.slices) {
    if (s.name.starts_with("head_var") || s.name.starts_with("head_weight"))
      continue;
    const ParamSlice& from = src_layout.find(s.name);
    if (from.rows != s.rows || from.cols != s.cols)
      throw DataError("transplant: shape mismatch on slice " + s.name);
    std::copy(src.theta.begin() + static_cast<std::ptrdiff_t>(from.offset),
              src.theta.begin() +
                  static_cast<std::ptrdiff_t>(from.offset + from.size()),
              dst.theta.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
}

}  // namespace cgmmse::net

#endif  // CGMMSE_NET_HPP
