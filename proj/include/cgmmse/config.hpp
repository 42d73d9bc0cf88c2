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
// Flat `key = value` config files with a closed key registry: unknown
// keys are rejected by name, never ignored. CLI flags only override
// scalar keys; the config file is the source of truth for a run.

#ifndef CGMMSE_CONFIG_HPP
#define CGMMSE_CONFIG_HPP

#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cgmmse/util.hpp"

namespace cgmmse::cli {

inline constexpr std::array<std::string_view, 38> kKnownKeys = {
    // shared
    "sample_rate", "frame_len", "hop_len", "seed", "out_dir", "threads",
    // synth-data
    "n_train", "n_val", "n_test", "duration_s", "train_snr_lo",
    "train_snr_hi", "test_snr_grid",
    // train
    "model", "manifest", "run_name", "lr_init", "plateau_patience",
    "plateau_factor", "early_stop_patience", "max_epochs", "batch_size",
    "weight_decay", "beta", "finetune_lr", "grad_clip_norm", "context",
    "hidden_dims", "wta_total_epochs", "wta_k_halve_every",
    "wta_lr_decay_start", "wta_lr_halve_every", "wta_lr_floor",
    // enhance
    "checkpoint", "input_wav", "output_wav",
    // evaluate / sparsify
    "split", "heatmap"};

class Config {
 public:
  void set(const std::string& key, const std::string& value) {
    bool known = false;
    for (auto k : kKnownKeys)
      if (k == key) { known = true; break; }
    if (!known)
      throw std::invalid_argument("unknown config key: " + key);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    const auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  std::string require_str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("missing required config key: " + key);
    return it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    return parse_double(key, it->second);
  }

  std::size_t get_size(const std::string& key, std::size_t dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stoull(it->second);
    } catch (...) {
      throw std::invalid_argument("config key " + key +
                                  " expects an unsigned integer, got '" +
                                  it->second + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
    return get_size(key, dflt);
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(parse_double(key, tok));
    if (out.empty())
      throw std::invalid_argument("config key " + key + " is an empty list");
    return out;
  }

  std::vector<std::size_t> get_size_list(
      const std::string& key, const std::vector<std::size_t>& dflt) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<std::size_t> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        out.push_back(std::stoull(tok));
      } catch (...) {
        throw std::invalid_argument("config key " + key +
                                    " expects integers, got '" + tok + "'");
      }
    }
    if (out.empty())
      throw std::invalid_argument("config key " + key + " is an empty list");
    return out;
  }

  /// Sorted echo for manifests, one "key=value" string per entry.
  std::vector<std::string> echo() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k + "=" + v);
    return out;
  }

 private:
  static double parse_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (...) {
      throw std::invalid_argument("config key " + key +
                                  " expects a number, got '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Parses `key = value` lines; '#' starts a comment, blank lines ignored.
inline Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config " + path + ":" +
                                  std::to_string(lineno) +
                                  ": expected key = value, got '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

/// Applies a repeatable --set key=value override.
inline void apply_override(Config& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
  cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

int run(int argc, const char* const* argv);

}  // namespace cgmmse::cli

#endif  // CGMMSE_CONFIG_HPP
