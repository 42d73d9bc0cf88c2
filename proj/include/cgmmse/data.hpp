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
// Synthetic corpus: harmonic pseudo-speech with silent gaps, three noise
// kinds, and SNR-exact mixing. SNR is computed over active-speech samples
// (short-frame energy above -40 dB of the peak frame), so silence-heavy
// utterances do not bias the mix.

#ifndef CGMMSE_DATA_HPP
#define CGMMSE_DATA_HPP

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cgmmse/dsp.hpp"
#include "cgmmse/util.hpp"
#include "cgmmse/wav.hpp"

namespace cgmmse::data {

enum class NoiseKind { white, pink, modulated };

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::white: return "white";
    case NoiseKind::pink: return "pink";
    case NoiseKind::modulated: return "modulated";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white") return NoiseKind::white;
  if (s == "pink") return NoiseKind::pink;
  if (s == "modulated") return NoiseKind::modulated;
  throw DataError("unknown noise kind: " + s);
}

struct MixSpec {
  double snr_db = 0.0;
  std::uint64_t speech_seed = 0;
  std::uint64_t noise_seed = 0;
  double duration_s = 2.0;
  NoiseKind noise_kind = NoiseKind::white;
};

struct ManifestRow {
  std::string id;
  std::string split;  // train | val | test
  std::string clean_path;
  std::string noise_path;
  std::string mix_path;
  MixSpec spec;
  int sample_rate = 16000;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  void write(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("Manifest: cannot open " + path);
    os << "# id split clean noise mix snr_db speech_seed noise_seed "
          "duration_s noise_kind sample_rate\n";
    for (const auto& r : rows) {
      os << "id=" << r.id << " split=" << r.split << " clean=" << r.clean_path
         << " noise=" << r.noise_path << " mix=" << r.mix_path
         << " snr_db=" << format_double(r.spec.snr_db)
         << " speech_seed=" << r.spec.speech_seed
         << " noise_seed=" << r.spec.noise_seed
         << " duration_s=" << format_double(r.spec.duration_s)
         << " noise_kind=" << to_string(r.spec.noise_kind)
         << " sample_rate=" << r.sample_rate << '\n';
    }
  }

  static Manifest read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("Manifest: cannot open " + path);
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      ManifestRow r;
      std::stringstream ss(line);
      std::string tok;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
          throw DataError("Manifest: malformed token '" + tok + "' in " + path);
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "id") r.id = val;
        else if (key == "split") r.split = val;
        else if (key == "clean") r.clean_path = val;
        else if (key == "noise") r.noise_path = val;
        else if (key == "mix") r.mix_path = val;
        else if (key == "snr_db") r.spec.snr_db = std::stod(val);
        else if (key == "speech_seed") r.spec.speech_seed = std::stoull(val);
        else if (key == "noise_seed") r.spec.noise_seed = std::stoull(val);
        else if (key == "duration_s") r.spec.duration_s = std::stod(val);
        else if (key == "noise_kind") r.spec.noise_kind = noise_kind_from_string(val);
        else if (key == "sample_rate") r.sample_rate = std::stoi(val);
        else throw DataError("Manifest: unknown field '" + key + "' in " + path);
      }
      m.rows.push_back(std::move(r));
    }
    return m;
  }
};

/// Sample indices whose enclosing 10 ms frame has energy above -40 dB of
/// the loudest frame.
inline std::vector<char> active_sample_mask(const std::vector<double>& x,
                                            int sample_rate) {
  const std::size_t frame = std::max<std::size_t>(
      static_cast<std::size_t>(sample_rate / 100), 1);
  const std::size_t num_frames = (x.size() + frame - 1) / frame;
  std::vector<double> energy(num_frames, 0.0);
  double peak = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    energy[i / frame] += x[i] * x[i];
  for (double e : energy) peak = std::max(peak, e);
  const double thresh = peak * 1e-4;  // -40 dB
  std::vector<char> mask(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i)
    mask[i] = energy[i / frame] > thresh ? 1 : 0;
  return mask;
}

/// Harmonic complex: fundamental f0, 1/k amplitude rolloff, random phases.
inline void add_harmonic_tone(std::vector<double>& out, std::size_t begin,
                              std::size_t len, double f0,
                              std::size_t num_harmonics, int sample_rate,
                              Rng& rng, double am_rate_hz) {
  std::vector<double> phase(num_harmonics);
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * kPi);
  const double am_phase = rng.uniform(0.0, 2.0 * kPi);
  const std::size_t fade = std::min<std::size_t>(
      static_cast<std::size_t>(sample_rate / 200), len / 4);  // 5 ms
  for (std::size_t m = 0; m < len; ++m) {
    const double tsec = static_cast<double>(m) / sample_rate;
    double s = 0.0;
    for (std::size_t k = 1; k <= num_harmonics; ++k)
      s += std::sin(2.0 * kPi * static_cast<double>(k) * f0 * tsec +
                    phase[k - 1]) /
           static_cast<double>(k);
    const double am =
        0.55 + 0.45 * std::sin(2.0 * kPi * am_rate_hz * tsec + am_phase);
    double env = 1.0;
    if (m < fade) env = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(m) / fade);
    if (len - 1 - m < fade)
      env = std::min(env, 0.5 - 0.5 * std::cos(kPi * static_cast<double>(len - 1 - m) / fade));
    out[begin + m] = am * env * s;
  }
}

/// Pseudo-speech: voiced syllables (piecewise-constant f0 in [80, 300] Hz,
/// 5-12 harmonics, 3-6 Hz amplitude modulation) separated by silent gaps
/// totalling at least 10% of the duration. Peak-normalized to 0.5.
inline dsp::Waveform synth_speech(std::uint64_t seed, double duration_s,
                                  int sample_rate) {
  if (duration_s < 1.0)
    throw std::invalid_argument("synth_speech: duration must be >= 1 s");
  Rng rng(seed);
  const std::size_t n =
      static_cast<std::size_t>(duration_s * sample_rate + 0.5);
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);

  std::size_t pos = 0;
  std::size_t silent = 0;
  while (pos < n) {
    const auto gap_len = static_cast<std::size_t>(
        rng.uniform(0.06, 0.16) * sample_rate);
    const auto voiced_len = static_cast<std::size_t>(
        rng.uniform(0.15, 0.40) * sample_rate);
    const std::size_t g = std::min(gap_len, n - pos);
    silent += g;
    pos += g;
    if (pos >= n) break;
    const std::size_t v = std::min(voiced_len, n - pos);
    const double f0 = rng.uniform(80.0, 300.0);
    const auto harmonics = static_cast<std::size_t>(rng.uniform_int(5, 12));
    const double am_rate = rng.uniform(3.0, 6.0);
    add_harmonic_tone(w.samples, pos, v, f0, harmonics, sample_rate, rng,
                      am_rate);
    pos += v;
  }
  // Guarantee the silence quota even for unlucky draws or truncation.
  const auto quota = static_cast<std::size_t>(0.12 * n);
  if (silent < quota) {
    const std::size_t extra = quota - silent;
    std::fill(w.samples.end() - static_cast<std::ptrdiff_t>(extra),
              w.samples.end(), 0.0);
  }
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0) {
    const double scale = 0.5 / peak;
    for (double& s : w.samples) s *= scale;
  }
  return w;
}

/// white: iid Gaussian. pink: -3 dB/octave spectral shaping synthesized in
/// the frequency domain. modulated: pink with a slow (0.3-1.5 Hz) gain
/// envelope swinging a few dB. All RMS-normalized to 0.1.
inline dsp::Waveform synth_noise(NoiseKind kind, std::uint64_t seed,
                                 double duration_s, int sample_rate) {
  Rng rng(seed);
  const std::size_t n =
      static_cast<std::size_t>(duration_s * sample_rate + 0.5);
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);

  if (kind == NoiseKind::white) {
    for (auto& s : w.samples) s = rng.normal();
  } else {
    std::size_t m = 1;
    while (m < n) m <<= 1;
    std::vector<std::complex<double>> spec(m, {0.0, 0.0});
    for (std::size_t k = 1; k <= m / 2; ++k) {
      const double freq = static_cast<double>(k) * sample_rate /
                          static_cast<double>(m);
      const double amp = 1.0 / std::sqrt(freq);  // power ~ 1/f
      const std::complex<double> g(rng.normal(), rng.normal());
      spec[k] = amp * g;
      if (k < m / 2) spec[m - k] = std::conj(spec[k]);
    }
    spec[m / 2] = {spec[m / 2].real(), 0.0};
    dsp::fft_inplace(spec, true);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = spec[i].real();
    if (kind == NoiseKind::modulated) {
      const double f1 = rng.uniform(0.3, 1.5), f2 = rng.uniform(0.3, 1.5);
      const double a1 = rng.uniform(0.3, 0.6), a2 = rng.uniform(0.3, 0.6);
      const double p1 = rng.uniform(0.0, 2.0 * kPi),
                   p2 = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double tsec = static_cast<double>(i) / sample_rate;
        w.samples[i] *= std::exp(a1 * std::sin(2.0 * kPi * f1 * tsec + p1) +
                                 a2 * std::sin(2.0 * kPi * f2 * tsec + p2));
      }
    }
  }
  double rms = 0.0;
  for (double s : w.samples) rms += s * s;
  rms = std::sqrt(rms / static_cast<double>(n));
  if (rms > 0.0) {
    const double scale = 0.1 / rms;
    for (double& s : w.samples) s *= scale;
  }
  return w;
}

struct MixResult {
  dsp::Waveform mixture;
  dsp::Waveform scaled_noise;
  double achieved_snr_db = 0.0;
};

/// Scales the noise so the clean/noise energy ratio over active-speech
/// samples hits snr_db exactly, then adds. Noise is looped or truncated to
/// the clean length.
inline MixResult mix_at_snr(const dsp::Waveform& clean, dsp::Waveform noise,
                            double snr_db) {
  if (!std::isfinite(snr_db))
    throw std::invalid_argument("mix_at_snr: snr_db must be finite");
  if (clean.sample_rate != noise.sample_rate)
    throw std::invalid_argument("mix_at_snr: sample-rate mismatch");
  if (noise.samples.empty())
    throw DataError("mix_at_snr: empty noise signal");
  const std::size_t n = clean.samples.size();
  if (noise.samples.size() < n) {
    std::vector<double> looped(n);
    for (std::size_t i = 0; i < n; ++i)
      looped[i] = noise.samples[i % noise.samples.size()];
    noise.samples = std::move(looped);
  } else {
    noise.samples.resize(n);
  }

  const std::vector<char> active = active_sample_mask(clean.samples,
                                                      clean.sample_rate);
  double e_clean = 0.0, e_noise = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!active[i]) continue;
    e_clean += clean.samples[i] * clean.samples[i];
    e_noise += noise.samples[i] * noise.samples[i];
  }
  if (e_clean <= 0.0) throw DataError("mix_at_snr: zero-energy clean signal");
  if (e_noise <= 0.0) throw DataError("mix_at_snr: zero-energy noise signal");

  const double scale =
      std::sqrt(e_clean / (e_noise * std::pow(10.0, snr_db / 10.0)));
  MixResult res;
  res.scaled_noise = noise;
  for (double& s : res.scaled_noise.samples) s *= scale;
  res.mixture.sample_rate = clean.sample_rate;
  res.mixture.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    res.mixture.samples[i] = clean.samples[i] + res.scaled_noise.samples[i];
  res.achieved_snr_db =
      10.0 * std::log10(e_clean / (scale * scale * e_noise));
  return res;
}

struct CorpusConfig {
  std::size_t n_train = 200;
  std::size_t n_val = 40;
  std::size_t n_test = 40;
  double duration_s = 2.0;
  int sample_rate = 16000;
  double train_snr_lo = -5.0;
  double train_snr_hi = 20.0;
  std::vector<double> test_snr_grid{-10.0, -5.0, 0.0, 5.0, 10.0};
  std::uint64_t master_seed = 0;
};

/// Generates clean/noise/mixture WAVs (float32) plus the manifest file
/// <out_dir>/manifest.txt. Splits draw from disjoint seed ranges derived
/// from the master seed, so regeneration is byte-identical.
inline Manifest build_corpus(const CorpusConfig& cfg,
                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  Manifest manifest;
  const std::uint64_t base = mix_seed(cfg.master_seed, 0xC0F0ULL);
  const char* split_names[3] = {"train", "val", "test"};
  const std::size_t counts[3] = {cfg.n_train, cfg.n_val, cfg.n_test};
  for (std::size_t split = 0; split < 3; ++split) {
    for (std::size_t i = 0; i < counts[split]; ++i) {
      ManifestRow row;
      row.split = split_names[split];
      {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%04zu", split_names[split], i);
        row.id = buf;
      }
      row.sample_rate = cfg.sample_rate;
      row.spec.duration_s = cfg.duration_s;
      row.spec.speech_seed = base + split * 1000000ull + i;
      row.spec.noise_seed = base + 3000000ull + split * 1000000ull + i;
      row.spec.noise_kind = static_cast<NoiseKind>(i % 3);
      if (split == 2) {
        row.spec.snr_db = cfg.test_snr_grid[i % cfg.test_snr_grid.size()];
      } else {
        Rng snr_rng(mix_seed(row.spec.speech_seed, 0x51aaULL));
        row.spec.snr_db = snr_rng.uniform(cfg.train_snr_lo, cfg.train_snr_hi);
      }

      const dsp::Waveform clean =
          synth_speech(row.spec.speech_seed, cfg.duration_s, cfg.sample_rate);
      const dsp::Waveform noise = synth_noise(
          row.spec.noise_kind, row.spec.noise_seed, cfg.duration_s,
          cfg.sample_rate);
      const MixResult mixed = mix_at_snr(clean, noise, row.spec.snr_db);

      row.clean_path = out_dir + "/" + row.id + "_clean.wav";
      row.noise_path = out_dir + "/" + row.id + "_noise.wav";
      row.mix_path = out_dir + "/" + row.id + "_mix.wav";
      dsp::write_wav(row.clean_path, clean);
      dsp::write_wav(row.noise_path, mixed.scaled_noise);
      dsp::write_wav(row.mix_path, mixed.mixture);
      manifest.rows.push_back(std::move(row));
    }
  }
  manifest.write(out_dir + "/manifest.txt");
  return manifest;
}

}  // namespace cgmmse::data

#endif  // CGMMSE_DATA_HPP
