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

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "cgmmse/data.hpp"
#include "oracles.hpp"

using namespace cgmmse;

namespace {

/// Mean power per Hz in octave bands, from an averaged periodogram.
std::vector<double> octave_band_power(const std::vector<double>& x,
                                      int sample_rate, double f_lo,
                                      std::size_t num_bands) {
  const std::size_t seg = 8192;
  std::vector<double> power(seg / 2 + 1, 0.0);
  std::size_t count = 0;
  for (std::size_t start = 0; start + seg <= x.size(); start += seg) {
    std::vector<std::complex<double>> buf(x.begin() + start,
                                          x.begin() + start + seg);
    dsp::fft_inplace(buf, false);
    for (std::size_t k = 0; k <= seg / 2; ++k) power[k] += std::norm(buf[k]);
    ++count;
  }
  for (auto& p : power) p /= static_cast<double>(count);
  const double hz_per_bin = static_cast<double>(sample_rate) / seg;
  std::vector<double> bands(num_bands, 0.0);
  for (std::size_t b = 0; b < num_bands; ++b) {
    const double lo = f_lo * std::pow(2.0, static_cast<double>(b));
    const double hi = lo * 2.0;
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 1; k <= seg / 2; ++k) {
      const double f = k * hz_per_bin;
      if (f >= lo && f < hi) {
        acc += power[k];
        ++n;
      }
    }
    bands[b] = acc / static_cast<double>(n);
  }
  return bands;
}

double silent_frame_fraction(const std::vector<double>& x, int sample_rate) {
  const std::size_t frame = static_cast<std::size_t>(sample_rate / 50);  // 20 ms
  const std::size_t num_frames = x.size() / frame;
  std::vector<double> energy(num_frames, 0.0);
  for (std::size_t i = 0; i < num_frames * frame; ++i)
    energy[i / frame] += x[i] * x[i];
  double peak = 0.0;
  for (double e : energy) peak = std::max(peak, e);
  std::size_t silent = 0;
  for (double e : energy)
    if (e <= peak * 1e-4) ++silent;
  return static_cast<double>(silent) / static_cast<double>(num_frames);
}

}  // namespace

TEST_CASE("synth_speech: deterministic, normalized, with silent gaps") {
  const auto a = data::synth_speech(42, 2.0, 16000);
  const auto b = data::synth_speech(42, 2.0, 16000);
  REQUIRE(a.samples == b.samples);
  REQUIRE(data::synth_speech(43, 2.0, 16000).samples != a.samples);

  double peak = 0.0;
  for (double s : a.samples) peak = std::max(peak, std::abs(s));
  REQUIRE(peak == Catch::Approx(0.5).epsilon(1e-12));

  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto w = data::synth_speech(seed, 2.0, 16000);
    REQUIRE(silent_frame_fraction(w.samples, 16000) >= 0.10);
  }
  REQUIRE_THROWS_AS(data::synth_speech(1, 0.5, 16000), std::invalid_argument);
}

TEST_CASE("harmonic tone: spectral peaks at f0 multiples (DFT oracle)") {
  const int rate = 16000;
  const std::size_t n = 4096;
  // bin-centered fundamental so the comb lands on exact bins
  const double f0 = 50.0 * rate / static_cast<double>(n);  // 195.3125 Hz
  std::vector<double> x(n, 0.0);
  Rng rng(7);
  data::add_harmonic_tone(x, 0, n, f0, 5, rate, rng, 4.0);
  const auto spec = oracles::dft_direct(x);
  std::vector<double> mag(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) mag[k] = std::abs(spec[k]);
  for (std::size_t h = 1; h <= 5; ++h) {
    const std::size_t expected = 50 * h;
    std::size_t argmax = expected - 20;
    for (std::size_t k = expected - 20; k <= expected + 20; ++k)
      if (mag[k] > mag[argmax]) argmax = k;
    // amplitude modulation adds sidebands within a couple of bins
    REQUIRE(std::abs(static_cast<long>(argmax) - static_cast<long>(expected)) <= 2);
    REQUIRE(mag[argmax] > 20.0 * mag[expected + 15]);
  }
}

TEST_CASE("white noise: flat spectrum within +-1.5 dB per octave band") {
  const auto w = data::synth_noise(data::NoiseKind::white, 5, 60.0, 16000);
  REQUIRE(data::synth_noise(data::NoiseKind::white, 5, 60.0, 16000).samples ==
          w.samples);
  const auto bands = octave_band_power(w.samples, 16000, 100.0, 6);
  double mean_db = 0.0;
  for (double b : bands) mean_db += 10.0 * std::log10(b);
  mean_db /= static_cast<double>(bands.size());
  for (double b : bands)
    REQUIRE(std::abs(10.0 * std::log10(b) - mean_db) <= 1.5);
}

TEST_CASE("pink noise: -3 dB/octave within +-0.5 over 100 Hz - 4 kHz") {
  const auto w = data::synth_noise(data::NoiseKind::pink, 6, 60.0, 16000);
  const auto bands = octave_band_power(w.samples, 16000, 100.0, 5);
  // successive octave steps, and their average as the fitted slope
  double slope_sum = 0.0;
  for (std::size_t b = 0; b + 1 < bands.size(); ++b) {
    const double step_db = 10.0 * std::log10(bands[b + 1] / bands[b]);
    REQUIRE(step_db == Catch::Approx(-3.0).margin(1.0));
    slope_sum += step_db;
  }
  REQUIRE(slope_sum / static_cast<double>(bands.size() - 1) ==
          Catch::Approx(-3.0).margin(0.5));
}

TEST_CASE("modulated noise is deterministic and differs from plain pink") {
  const auto a = data::synth_noise(data::NoiseKind::modulated, 9, 2.0, 16000);
  const auto b = data::synth_noise(data::NoiseKind::modulated, 9, 2.0, 16000);
  REQUIRE(a.samples == b.samples);
  const auto pink = data::synth_noise(data::NoiseKind::pink, 9, 2.0, 16000);
  REQUIRE(a.samples != pink.samples);
}

TEST_CASE("mix_at_snr: exact SNR, additivity, error paths") {
  const auto clean = data::synth_speech(11, 2.0, 16000);
  const auto noise = data::synth_noise(data::NoiseKind::pink, 12, 2.0, 16000);
  for (double snr : {-10.0, 0.0, 7.5, 20.0}) {
    const auto mixed = data::mix_at_snr(clean, noise, snr);
    REQUIRE(mixed.achieved_snr_db == Catch::Approx(snr).margin(0.01));

    // re-measure from the outputs over the active mask
    const auto active = data::active_sample_mask(clean.samples, 16000);
    double ec = 0.0, en = 0.0;
    for (std::size_t i = 0; i < clean.samples.size(); ++i) {
      if (!active[i]) continue;
      ec += clean.samples[i] * clean.samples[i];
      en += mixed.scaled_noise.samples[i] * mixed.scaled_noise.samples[i];
    }
    REQUIRE(10.0 * std::log10(ec / en) == Catch::Approx(snr).margin(0.01));

    for (std::size_t i = 0; i < clean.samples.size(); ++i)
      REQUIRE(std::abs(mixed.mixture.samples[i] -
                       mixed.scaled_noise.samples[i] - clean.samples[i]) <=
              1e-12);
  }

  REQUIRE_THROWS_AS(
      data::mix_at_snr(clean, noise, std::numeric_limits<double>::infinity()),
      std::invalid_argument);
  dsp::Waveform silence;
  silence.sample_rate = 16000;
  silence.samples.assign(32000, 0.0);
  REQUIRE_THROWS_AS(data::mix_at_snr(silence, noise, 0.0), DataError);
}

TEST_CASE("mix_at_snr loops short noise and truncates long noise") {
  const auto clean = data::synth_speech(21, 2.0, 16000);
  auto short_noise = data::synth_noise(data::NoiseKind::white, 22, 1.0, 16000);
  const auto mixed = data::mix_at_snr(clean, short_noise, 5.0);
  REQUIRE(mixed.mixture.samples.size() == clean.samples.size());
  auto long_noise = data::synth_noise(data::NoiseKind::white, 23, 3.0, 16000);
  REQUIRE(data::mix_at_snr(clean, long_noise, 5.0).mixture.samples.size() ==
          clean.samples.size());
}

TEST_CASE("build_corpus: counts, split-disjoint seeds, reproducibility") {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / "cgmmse_corpus_test").string();
  fs::remove_all(dir);

  data::CorpusConfig cfg;
  cfg.n_train = 4;
  cfg.n_val = 2;
  cfg.n_test = 2;
  cfg.duration_s = 1.0;
  cfg.master_seed = 99;
  const auto manifest = data::build_corpus(cfg, dir);
  REQUIRE(manifest.rows.size() == 8);

  std::set<std::uint64_t> seeds;
  std::set<std::string> ids;
  for (const auto& r : manifest.rows) {
    REQUIRE(fs::exists(r.clean_path));
    REQUIRE(fs::exists(r.noise_path));
    REQUIRE(fs::exists(r.mix_path));
    seeds.insert(r.spec.speech_seed);
    seeds.insert(r.spec.noise_seed);
    ids.insert(r.id);
  }
  REQUIRE(seeds.size() == 16);  // all speech/noise seeds distinct
  REQUIRE(ids.size() == 8);

  // test split draws from the SNR grid
  for (const auto& r : manifest.rows)
    if (r.split == "test")
      REQUIRE((r.spec.snr_db == -10.0 || r.spec.snr_db == -5.0 ||
               r.spec.snr_db == 0.0 || r.spec.snr_db == 5.0 ||
               r.spec.snr_db == 10.0));

  // file level: mixture - noise recovers clean to float32 precision,
  // and the target SNR survives the round trip
  const auto& row = manifest.rows[0];
  const auto clean = dsp::read_wav(row.clean_path);
  const auto noise = dsp::read_wav(row.noise_path);
  const auto mix = dsp::read_wav(row.mix_path);
  for (std::size_t i = 0; i < clean.samples.size(); ++i)
    REQUIRE(std::abs(mix.samples[i] - noise.samples[i] - clean.samples[i]) <=
            4e-7);
  const auto active = data::active_sample_mask(clean.samples, 16000);
  double ec = 0.0, en = 0.0;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    if (!active[i]) continue;
    ec += clean.samples[i] * clean.samples[i];
    en += noise.samples[i] * noise.samples[i];
  }
  REQUIRE(10.0 * std::log10(ec / en) ==
          Catch::Approx(row.spec.snr_db).margin(0.01));

  // regeneration with the same master seed is byte-identical
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  const std::string manifest_before = slurp(dir + "/manifest.txt");
  const std::string wav_before = slurp(manifest.rows[3].mix_path);
  data::build_corpus(cfg, dir);
  REQUIRE(slurp(dir + "/manifest.txt") == manifest_before);
  REQUIRE(slurp(manifest.rows[3].mix_path) == wav_before);

  // manifest round trip
  const auto back = data::Manifest::read(dir + "/manifest.txt");
  REQUIRE(back.rows.size() == 8);
  REQUIRE(back.rows[0].id == manifest.rows[0].id);
  REQUIRE(back.rows[0].spec.snr_db == manifest.rows[0].spec.snr_db);
  fs::remove_all(dir);
}

TEST_CASE("default corpus configuration totals 280 utterances of 2 s") {
  const data::CorpusConfig cfg;
  REQUIRE(cfg.n_train + cfg.n_val + cfg.n_test == 280);
  REQUIRE(cfg.duration_s == 2.0);
}
