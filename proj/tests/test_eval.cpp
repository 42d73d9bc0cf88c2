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

#include "cgmmse/eval.hpp"
#include "oracles.hpp"

using namespace cgmmse;

namespace {

std::vector<double> random_errors(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> e(n);
  for (auto& v : e) v = std::abs(rng.normal());
  return e;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("spectral_error: hand cases and brute force") {
  dsp::ComplexSpectrogram a, b;
  a.num_bins = b.num_bins = 2;
  a.num_frames = b.num_frames = 2;
  a.coefficients = {{1, 1}, {2, 0}, {0, 0}, {-1, 3}};
  b.coefficients = a.coefficients;
  auto err = eval::spectral_error(a, b);
  for (double e : err) REQUIRE(e == 0.0);

  b.coefficients[2] = {3.0, 4.0};
  err = eval::spectral_error(a, b);
  REQUIRE(err[2] == Catch::Approx(5.0).margin(1e-15));

  Rng rng(3);
  for (auto& c : a.coefficients) c = {rng.normal(), rng.normal()};
  for (auto& c : b.coefficients) c = {rng.normal(), rng.normal()};
  err = eval::spectral_error(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    REQUIRE(err[i] == std::abs(b.coefficients[i] - a.coefficients[i]));
}

TEST_CASE("sparsify: predicted equals oracle when uncertainty equals error") {
  const auto errors = random_errors(500, 10);
  const auto pred = eval::sparsify(errors, errors, eval::RankKind::predicted);
  const auto oracle = eval::sparsify(errors, {}, eval::RankKind::oracle);
  REQUIRE(pred.rmse == oracle.rmse);
}

TEST_CASE("sparsify: anti-correlated key gives a non-decreasing curve") {
  const auto errors = random_errors(500, 11);
  std::vector<double> anti(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) anti[i] = -errors[i];
  const auto curve = eval::sparsify(errors, anti, eval::RankKind::predicted);
  for (std::size_t i = 1; i < curve.rmse.size(); ++i)
    REQUIRE(curve.rmse[i] >= curve.rmse[i - 1] - 1e-12);
}

TEST_CASE("sparsify: constant errors give a flat curve for every kind") {
  const std::vector<double> errors(400, 0.7);
  for (auto kind : {eval::RankKind::predicted, eval::RankKind::oracle,
                    eval::RankKind::random}) {
    const auto curve = eval::sparsify(errors, errors, kind, 9);
    for (double r : curve.rmse) REQUIRE(r == Catch::Approx(0.7).margin(1e-12));
  }
}

TEST_CASE("oracle curve is monotone non-increasing and pointwise minimal") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto errors = random_errors(300, 100 + seed);
    const auto oracle = eval::sparsify(errors, {}, eval::RankKind::oracle);
    for (std::size_t i = 1; i < oracle.rmse.size(); ++i)
      REQUIRE(oracle.rmse[i] <= oracle.rmse[i - 1] + 1e-12);

    const auto key = random_errors(300, 900 + seed);
    const auto pred = eval::sparsify(errors, key, eval::RankKind::predicted);
    const auto rnd = eval::sparsify(errors, {}, eval::RankKind::random, seed);
    for (std::size_t i = 0; i < oracle.rmse.size(); ++i) {
      REQUIRE(oracle.rmse[i] <= pred.rmse[i] + 1e-12);
      REQUIRE(oracle.rmse[i] <= rnd.rmse[i] + 1e-12);
    }
  }
}

TEST_CASE("ause: zero for oracle vs itself, rectangle area, random positive") {
  const auto errors = random_errors(400, 21);
  const auto oracle = eval::sparsify(errors, {}, eval::RankKind::oracle);
  REQUIRE(eval::ause(oracle, oracle) == 0.0);

  eval::SparsificationCurve one = oracle, zero = oracle;
  std::fill(one.rmse.begin(), one.rmse.end(), 1.0);
  std::fill(zero.rmse.begin(), zero.rmse.end(), 0.0);
  REQUIRE(eval::ause(one, zero) == Catch::Approx(0.99).margin(1e-12));

  const auto rnd = eval::sparsify(errors, {}, eval::RankKind::random, 4);
  REQUIRE(eval::ause(rnd, oracle) > 0.0);
}

TEST_CASE("ause is invariant to positive rescaling of the ranking key") {
  const auto errors = random_errors(300, 31);
  const auto key = random_errors(300, 32);
  std::vector<double> scaled(key.size());
  for (std::size_t i = 0; i < key.size(); ++i) scaled[i] = 17.0 * key[i];
  const auto oracle = eval::sparsify(errors, {}, eval::RankKind::oracle);
  const auto a = eval::sparsify(errors, key, eval::RankKind::predicted);
  const auto b = eval::sparsify(errors, scaled, eval::RankKind::predicted);
  REQUIRE(eval::ause(a, oracle) == eval::ause(b, oracle));
}

TEST_CASE("si_sdr: cap, scale invariance, orthogonal noise at 0 dB") {
  Rng rng(41);
  dsp::Waveform ref;
  ref.samples.resize(1024);
  for (auto& s : ref.samples) s = rng.normal();

  REQUIRE(eval::si_sdr(ref, ref) == 60.0);
  dsp::Waveform scaled = ref;
  for (auto& s : scaled.samples) s *= 10.0;
  REQUIRE(eval::si_sdr(scaled, ref) == 60.0);

  // orthogonalize a noise vector against ref, then match norms
  dsp::Waveform noise;
  noise.samples.resize(1024);
  for (auto& s : noise.samples) s = rng.normal();
  double dot = 0.0, ref_e = 0.0;
  for (std::size_t i = 0; i < 1024; ++i) {
    dot += noise.samples[i] * ref.samples[i];
    ref_e += ref.samples[i] * ref.samples[i];
  }
  double noise_e = 0.0;
  for (std::size_t i = 0; i < 1024; ++i) {
    noise.samples[i] -= dot / ref_e * ref.samples[i];
    noise_e += noise.samples[i] * noise.samples[i];
  }
  const double match = std::sqrt(ref_e / noise_e);
  dsp::Waveform est = ref;
  for (std::size_t i = 0; i < 1024; ++i)
    est.samples[i] += match * noise.samples[i];
  REQUIRE(eval::si_sdr(est, ref) == Catch::Approx(0.0).margin(1e-9));

  // positive rescaling of the estimate changes nothing
  dsp::Waveform est2 = est;
  for (auto& s : est2.samples) s *= 3.7;
  REQUIRE(eval::si_sdr(est2, ref) ==
          Catch::Approx(eval::si_sdr(est, ref)).margin(1e-9));

  dsp::Waveform zero;
  zero.samples.assign(1024, 0.0);
  REQUIRE_THROWS_AS(eval::si_sdr(ref, zero), std::invalid_argument);
}

TEST_CASE("seg_snr basics") {
  const auto clean = data::synth_speech(51, 1.0, 16000);
  REQUIRE(eval::seg_snr(clean, clean) == Catch::Approx(35.0).margin(1e-12));
  auto noisy = clean;
  Rng rng(52);
  for (auto& s : noisy.samples) s += 0.05 * rng.normal();
  const double snr = eval::seg_snr(noisy, clean);
  REQUIRE(snr > -10.0);
  REQUIRE(snr < 35.0);
}

TEST_CASE("oracle Wiener mask lifts SI-SDR by at least 5 dB at 0 dB SNR") {
  const auto clean = data::synth_speech(61, 2.0, 16000);
  const auto noise = data::synth_noise(data::NoiseKind::white, 62, 2.0, 16000);
  const auto mixed = data::mix_at_snr(clean, noise, 0.0);
  const auto x = dsp::stft(mixed.mixture, 512, 256);
  const auto s = dsp::stft(clean, 512, 256);
  const auto n = dsp::stft(mixed.scaled_noise, 512, 256);

  auto p = post::PosteriorParams::zeros(x.num_bins, x.num_frames, 1);
  for (std::size_t f = 0; f < x.num_bins; ++f)
    for (std::size_t t = 0; t < x.num_frames; ++t) {
      const double ps = std::norm(s.at(f, t));
      const double pn = std::norm(n.at(f, t));
      p.masks[f * x.num_frames + t] = ps / std::max(ps + pn, 1e-30);
    }
  const auto est_spec = post::posterior_mean_map(p, x);
  auto est = dsp::istft(est_spec);
  est.samples.resize(mixed.mixture.samples.size());
  est.sample_rate = 16000;

  const double in_sdr = eval::si_sdr(mixed.mixture, clean);
  const double out_sdr = eval::si_sdr(est, clean);
  REQUIRE(out_sdr >= in_sdr + 5.0);
}

TEST_CASE("evaluate_checkpoint: row count, CSV outputs, determinism") {
  namespace fs = std::filesystem;
  const std::string corpus_dir =
      (fs::temp_directory_path() / "cgmmse_eval_corpus").string();
  fs::remove_all(corpus_dir);
  data::CorpusConfig ccfg;
  ccfg.n_train = 1;
  ccfg.n_val = 1;
  ccfg.n_test = 4;
  ccfg.duration_s = 1.0;
  ccfg.master_seed = 3;
  const auto manifest = data::build_corpus(ccfg, corpus_dir);

  net::NetConfig netcfg;
  netcfg.context = 1;
  netcfg.hidden_dims = {8};
  netcfg.num_components = 2;
  netcfg.num_bins = 65;
  const auto params = net::init_params(netcfg, 5);

  const std::string out_a =
      (fs::temp_directory_path() / "cgmmse_eval_a").string();
  const std::string out_b =
      (fs::temp_directory_path() / "cgmmse_eval_b").string();
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  const auto report = eval::evaluate_checkpoint(params, manifest, "test",
                                                out_a, 128, 64, 16000, 1);
  REQUIRE(report.rows.size() == 4);
  REQUIRE(fs::exists(out_a + "/metrics.csv"));
  REQUIRE(fs::exists(out_a + "/metrics_summary.csv"));
  REQUIRE(fs::exists(out_a + "/sparsification.csv"));
  REQUIRE(fs::exists(out_a + "/heatmap_test_0000.csv"));
  REQUIRE(fs::exists(out_a + "/sparsification_test_0000.csv"));

  // metrics.csv has one data row per test utterance
  std::ifstream in(out_a + "/metrics.csv");
  std::string line;
  std::size_t rows = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == 4);

  eval::evaluate_checkpoint(params, manifest, "test", out_b, 128, 64, 16000, 1);
  for (const char* f : {"/metrics.csv", "/metrics_summary.csv",
                        "/sparsification.csv", "/heatmap_test_0002.csv"})
    REQUIRE(slurp(out_a + f) == slurp(out_b + f));

  REQUIRE_THROWS_AS(eval::evaluate_checkpoint(params, manifest, "nope", "",
                                              128, 64, 16000, 1),
                    DataError);
  fs::remove_all(corpus_dir);
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("aggregate: mean and confidence interval are recomputable") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto a = eval::aggregate(v);
  REQUIRE(a.mean == Catch::Approx(2.5).margin(1e-15));
  REQUIRE(a.n == 4);
  // sd = sqrt(5/3), half-width = 1.96 * sd / 2
  REQUIRE(a.ci95_half ==
          Catch::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-12));
}
