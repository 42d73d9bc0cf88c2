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

#include "cgmmse/cli.hpp"

using namespace cgmmse;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("cgmmse");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct Workspace {
  std::string root;
  explicit Workspace(const std::string& name) {
    root = (fs::temp_directory_path() / name).string();
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string path(const std::string& rel) const { return root + "/" + rel; }
};

/// Tiny corpus + config shared by the training/evaluation tests.
void make_corpus(const Workspace& ws) {
  REQUIRE(run_cli({"synth-data", "--out", ws.path("corpus"), "--seed", "11",
                   "--set", "n_train=4", "--set", "n_val=2", "--set",
                   "n_test=2", "--set", "duration_s=1.0"}) == 0);
}

void write_train_config(const Workspace& ws, const std::string& model) {
  std::ofstream os(ws.path("train.cfg"));
  os << "# desk-scale smoke configuration\n"
     << "model = " << model << "\n"
     << "manifest = " << ws.path("corpus/manifest.txt") << "\n"
     << "frame_len = 128\n"
     << "hop_len = 64\n"
     << "context = 0\n"
     << "hidden_dims = 8\n"
     << "max_epochs = 2\n"
     << "batch_size = 2\n"
     << "wta_total_epochs = 3\n"
     << "wta_k_halve_every = 1\n"
     << "threads = 1\n";
}

}  // namespace

TEST_CASE("config file parsing and key registry") {
  Workspace ws("cgmmse_cli_cfg");
  {
    std::ofstream os(ws.path("ok.cfg"));
    os << "frame_len = 256  # comment\n\n# full-line comment\nseed = 7\n";
  }
  const auto cfg = cli::parse_config_file(ws.path("ok.cfg"));
  REQUIRE(cfg.get_size("frame_len", 0) == 256);
  REQUIRE(cfg.get_u64("seed", 0) == 7);
  REQUIRE(cfg.get_size("hop_len", 123) == 123);

  {
    std::ofstream os(ws.path("bad.cfg"));
    os << "frame_size = 256\n";  // misspelled key
  }
  REQUIRE_THROWS_WITH(cli::parse_config_file(ws.path("bad.cfg")),
                      Catch::Matchers::ContainsSubstring("frame_size"));
  {
    std::ofstream os(ws.path("syntax.cfg"));
    os << "frame_len 256\n";
  }
  REQUIRE_THROWS_AS(cli::parse_config_file(ws.path("syntax.cfg")),
                    std::invalid_argument);
}

TEST_CASE("unknown config key exits 1, naming the key") {
  REQUIRE(run_cli({"synth-data", "--set", "nonsense_key=3"}) == 1);
}

TEST_CASE("missing subcommand or config file fail with usage/data codes") {
  REQUIRE(run_cli({}) == 1);
  REQUIRE(run_cli({"train", "--config", "/nonexistent/path.cfg"}) == 2);
  REQUIRE(run_cli({"train"}) == 1);  // missing required keys
}

TEST_CASE("synth-data writes the manifest and a run manifest") {
  Workspace ws("cgmmse_cli_synth");
  make_corpus(ws);
  REQUIRE(fs::exists(ws.path("corpus/manifest.txt")));
  REQUIRE(fs::exists(ws.path("corpus/synth-data.manifest")));
  const auto manifest = data::Manifest::read(ws.path("corpus/manifest.txt"));
  REQUIRE(manifest.rows.size() == 8);
}

TEST_CASE("train: cgmm1 trains the single-component variant") {
  Workspace ws("cgmmse_cli_train1");
  make_corpus(ws);
  write_train_config(ws, "cgmm1");
  REQUIRE(run_cli({"train", "--config", ws.path("train.cfg"), "--out",
                   ws.path("run"), "--seed", "1"}) == 0);
  REQUIRE(fs::exists(ws.path("run/cgmm1.ckpt")));
  const auto params = net::load_checkpoint(ws.path("run/cgmm1.ckpt"));
  REQUIRE(params.cfg.num_components == 1);
  REQUIRE_FALSE(params.cfg.constant_variance);
  const auto manifest_text = slurp(ws.path("run/cgmm1.manifest"));
  REQUIRE(manifest_text.find("model=cgmm1") != std::string::npos);
  REQUIRE(manifest_text.find("dataset_hash=") != std::string::npos);
}

TEST_CASE("train: cgmm4-cons pins the variance head") {
  Workspace ws("cgmmse_cli_train4c");
  make_corpus(ws);
  write_train_config(ws, "cgmm4-cons");
  REQUIRE(run_cli({"train", "--config", ws.path("train.cfg"), "--out",
                   ws.path("run"), "--seed", "1"}) == 0);
  const auto params = net::load_checkpoint(ws.path("run/cgmm4-cons.ckpt"));
  REQUIRE(params.cfg.num_components == 4);
  REQUIRE(params.cfg.constant_variance);
}

TEST_CASE("train: cgmm4-pre runs WTA pre-training then fine-tunes") {
  Workspace ws("cgmmse_cli_train4p");
  make_corpus(ws);
  write_train_config(ws, "cgmm4-pre");
  REQUIRE(run_cli({"train", "--config", ws.path("train.cfg"), "--out",
                   ws.path("run"), "--seed", "1"}) == 0);
  REQUIRE(fs::exists(ws.path("run/cgmm4-pre_wta.ckpt")));
  REQUIRE(fs::exists(ws.path("run/cgmm4-pre.ckpt")));
  const auto wta = net::load_checkpoint(ws.path("run/cgmm4-pre_wta.ckpt"));
  const auto fin = net::load_checkpoint(ws.path("run/cgmm4-pre.ckpt"));
  REQUIRE(wta.cfg.num_components == 4);
  REQUIRE(fin.cfg.num_components == 4);
  // body and mask head carried over at init, so the WTA mask head must
  // differ from a fresh seed-1 init of the fine-tune model
  REQUIRE(wta.theta != fin.theta);
}

TEST_CASE("train rejects unknown model names") {
  Workspace ws("cgmmse_cli_badmodel");
  make_corpus(ws);
  write_train_config(ws, "cgmm8");
  REQUIRE(run_cli({"train", "--config", ws.path("train.cfg"), "--out",
                   ws.path("run")}) == 1);
}

TEST_CASE("enhance: output WAV matches input length and rate, reruns bitwise") {
  Workspace ws("cgmmse_cli_enhance");
  make_corpus(ws);
  write_train_config(ws, "wf");
  REQUIRE(run_cli({"train", "--config", ws.path("train.cfg"), "--out",
                   ws.path("run"), "--seed", "2"}) == 0);

  const std::string noisy_wav = ws.path("corpus/test_0000_mix.wav");
  const auto args = std::vector<std::string>{
      "enhance", "--set", "checkpoint=" + ws.path("run/wf.ckpt"), "--set",
      "input_wav=" + noisy_wav, "--set", "frame_len=128", "--set",
      "hop_len=64", "--out", ws.path("enh")};
  REQUIRE(run_cli(args) == 0);
  const std::string out_wav = ws.path("enh/test_0000_mix_enhanced.wav");
  REQUIRE(fs::exists(out_wav));
  const auto in_w = dsp::read_wav(noisy_wav);
  const auto out_w = dsp::read_wav(out_wav);
  REQUIRE(out_w.samples.size() == in_w.samples.size());
  REQUIRE(out_w.sample_rate == in_w.sample_rate);
  REQUIRE(fs::exists(ws.path("enh/test_0000_mix_uncertainty.csv")));
  REQUIRE(fs::exists(ws.path("enh/test_0000_mix_mean.spec")));

  // re-running reproduces outputs byte for byte
  const std::string wav_bytes = slurp(out_wav);
  const std::string csv_bytes = slurp(ws.path("enh/test_0000_mix_uncertainty.csv"));
  REQUIRE(run_cli(args) == 0);
  REQUIRE(slurp(out_wav) == wav_bytes);
  REQUIRE(slurp(ws.path("enh/test_0000_mix_uncertainty.csv")) == csv_bytes);

  // frame length inconsistent with the checkpoint is a data error
  REQUIRE(run_cli({"enhance", "--set", "checkpoint=" + ws.path("run/wf.ckpt"),
                   "--set", "input_wav=" + noisy_wav, "--set",
                   "frame_len=512", "--out", ws.path("enh2")}) == 2);
}

TEST_CASE("evaluate: metrics row count equals the split size") {
  Workspace ws("cgmmse_cli_eval");
  make_corpus(ws);
  write_train_config(ws, "wf");
  REQUIRE(run_cli({"train", "--config", ws.path("train.cfg"), "--out",
                   ws.path("run"), "--seed", "3"}) == 0);
  REQUIRE(run_cli({"evaluate", "--set",
                   "checkpoint=" + ws.path("run/wf.ckpt"), "--set",
                   "manifest=" + ws.path("corpus/manifest.txt"), "--set",
                   "frame_len=128", "--set", "hop_len=64", "--out",
                   ws.path("ev")}) == 0);
  std::ifstream in(ws.path("ev/metrics.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);  // header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 2);
}

TEST_CASE("sparsify consumes a heatmap CSV") {
  Workspace ws("cgmmse_cli_sparsify");
  {
    std::ofstream os(ws.path("heatmap.csv"));
    os << "f,t,error,aleatoric,epistemic\n";
    Rng rng(9);
    for (std::size_t f = 0; f < 8; ++f)
      for (std::size_t t = 0; t < 16; ++t)
        os << f << ',' << t << ',' << std::abs(rng.normal()) << ','
           << std::abs(rng.normal()) << ',' << std::abs(rng.normal()) << '\n';
  }
  REQUIRE(run_cli({"sparsify", "--set", "heatmap=" + ws.path("heatmap.csv"),
                   "--out", ws.path("sp")}) == 0);
  std::ifstream in(ws.path("sp/sparsification.csv"));
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "fraction,rmse_predicted,rmse_oracle,rmse_random,key");
  std::size_t rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 300);  // 100 fractions x 3 ranking keys

  REQUIRE(run_cli({"sparsify", "--set", "heatmap=" + ws.path("missing.csv"),
                   "--out", ws.path("sp")}) == 2);
}
