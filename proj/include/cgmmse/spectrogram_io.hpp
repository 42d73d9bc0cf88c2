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
// Spectrogram dump format: one JSON header line
//   {"F":257,"T":126,"frame_len":512,"hop_len":256,"sample_rate":16000}\n
// followed by F*T interleaved (re, im) little-endian float64 pairs in
// frequency-major order (all frames of bin 0, then bin 1, ...).

#ifndef CGMMSE_SPECTROGRAM_IO_HPP
#define CGMMSE_SPECTROGRAM_IO_HPP

#include <fstream>
#include <string>

#include <json.hpp>

#include "cgmmse/dsp.hpp"

namespace cgmmse::dsp {

inline void write_spectrogram_dump(const std::string& path,
                                   const ComplexSpectrogram& spec) {
  nlohmann::json header = {{"F", spec.num_bins},
                           {"T", spec.num_frames},
                           {"frame_len", spec.frame_len},
                           {"hop_len", spec.hop_len},
                           {"sample_rate", spec.sample_rate}};
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_spectrogram_dump: cannot open " + path);
  os << header.dump() << '\n';
  for (const auto& c : spec.coefficients) {
    const double re = c.real(), im = c.imag();
    os.write(reinterpret_cast<const char*>(&re), 8);
    os.write(reinterpret_cast<const char*>(&im), 8);
  }
  if (!os) throw DataError("write_spectrogram_dump: short write to " + path);
}

inline ComplexSpectrogram read_spectrogram_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_spectrogram_dump: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("read_spectrogram_dump: missing header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_spectrogram_dump: bad header in " + path + ": " +
                    e.what());
  }
  ComplexSpectrogram spec;
  try {
    spec.num_bins = header.at("F").get<std::size_t>();
    spec.num_frames = header.at("T").get<std::size_t>();
    spec.frame_len = header.at("frame_len").get<std::size_t>();
    spec.hop_len = header.at("hop_len").get<std::size_t>();
    spec.sample_rate = header.at("sample_rate").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_spectrogram_dump: incomplete header in " + path +
                    ": " + e.what());
  }
  spec.coefficients.resize(spec.num_bins * spec.num_frames);
  for (auto& c : spec.coefficients) {
    double re = 0.0, im = 0.0;
    in.read(reinterpret_cast<char*>(&re), 8);
    in.read(reinterpret_cast<char*>(&im), 8);
    c = {re, im};
  }
  if (!in)
    throw DataError("read_spectrogram_dump: truncated payload in " + path);
  return spec;
}

}  // namespace cgmmse::dsp

#endif  // CGMMSE_SPECTROGRAM_IO_HPP
