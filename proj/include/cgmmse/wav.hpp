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
// RIFF/WAVE I/O, mono, PCM16 or IEEE float32. No resampling: a caller
// that needs a specific rate passes expected_sample_rate and gets an
// explicit error on mismatch instead of a silent conversion.

#ifndef CGMMSE_WAV_HPP
#define CGMMSE_WAV_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cgmmse/dsp.hpp"
#include "cgmmse/util.hpp"

namespace cgmmse::dsp {

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  s.append(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.append(reinterpret_cast<const char*>(&v), 2);
}

template <typename T>
T read_le(const std::string& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

}  // namespace detail

/// expected_sample_rate == 0 accepts any rate.
inline Waveform read_wav(const std::string& path,
                         int expected_sample_rate = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_wav: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 ||
      buf.compare(8, 4, "WAVE") != 0)
    throw DataError("read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id = buf.substr(pos, 4);
    const std::uint32_t len = detail::read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size())
      throw DataError("read_wav: truncated chunk '" + id + "' in " + path);
    if (id == "fmt ") {
      if (len < 16) throw DataError("read_wav: malformed fmt chunk in " + path);
      format = detail::read_le<std::uint16_t>(buf, body);
      channels = detail::read_le<std::uint16_t>(buf, body + 2);
      rate = detail::read_le<std::uint32_t>(buf, body + 4);
      bits = detail::read_le<std::uint16_t>(buf, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data_off == 0)
    throw DataError("read_wav: missing fmt or data chunk in " + path);
  if (channels != 1)
    throw DataError("read_wav: only mono supported, got " +
                    std::to_string(channels) + " channels in " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = detail::read_le<std::int16_t>(buf, data_off + 2 * i);
      w.samples[i] = static_cast<double>(s) / 32767.0;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      w.samples[i] = detail::read_le<float>(buf, data_off + 4 * i);
  } else {
    throw DataError("read_wav: unsupported encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bit) in " + path);
  }
  if (expected_sample_rate != 0 && w.sample_rate != expected_sample_rate)
    throw DataError("read_wav: " + path + " has sample rate " +
                    std::to_string(w.sample_rate) + " Hz, expected " +
                    std::to_string(expected_sample_rate) +
                    " Hz (resampling not supported)");
  return w;
}

inline void write_wav(const std::string& path, const Waveform& w,
                      WavEncoding enc = WavEncoding::float32) {
  if (!all_finite(w.samples))
    throw DataError("write_wav: non-finite samples");
  const std::size_t n = w.samples.size();
  const std::uint16_t bytes_per = enc == WavEncoding::pcm16 ? 2 : 4;
  const std::uint32_t data_len = static_cast<std::uint32_t>(n * bytes_per);

  std::string out;
  out.reserve(64 + data_len);
  out += "RIFF";
  detail::put_u32(out, 0);  // patched below
  out += "WAVE";
  out += "fmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, enc == WavEncoding::pcm16 ? 1 : 3);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * bytes_per);
  detail::put_u16(out, bytes_per);
  detail::put_u16(out, static_cast<std::uint16_t>(8 * bytes_per));
  if (enc == WavEncoding::float32) {
    out += "fact";
    detail::put_u32(out, 4);
    detail::put_u32(out, static_cast<std::uint32_t>(n));
  }
  out += "data";
  detail::put_u32(out, data_len);
  if (enc == WavEncoding::pcm16) {
    for (double s : w.samples) {
      const double c = std::clamp(s, -1.0, 1.0);
      const auto q = static_cast<std::int16_t>(std::lrint(c * 32767.0));
      out.append(reinterpret_cast<const char*>(&q), 2);
    }
  } else {
    for (double s : w.samples) {
      const float f = static_cast<float>(s);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  const std::uint32_t riff_len = static_cast<std::uint32_t>(out.size() - 8);
  std::memcpy(out.data() + 4, &riff_len, 4);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_wav: cannot open " + path + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw DataError("write_wav: short write to " + path);
}

}  // namespace cgmmse::dsp

#endif  // CGMMSE_WAV_HPP
