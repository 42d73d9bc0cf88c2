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
// Time-frequency analysis/synthesis: periodic-Hann STFT with weighted
// overlap-add inverse. Frames start at multiples of hop_len; the tail is
// zero-padded so every sample is covered. Reconstruction is exact (up to
// rounding) on the fully-overlapped interior.

#ifndef CGMMSE_DSP_HPP
#define CGMMSE_DSP_HPP

#include <algorithm>
#include <complex>
#include <cstddef>
#include <vector>

#include "cgmmse/util.hpp"

namespace cgmmse::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;
};

/// One-sided complex STFT coefficients, frequency-major:
/// coefficients[f * num_frames + t].
struct ComplexSpectrogram {
  std::vector<std::complex<double>> coefficients;
  std::size_t num_bins = 0;    // F = frame_len/2 + 1
  std::size_t num_frames = 0;  // T
  std::size_t frame_len = 0;
  std::size_t hop_len = 0;
  int sample_rate = 16000;

  std::complex<double>& at(std::size_t f, std::size_t t) {
    return coefficients[f * num_frames + t];
  }
  const std::complex<double>& at(std::size_t f, std::size_t t) const {
    return coefficients[f * num_frames + t];
  }
};

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Periodic (DFT-even) Hann window.
inline std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                static_cast<double>(n));
  return w;
}

/// Iterative radix-2 FFT, in place. Size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(n))
    throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
    const std::complex<double> step(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= step;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

inline ComplexSpectrogram stft(const Waveform& w, std::size_t frame_len,
                               std::size_t hop_len) {
  if (!is_pow2(frame_len))
    throw std::invalid_argument("stft: frame_len must be a power of two");
  if (hop_len == 0 || frame_len % hop_len != 0)
    throw std::invalid_argument("stft: hop_len must divide frame_len");
  if (w.samples.size() < frame_len)
    throw DataError("stft: waveform shorter than one analysis frame (" +
                    std::to_string(w.samples.size()) + " < " +
                    std::to_string(frame_len) + " samples)");
  if (!all_finite(w.samples))
    throw DataError("stft: waveform contains non-finite samples");

  const std::size_t n = w.samples.size();
  const std::size_t num_frames = 1 + (n - frame_len + hop_len - 1) / hop_len;
  const std::size_t num_bins = frame_len / 2 + 1;

  ComplexSpectrogram spec;
  spec.num_bins = num_bins;
  spec.num_frames = num_frames;
  spec.frame_len = frame_len;
  spec.hop_len = hop_len;
  spec.sample_rate = w.sample_rate;
  spec.coefficients.resize(num_bins * num_frames);

  const std::vector<double> window = hann_periodic(frame_len);
  std::vector<std::complex<double>> buf(frame_len);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const std::size_t offset = t * hop_len;
    for (std::size_t i = 0; i < frame_len; ++i) {
      const double s = offset + i < n ? w.samples[offset + i] : 0.0;
      buf[i] = s * window[i];
    }
    fft_inplace(buf, false);
    for (std::size_t f = 0; f < num_bins; ++f) spec.at(f, t) = buf[f];
  }
  return spec;
}

/// Weighted overlap-add synthesis with the analysis window re-applied and
/// the accumulated squared window divided out. The normalization is
/// floored: near the signal edges the window-power sum approaches zero,
/// and dividing modified (e.g. masked) frames by it would blow up the
/// first few samples. Output length is (T-1)*hop + frame_len; callers
/// crop to the original signal length.
inline Waveform istft(const ComplexSpectrogram& spec) {
  if (!is_pow2(spec.frame_len) || spec.hop_len == 0 ||
      spec.frame_len % spec.hop_len != 0)
    throw std::invalid_argument("istft: inconsistent frame/hop metadata");
  if (spec.num_bins != spec.frame_len / 2 + 1)
    throw std::invalid_argument("istft: bin count does not match frame_len");
  if (spec.coefficients.size() != spec.num_bins * spec.num_frames)
    throw std::invalid_argument("istft: coefficient buffer size mismatch");

  const std::size_t frame_len = spec.frame_len;
  const std::size_t out_len =
      (spec.num_frames - 1) * spec.hop_len + frame_len;
  const std::vector<double> window = hann_periodic(frame_len);

  std::vector<double> num(out_len, 0.0);
  std::vector<double> den(out_len, 0.0);
  std::vector<std::complex<double>> buf(frame_len);
  for (std::size_t t = 0; t < spec.num_frames; ++t) {
    buf[0] = spec.at(0, t);
    buf[frame_len / 2] = spec.at(spec.num_bins - 1, t);
    for (std::size_t f = 1; f < frame_len / 2; ++f) {
      buf[f] = spec.at(f, t);
      buf[frame_len - f] = std::conj(spec.at(f, t));
    }
    fft_inplace(buf, true);
    const std::size_t offset = t * spec.hop_len;
    for (std::size_t i = 0; i < frame_len; ++i) {
      num[offset + i] += buf[i].real() * window[i];
      den[offset + i] += window[i] * window[i];
    }
  }

  // interior window-power sum for periodic Hann at <= 50% hop is >= 0.5
  constexpr double kDenFloor = 1e-2;
  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i)
    out.samples[i] = num[i] / std::max(den[i], kDenFloor);
  return out;
}

}  // namespace cgmmse::dsp

#endif  // CGMMSE_DSP_HPP
