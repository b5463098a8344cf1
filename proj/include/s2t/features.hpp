#pragma once

// Log-spectrogram front end: 256-sample segments with hop 224 over one second
// of 16 kHz audio give 129 frequency bins by 71 frames.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <string>
#include <vector>

#include "s2t/audio_io.hpp"

namespace s2t {

inline constexpr std::size_t kFftSize = 256;
inline constexpr std::size_t kHop = 224;
inline constexpr std::size_t kFreqBins = kFftSize / 2 + 1;                    // 129
inline constexpr std::size_t kFrames = (kClipSamples - kFftSize) / kHop + 1;  // 71
inline constexpr double kTukeyAlpha = 0.25;
inline constexpr double kLogEpsilon = 1e-10;

/// Row-major (bin, frame) matrix. Rows run low to high frequency, columns early to late.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), values(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

using PowerSpectrogram = Matrix<double>;
using FeatureMap = Matrix<float>;

/// Periodic Tukey window (the DFT-even variant, i.e. a symmetric window of
/// length n+1 with the last point dropped).
inline std::vector<double> tukey_window(std::size_t n, double alpha) {
  std::vector<double> w(n, 1.0);
  if (alpha <= 0.0) return w;
  const std::size_t m = n + 1;
  const double span = double(m - 1);
  const auto width = std::size_t(std::floor(alpha * span / 2.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double x = double(i);
    if (i <= width) {
      w[i] = 0.5 * (1.0 + std::cos(std::numbers::pi * (-1.0 + 2.0 * x / alpha / span)));
    } else if (i >= m - width - 1) {
      w[i] = 0.5 * (1.0 + std::cos(std::numbers::pi * (-2.0 / alpha + 1.0 + 2.0 * x / alpha / span)));
    }
  }
  return w;
}

/// In-place iterative radix-2 FFT. Size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

/// Mean-removed, Tukey-windowed segment starting at `offset`.
inline std::vector<double> windowed_segment(const AudioClip& clip, std::size_t offset) {
  static const std::vector<double> window = tukey_window(kFftSize, kTukeyAlpha);
  std::vector<double> seg(kFftSize);
  double mean = 0.0;
  for (std::size_t i = 0; i < kFftSize; ++i) {
    seg[i] = double(clip.samples[offset + i]);
    mean += seg[i];
  }
  mean /= double(kFftSize);
  for (std::size_t i = 0; i < kFftSize; ++i) seg[i] = (seg[i] - mean) * window[i];
  return seg;
}

/// One-sided power spectrum |X_k|^2, k = 0..128, per frame. No density scaling.
inline PowerSpectrogram spectrogram(const AudioClip& clip) {
  PowerSpectrogram out(kFreqBins, kFrames);
  std::vector<std::complex<double>> buf(kFftSize);
  for (std::size_t f = 0; f < kFrames; ++f) {
    const auto seg = windowed_segment(clip, f * kHop);
    for (std::size_t i = 0; i < kFftSize; ++i) buf[i] = {seg[i], 0.0};
    fft_inplace(buf);
    for (std::size_t k = 0; k < kFreqBins; ++k) out(k, f) = std::norm(buf[k]);
  }
  return out;
}

inline FeatureMap log_feature(const PowerSpectrogram& spec) {
  FeatureMap out(spec.rows, spec.cols);
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    out.values[i] = float(std::log(spec.values[i] + kLogEpsilon));
  }
  return out;
}

inline FeatureMap compute_feature(const AudioClip& clip) { return log_feature(spectrogram(clip)); }

/// Text dump: one row per line, space-separated decimals.
inline void write_feature_text(const FeatureMap& fm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path);
  out << std::setprecision(9);
  for (std::size_t r = 0; r < fm.rows; ++r) {
    for (std::size_t c = 0; c < fm.cols; ++c) {
      if (c) out << ' ';
      out << fm(r, c);
    }
    out << '\n';
  }
}

}  // namespace s2t
