#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>

#include "s2t/features.hpp"
#include "support/test_util.hpp"

using namespace s2t;

namespace {

AudioClip sine_clip(double hz, double amplitude) {
  AudioClip c;
  for (std::size_t n = 0; n < kClipSamples; ++n) {
    c.samples[n] = std::int16_t(std::lround(amplitude * std::sin(2.0 * std::numbers::pi * hz * double(n) / 16000.0)));
  }
  return c;
}

// Same deterministic signal the frozen reference values were computed from.
AudioClip reference_clip() {
  AudioClip c;
  for (std::size_t n = 0; n < kClipSamples; ++n) {
    const double v = std::round(8000.0 * std::sin(2 * std::numbers::pi * 440.0 * double(n) / 16000.0) +
                                3000.0 * std::cos(2 * std::numbers::pi * 3100.0 * double(n) / 16000.0)) +
                     double((n * 37) % 101) - 50.0;
    c.samples[n] = std::int16_t(v);
  }
  return c;
}

// Direct O(N^2) DFT of one frame; window evaluated from its textbook definition.
std::vector<double> direct_dft_power(const AudioClip& clip, std::size_t frame) {
  const std::size_t n = 256, off = frame * 224;
  std::vector<double> x(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += clip.samples[off + i];
  mean /= double(n);
  const double alpha = 0.25, width = alpha * double(n) / 2.0;  // periodic: length n+1 symmetric, last dropped
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0;
    if (double(i) < width) w = 0.5 * (1 - std::cos(std::numbers::pi * double(i) / width));
    if (double(n - i) < width) w = 0.5 * (1 - std::cos(std::numbers::pi * double(n - i) / width));
    x[i] = (clip.samples[off + i] - mean) * w;
  }
  std::vector<double> p(129);
  for (std::size_t k = 0; k < 129; ++k) {
    std::complex<double> s{};
    for (std::size_t i = 0; i < n; ++i) s += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * i) / double(n));
    p[k] = std::norm(s);
  }
  return p;
}

}  // namespace

TEST(Tukey, MatchesFrozenReferenceValues) {
  // Periodic Tukey(256, 0.25) computed with an independent toolkit.
  const auto w = tukey_window(256, 0.25);
  const std::vector<std::pair<std::size_t, double>> ref{
      {0, 0.0},   {1, 0.002407636663901591}, {5, 0.05903936782582253}, {16, 0.5},   {31, 0.9975923633360985},
      {32, 1.0},  {100, 1.0},                {128, 1.0},               {224, 1.0},  {240, 0.5},
      {255, 0.002407636663901591}};
  for (const auto& [i, v] : ref) EXPECT_NEAR(w[i], v, 1e-15) << "index " << i;
}

TEST(Spectrogram, ShapeIs129By71) {
  const auto s = spectrogram(AudioClip{});
  EXPECT_EQ(s.rows, 129u);
  EXPECT_EQ(s.cols, 71u);
  EXPECT_EQ(kFrames, (16000u - 256u) / 224u + 1u);
}

TEST(Spectrogram, SilenceIsZeroBeforeGuard) {
  const auto s = spectrogram(AudioClip{});
  EXPECT_TRUE(std::all_of(s.values.begin(), s.values.end(), [](double v) { return v == 0.0; }));
  const auto f = compute_feature(AudioClip{});
  for (float v : f.values) EXPECT_EQ(v, float(std::log(1e-10)));
}

TEST(Spectrogram, OneKilohertzPeaksAtBin16EveryFrame) {
  const auto s = spectrogram(sine_clip(1000.0, 32767.0));
  for (std::size_t f = 0; f < s.cols; ++f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.rows; ++k)
      if (s(k, f) > s(best, f)) best = k;
    EXPECT_EQ(best, 16u) << "frame " << f;
  }
}

TEST(Spectrogram, MatchesDirectDftOracle) {
  const auto clip = sine_clip(1000.0, 32767.0);
  const auto s = spectrogram(clip);
  for (std::size_t frame : {0u, 17u, 70u}) {
    const auto p = direct_dft_power(clip, frame);
    const double scale = *std::max_element(p.begin(), p.end());
    for (std::size_t k = 0; k < 129; ++k) {
      // Relative to the frame's peak: bins far below it are dominated by rounding.
      EXPECT_LE(std::abs(s(k, frame) - p[k]) / scale, 1e-6) << "frame " << frame << " bin " << k;
    }
    EXPECT_LE(std::abs(s(16, frame) - p[16]) / p[16], 1e-6);
  }
}

TEST(Spectrogram, MatchesFrozenReferenceCells) {
  // |X|^2 from an independent toolkit's complex STFT of reference_clip().
  struct Cell {
    std::size_t bin, frame;
    double power, log_power;
  };
  const std::vector<Cell> ref{
      {0, 0, 16465687.337888027, 16.61678921831382},    {7, 0, 801715180305.6073, 27.410019244960875},
      {16, 0, 18237333.65229551, 16.718981350581476},   {50, 0, 73866453970.55217, 25.02552462368725},
      {128, 0, 790.2584387088835, 6.6723600295695356},  {0, 35, 348549309.90306723, 19.669290269986725},
      {7, 35, 800002933361.3823, 27.407881231309343},   {16, 35, 16677347.891930612, 16.62956194296841},
      {50, 35, 73728302937.18098, 25.023652591419825},  {128, 35, 2005.5617408473165, 7.603679470499096},
      {0, 70, 927984078.3653567, 20.64852513366941},    {7, 70, 797530675385.4382, 27.404786135298824},
      {16, 70, 15035533.709274232, 16.52592687156484},  {50, 70, 73829883798.1949, 25.025029416105845},
      {128, 70, 431.27663783218594, 6.066749735324411}};
  const auto clip = reference_clip();
  const auto s = spectrogram(clip);
  const auto f = compute_feature(clip);
  for (const auto& c : ref) {
    EXPECT_NEAR(s(c.bin, c.frame), c.power, 1e-8 * c.power + 1e-6) << c.bin << "," << c.frame;
    EXPECT_NEAR(f(c.bin, c.frame), c.log_power, 1e-5) << c.bin << "," << c.frame;
  }
}

TEST(Spectrogram, ParsevalOnOneFrame) {
  const auto clip = reference_clip();
  const auto s = spectrogram(clip);
  for (std::size_t frame : {0u, 35u}) {
    const auto seg = windowed_segment(clip, frame * kHop);
    double energy = 0.0;
    for (double v : seg) energy += v * v;
    double spectral = s(0, frame) + s(128, frame);
    for (std::size_t k = 1; k < 128; ++k) spectral += 2.0 * s(k, frame);
    EXPECT_NEAR(spectral / 256.0, energy, 1e-6 * energy);
  }
}

TEST(LogFeature, KnownEntries) {
  PowerSpectrogram p(1, 3);
  p.values = {0.0, 1.0 - 1e-10, 1.0};
  const auto f = log_feature(p);
  EXPECT_NEAR(f.values[0], -23.0259, 1e-4);
  EXPECT_NEAR(f.values[1], 0.0f, 1e-7);
  EXPECT_NEAR(f.values[2], 1e-10, 1e-7);
}

TEST(LogFeature, ScalingShiftsByLogC) {
  PowerSpectrogram p(2, 2);
  p.values = {1.0, 10.0, 1e3, 1e6};
  const double c = 37.5;
  auto q = p;
  for (auto& v : q.values) v *= c;
  const auto a = log_feature(p), b = log_feature(q);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b.values[i] - a.values[i], std::log(c), 1e-5);
}

TEST(LogFeature, IsDeterministicAndFinite) {
  const auto clip = reference_clip();
  const auto a = compute_feature(clip), b = compute_feature(clip);
  EXPECT_EQ(a.values, b.values);
  for (float v : a.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(LogFeature, TextDumpRoundTrips) {
  support::TempDir dir;
  const auto f = compute_feature(reference_clip());
  write_feature_text(f, dir.file("f.txt"));
  std::ifstream in(dir.file("f.txt"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    float v;
    std::size_t c = 0;
    while (ss >> v) {
      ASSERT_LT(c, 71u);
      EXPECT_EQ(v, f(rows, c));
      ++c;
    }
    EXPECT_EQ(c, 71u);
    ++rows;
  }
  EXPECT_EQ(rows, 129u);
}
