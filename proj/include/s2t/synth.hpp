#pragma once

// Synthetic stand-in for a spoken-word corpus. Each word is a fixed sequence
// of voiced (harmonic, formant-shaped) and fricative (band-limited noise)
// segments; speakers vary pitch, formant scale, tempo, onset, loudness and
// background noise. The tree it writes has the Speech Commands layout:
// <root>/<word>/<speaker>_nohash_<k>.wav, validation_list.txt,
// testing_list.txt and _background_noise_/.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "s2t/audio_io.hpp"
#include "s2t/tensor.hpp"

namespace s2t::synth {

struct Segment {
  double duration_s;
  bool voiced;
  double f1_start, f1_end;  // formants (voiced) or band centre (noise), Hz
  double f2_start, f2_end;
  double gain = 1.0;
};

using WordRecipe = std::vector<Segment>;

inline const std::map<std::string, WordRecipe>& recipes() {
  static const std::map<std::string, WordRecipe> r{
      {"zero", {{0.12, false, 5200, 5200, 6500, 6500, 0.35}, {0.14, true, 400, 450, 2000, 1600},
                {0.20, true, 500, 450, 1000, 850}}},
      {"one", {{0.30, true, 300, 700, 700, 1150}, {0.12, true, 250, 250, 1500, 1500, 0.5}}},
      {"two", {{0.04, false, 4000, 4000, 5000, 5000, 0.6}, {0.34, true, 300, 320, 900, 850}}},
      {"three", {{0.10, false, 6000, 6000, 7200, 7200, 0.25}, {0.07, true, 450, 420, 1300, 1400},
                 {0.28, true, 280, 270, 2300, 2400}}},
      {"four", {{0.12, false, 6800, 6800, 7500, 7500, 0.3}, {0.30, true, 500, 480, 900, 1000}}},
      {"five", {{0.10, false, 6800, 6800, 7500, 7500, 0.3}, {0.28, true, 750, 400, 1200, 2200},
                {0.07, true, 250, 250, 1100, 1100, 0.4}}},
      {"on", {{0.28, true, 700, 680, 1100, 1150}, {0.13, true, 250, 250, 1500, 1500, 0.5}}},
      {"off", {{0.22, true, 650, 620, 1000, 1000}, {0.15, false, 6800, 6800, 7500, 7500, 0.35}}},
      {"bed", {{0.03, false, 500, 500, 900, 900, 0.6}, {0.22, true, 550, 550, 1800, 1750}, {0.04, false, 3000, 3000, 3500, 3500, 0.5}}},
      {"bird", {{0.03, false, 500, 500, 900, 900, 0.6}, {0.30, true, 480, 470, 1350, 1300}, {0.04, false, 3000, 3000, 3500, 3500, 0.5}}},
      {"cat", {{0.05, false, 2500, 2500, 3500, 3500, 0.6}, {0.22, true, 750, 700, 1750, 1700}, {0.04, false, 4000, 4000, 5000, 5000, 0.6}}},
      {"dog", {{0.03, false, 3500, 3500, 4000, 4000, 0.5}, {0.25, true, 600, 580, 900, 850}, {0.04, false, 1800, 1800, 2200, 2200, 0.5}}},
      {"go", {{0.04, false, 1800, 1800, 2200, 2200, 0.5}, {0.32, true, 500, 400, 1000, 800}}},
      {"yes", {{0.08, true, 280, 550, 2300, 1800}, {0.14, true, 550, 550, 1800, 1800}, {0.16, false, 5500, 5500, 7000, 7000, 0.45}}},
  };
  return r;
}

struct Speaker {
  double f0 = 140.0;          // Hz
  double formant_scale = 1.0;
  double tempo = 1.0;
  double onset_s = 0.2;
  double amplitude = 8000.0;
  double noise_snr_db = 30.0;
};

inline Speaker random_speaker(Rng& rng) {
  Speaker s;
  s.f0 = rng.uniform(90.0, 240.0);
  s.formant_scale = rng.uniform(0.88, 1.15);
  s.tempo = rng.uniform(0.8, 1.25);
  s.onset_s = rng.uniform(0.05, 0.35);
  s.amplitude = rng.uniform(3000.0, 12000.0);
  s.noise_snr_db = rng.uniform(18.0, 40.0);
  return s;
}

namespace detail {

inline double resonance(double f, double centre, double bandwidth) {
  const double x = (f - centre) / bandwidth;
  return 1.0 / (1.0 + x * x);
}

/// Two-pole resonator used to colour white noise around `centre`.
class Resonator {
 public:
  Resonator(double centre, double bandwidth) {
    const double r = std::exp(-std::numbers::pi * bandwidth / kSampleRateHz);
    a1_ = 2.0 * r * std::cos(2.0 * std::numbers::pi * centre / kSampleRateHz);
    a2_ = -r * r;
    g_ = 1.0 - r;
  }
  double step(double x) {
    const double y = g_ * x + a1_ * y1_ + a2_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a1_, a2_, g_, y1_ = 0.0, y2_ = 0.0;
};

}  // namespace detail

/// Renders one utterance; length may be under one second (the caller's WAV
/// keeps the short length so the decoder's padding path is exercised).
inline std::vector<std::int16_t> render(const WordRecipe& recipe, const Speaker& sp, Rng& rng,
                                        std::size_t length = kClipSamples) {
  std::vector<double> out(length, 0.0);
  const double fs = kSampleRateHz;
  std::size_t pos = std::size_t(sp.onset_s * fs);
  std::vector<double> phases(64, 0.0);
  for (double& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

  for (const auto& seg : recipe) {
    const auto n = std::size_t(seg.duration_s * sp.tempo * fs);
    const std::size_t ramp = std::min<std::size_t>(n / 2, std::size_t(0.015 * fs));
    detail::Resonator r1(seg.f1_start * sp.formant_scale, 400.0), r2(seg.f2_start * sp.formant_scale, 600.0);
    for (std::size_t i = 0; i < n && pos + i < length; ++i) {
      const double t = double(i) / double(std::max<std::size_t>(n - 1, 1));
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * double(i) / double(ramp));
      if (n - i <= ramp) env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * double(n - i) / double(ramp)));
      const double f1 = (seg.f1_start + (seg.f1_end - seg.f1_start) * t) * sp.formant_scale;
      const double f2 = (seg.f2_start + (seg.f2_end - seg.f2_start) * t) * sp.formant_scale;
      double v = 0.0;
      if (seg.voiced) {
        const double f0 = sp.f0 * (1.0 + 0.08 * (0.5 - t));
        for (std::size_t k = 1; k < phases.size(); ++k) {
          const double fk = f0 * double(k);
          if (fk > 5000.0) break;
          phases[k] += 2.0 * std::numbers::pi * fk / fs;
          const double a = detail::resonance(fk, f1, 90.0) + 0.6 * detail::resonance(fk, f2, 120.0);
          v += a * std::sin(phases[k]) / std::sqrt(double(k));
        }
        v *= 0.5;
      } else {
        const double w = rng.normal();
        v = 6.0 * (r1.step(w) + 0.7 * r2.step(w));
      }
      out[pos + i] += env * seg.gain * v;
    }
    pos += n;
  }

  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? sp.amplitude / peak : 0.0;
  double sig_pow = 0.0;
  for (double& v : out) {
    v *= scale;
    sig_pow += v * v;
  }
  sig_pow /= double(length);
  const double noise_rms = std::sqrt(sig_pow / std::pow(10.0, sp.noise_snr_db / 10.0));
  std::vector<std::int16_t> pcm(length);
  for (std::size_t i = 0; i < length; ++i) {
    const double v = std::round(out[i] + noise_rms * rng.normal());
    pcm[i] = std::int16_t(std::clamp(v, -32768.0, 32767.0));
  }
  return pcm;
}

inline std::vector<std::int16_t> render_word(const std::string& word, std::uint64_t seed,
                                             std::size_t length = kClipSamples) {
  Rng rng(seed);
  const auto sp = random_speaker(rng);
  return render(recipes().at(word), sp, rng, length);
}

struct CorpusOptions {
  std::vector<std::string> words;   // empty: every recipe
  std::size_t per_word = 100;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  double short_clip_fraction = 0.1;  // fraction written shorter than one second
  std::uint64_t seed = 1;
  std::size_t noise_files = 2;
  double noise_seconds = 20.0;
};

struct CorpusSummary {
  std::size_t files = 0, val = 0, test = 0;
};

/// Writes a corpus tree under `root` (created if needed).
inline CorpusSummary write_corpus(const std::string& root, const CorpusOptions& opt) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::vector<std::string> words = opt.words;
  if (words.empty())
    for (const auto& [w, _] : recipes()) words.push_back(w);

  Rng rng(opt.seed);
  CorpusSummary summary;
  std::ofstream val(fs::path(root) / "validation_list.txt"), test(fs::path(root) / "testing_list.txt");
  if (!val || !test) throw Error(Errc::io_failure, "cannot write split lists under " + root);
  for (const auto& w : words) {
    fs::create_directories(fs::path(root) / w);
    for (std::size_t k = 0; k < opt.per_word; ++k) {
      char name[64];
      const auto speaker_id = std::uint32_t(rng.next_u64());
      std::snprintf(name, sizeof name, "%08x_nohash_%zu.wav", speaker_id, k % 5);
      const std::string rel = w + "/" + name;
      const std::size_t length = rng.uniform01() < opt.short_clip_fraction
                                     ? std::size_t(rng.uniform(0.75, 0.99) * double(kClipSamples))
                                     : kClipSamples;
      const auto pcm = render_word(w, rng.next_u64(), length);
      write_wav_file((fs::path(root) / rel).string(), pcm);
      ++summary.files;
      const double u = rng.uniform01();
      if (u < opt.val_fraction) {
        val << rel << '\n';
        ++summary.val;
      } else if (u < opt.val_fraction + opt.test_fraction) {
        test << rel << '\n';
        ++summary.test;
      }
    }
  }
  if (opt.noise_files > 0) {
    const auto dir = fs::path(root) / "_background_noise_";
    fs::create_directories(dir);
    for (std::size_t f = 0; f < opt.noise_files; ++f) {
      std::vector<std::int16_t> noise(std::size_t(opt.noise_seconds * kSampleRateHz));
      double lp = 0.0;
      for (auto& s : noise) {
        const double w = rng.normal();
        lp = (f % 2) ? 0.95 * lp + 0.05 * w * 8.0 : w;  // alternate white / low-passed
        s = std::int16_t(std::clamp(std::round(2000.0 * lp), -32768.0, 32767.0));
      }
      write_wav_file((dir / ("noise_" + std::to_string(f) + ".wav")).string(), noise);
    }
  }
  return summary;
}

}  // namespace s2t::synth
