#include <gtest/gtest.h>

#include <fstream>
#include <numbers>

#include "s2t/dataset.hpp"
#include "s2t/synth.hpp"
#include "support/test_util.hpp"

using namespace s2t;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// 3 words x 2 files, one file of each of two words in each list.
void mini_tree(const fs::path& root) {
  for (const char* w : {"two", "bed", "Yes"}) {
    fs::create_directories(root / w);
    for (int k = 0; k < 2; ++k) write_wav_file((root / w / ("s" + std::to_string(k) + ".wav")).string(), std::vector<std::int16_t>(100, std::int16_t(k)));
  }
  fs::create_directories(root / "_background_noise_");
  write_wav_file((root / "_background_noise_" / "n.wav").string(), std::vector<std::int16_t>(20000, 5));
  write_text(root / "README.md", "not a word directory\n");
  write_text(root / "validation_list.txt", "two/s0.wav\nbed/s1.wav\r\n");
  write_text(root / "testing_list.txt", "Yes/s0.wav\n");
}

}  // namespace

TEST(LabelMap, DefaultRows) {
  const auto m = default_label_map();
  EXPECT_EQ(m.label_of("two"), (Trajectory{1, 0, 0, 1, 1}));
  EXPECT_EQ(m.label_of("one"), (Trajectory{1, 0, 1, 1, 1}));
  EXPECT_EQ(m.label_of("bed"), Trajectory{});
  EXPECT_EQ(m.label_of("  TWO "), (Trajectory{1, 0, 0, 1, 1}));
  EXPECT_EQ(m.entries().size(), 8u);
}

TEST(LabelMap, ShippedJsonEqualsBuiltIn) {
  const auto shipped = LabelMap::from_file(std::string(S2T_SOURCE_DIR) + "/data/labels.json");
  EXPECT_EQ(shipped.entries(), default_label_map().entries());
}

TEST(LabelMap, CustomWord) {
  const auto m = LabelMap::from_json(nlohmann::json::parse(R"({"ok": [0.2, 0.7, 0, 0, 0]})"));
  EXPECT_EQ(m.label_of("ok"), (Trajectory{0.2f, 0.7f, 0, 0, 0}));
  EXPECT_EQ(m.label_of("two"), Trajectory{});
}

TEST(LabelMap, RejectsBadInput) {
  for (const char* bad : {R"({"__default__": [1,0,0,0,0]})", R"({"a": [1,2,3]})", R"({"a": [0,0,0,0,1.5]})",
                          R"({"a": [0,0,"x",0,0]})", R"([1,2])"}) {
    try {
      LabelMap::from_json(nlohmann::json::parse(bad));
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::invalid_config) << bad;
    }
  }
  EXPECT_NO_THROW(LabelMap::from_json(nlohmann::json::parse(R"({"__default__": [0,0,0,0,0]})")));
}

TEST(ScanDataset, MiniatureTreeMatchesExactly) {
  support::TempDir dir;
  mini_tree(dir.path());
  const auto m = scan_dataset(dir.path().string());
  ASSERT_EQ(m.examples.size(), 6u);
  std::map<std::string, Split> got;
  for (const auto& e : m.examples) got[e.relative] = e.split;
  const std::map<std::string, Split> expected{{"Yes/s0.wav", Split::val2}, {"Yes/s1.wav", Split::train},
                                              {"bed/s0.wav", Split::train}, {"bed/s1.wav", Split::val1},
                                              {"two/s0.wav", Split::val1},  {"two/s1.wav", Split::train}};
  EXPECT_EQ(got, expected);
  EXPECT_EQ(m.counts.at("yes").val2, 1u);  // word taken from the directory, lowercased
  EXPECT_EQ(m.totals().train, 3u);
  EXPECT_EQ(m.totals().val1, 2u);
  EXPECT_EQ(m.totals().val2, 1u);
}

TEST(ScanDataset, Errors) {
  support::TempDir dir;
  try {
    scan_dataset(dir.path().string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::missing_split_lists);
  }
  write_text(dir.path() / "validation_list.txt", "");
  write_text(dir.path() / "testing_list.txt", "");
  try {
    scan_dataset(dir.path().string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_dataset);
  }
}

TEST(ScanDataset, AccountingAgainstReferenceCounts) {
  DatasetManifest m;
  for (const auto& [w, c] : reference_counts()) m.counts[w] = c;
  const auto r = account(m);
  EXPECT_TRUE(r.totals_match);
  EXPECT_TRUE(r.command_train_match);
  EXPECT_TRUE(r.mismatches.empty());
  EXPECT_EQ(r.totals.total(), 105829u);
  EXPECT_EQ(r.command_train, 22750u);

  m.counts["three"].train = 3000;
  const auto r2 = account(m);
  EXPECT_FALSE(r2.totals_match);
  ASSERT_EQ(r2.mismatches.size(), 1u);
  EXPECT_NE(r2.mismatches[0].find("three/train"), std::string::npos);
}

TEST(Subset, StratifiedQuotasFollowWordShares) {
  support::TempDir dir;
  synth::CorpusOptions opt;
  opt.words = {"one", "two", "bed"};
  opt.per_word = 30;
  opt.noise_files = 0;
  synth::write_corpus(dir.path().string(), opt);
  const auto m = scan_dataset(dir.path().string());
  const auto s = stratified_subset(m, {{Split::train, 20}}, 3);
  EXPECT_EQ(s.totals().train, 20u);
  EXPECT_EQ(s.totals().val1, 0u);
  for (const auto& [w, c] : s.counts) {
    const double share = double(m.counts.at(w).train) / double(m.totals().train);
    EXPECT_LE(std::abs(double(c.train) - 20.0 * share), 1.0) << w;
  }
  EXPECT_EQ(stratified_subset(m, {{Split::train, 20}}, 3).examples.size(), s.examples.size());
  const auto f = filter_words(m, {"one"});
  EXPECT_EQ(f.counts.size(), 1u);
}

TEST(Batches, TenByFourGivesFourFourTwo) {
  std::vector<FeatureMap> fms(10, FeatureMap(kFreqBins, kFrames));
  BatchStream s(fms, std::vector<Trajectory>(10), 4, 1);
  EXPECT_EQ(s.batch_sizes(), (std::vector<std::size_t>{4, 4, 2}));
  std::vector<std::size_t> seen;
  while (!s.done()) {
    const auto b = s.next();
    EXPECT_EQ(b.features.dim(0), b.indices.size());
    seen.push_back(b.indices.size());
  }
  EXPECT_EQ(seen, (std::vector<std::size_t>{4, 4, 2}));
}

TEST(Batches, TrailingSingletonMergedForBatchNorm) {
  std::vector<FeatureMap> fms(9, FeatureMap(kFreqBins, kFrames));
  BatchStream s(fms, std::vector<Trajectory>(9), 4, 1);
  EXPECT_EQ(s.batch_sizes(), (std::vector<std::size_t>{4, 5}));
  EXPECT_THROW(BatchStream(fms, std::vector<Trajectory>(9), 1, 1), Error);
}

TEST(Batches, SeedDeterminesOrderAndEachExampleAppearsOnce) {
  std::vector<FeatureMap> fms(37, FeatureMap(kFreqBins, kFrames));
  std::vector<Trajectory> targets(37);
  for (std::size_t i = 0; i < 37; ++i) {
    fms[i].values[0] = float(i);
    targets[i][0] = float(i) / 37.0f;
  }
  auto order = [&](std::uint64_t seed) {
    BatchStream s(fms, targets, 8, seed);
    std::vector<std::size_t> o;
    while (!s.done()) {
      const auto b = s.next();
      for (std::size_t i = 0; i < b.indices.size(); ++i) {
        EXPECT_EQ(b.features[i * kFreqBins * kFrames], float(b.indices[i]));
        EXPECT_EQ(b.targets[i * 5], targets[b.indices[i]][0]);
      }
      o.insert(o.end(), b.indices.begin(), b.indices.end());
    }
    return o;
  };
  const auto a = order(5), b = order(5), c = order(6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 37; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Features, ParallelExtractionPreservesOrder) {
  support::TempDir dir;
  synth::CorpusOptions opt;
  opt.words = {"one", "off"};
  opt.per_word = 6;
  opt.noise_files = 0;
  synth::write_corpus(dir.path().string(), opt);
  const auto m = scan_dataset(dir.path().string());
  std::vector<const Example*> ex;
  for (const auto& e : m.examples) ex.push_back(&e);
  const auto serial = compute_features(ex, 1);
  const auto parallel = compute_features(ex, 4);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].values, parallel[i].values);
    EXPECT_EQ(serial[i].values, compute_feature(read_wav_file(ex[i]->path)).values);
  }
}

TEST(MixNoise, InfiniteSnrIsIdentity) {
  AudioClip c;
  c.samples[10] = 100;
  const std::vector<std::int16_t> noise(20000, 7);
  EXPECT_EQ(mix_noise(c, noise, std::numeric_limits<double>::infinity(), 1).samples, c.samples);
}

TEST(MixNoise, ContractErrors) {
  AudioClip silent;
  const std::vector<std::int16_t> noise(20000, 7);
  try {
    mix_noise(silent, noise, 10.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::zero_signal_power);
  }
  AudioClip c;
  c.samples[0] = 5;
  try {
    mix_noise(c, std::vector<std::int16_t>(15999, 1), 10.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::noise_too_short);
  }
}

namespace {

double measured_snr_db(double amplitude) {
  AudioClip c;
  for (std::size_t n = 0; n < kClipSamples; ++n)
    c.samples[n] = std::int16_t(std::lround(amplitude * std::sin(2 * std::numbers::pi * 440.0 * double(n) / 16000.0)));
  Rng rng(12);
  std::vector<std::int16_t> noise(48000);
  for (auto& v : noise) v = std::int16_t(std::lround(3000.0 * rng.normal()));
  const auto out = mix_noise(c, noise, 10.0, 77);
  double ps = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < kClipSamples; ++i) {
    ps += double(c.samples[i]) * c.samples[i];
    const double d = double(out.samples[i]) - double(c.samples[i]);
    pn += d * d;
  }
  return 10.0 * std::log10(ps / pn);
}

}  // namespace

TEST(MixNoise, HalfScaleSineAtTenDb) { EXPECT_NEAR(measured_snr_db(16383.0), 10.0, 0.1); }

TEST(MixNoise, FullScaleSineSaturates) {
  // At full scale the 16-bit clamp removes part of the added noise, so the
  // measured ratio lands about 1 dB above the requested 10 dB.
  const double snr = measured_snr_db(32767.0);
  EXPECT_GT(snr, 10.5);
  EXPECT_LT(snr, 11.5);
}
