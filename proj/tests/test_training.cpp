#include <gtest/gtest.h>

#include <fstream>

#include "s2t/training.hpp"
#include "support/test_util.hpp"

using namespace s2t;

namespace {

// Two separable classes of random log-spectrogram-like inputs.
LabeledSet toy_set(std::size_t n, std::uint64_t seed) {
  LabeledSet s;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    FeatureMap fm(kFreqBins, kFrames);
    const bool hot = i % 2 == 0;
    for (std::size_t r = 0; r < kFreqBins; ++r)
      for (std::size_t c = 0; c < kFrames; ++c)
        fm(r, c) = float(rng.uniform(-2.0, 2.0) + ((hot && r > 30 && r < 60) ? 6.0 : 0.0));
    s.features.push_back(std::move(fm));
    s.targets.push_back(hot ? Trajectory{1, 0, 0, 1, 1} : Trajectory{});
    s.words.push_back(hot ? "two" : "bed");
  }
  return s;
}

TrainConfig small_config(int epochs) {
  TrainConfig cfg;
  cfg.filters2 = 32;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = 11;
  return cfg;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(TrainConfig, Validation) {
  auto cfg = small_config(0);
  try {
    cfg.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_config);
  }
  cfg = small_config(1);
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config(1);
  cfg.filters2 = 48;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config(1);
  cfg.adam.lr = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(small_config(1).validate());
}

TEST(TrainConfig, Defaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.adam.lr, 1e-3);
  EXPECT_EQ(cfg.adam.beta1, 0.9);
  EXPECT_EQ(cfg.adam.beta2, 0.999);
  EXPECT_EQ(cfg.adam.eps, 1e-8);
  EXPECT_EQ(cfg.dropout_rate, 0.5);
}

TEST(Evaluate, ZeroNetworkOnZeroLabelsIsExact) {
  const Network<float> net(NetworkSpec{32, 0.5});
  auto set = toy_set(6, 1);
  for (auto& t : set.targets) t = Trajectory{};
  const auto r = evaluate(net, set);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.count, 6u);
}

TEST(Evaluate, ZeroNetworkMseIsMeanSquaredLabel) {
  const Network<float> net(NetworkSpec{32, 0.5});
  const auto set = toy_set(6, 1);  // half {1,0,0,1,1}, half zero
  const auto r = evaluate(net, set, 4);
  EXPECT_NEAR(r.mse, 0.5 * 3.0 / 5.0, 1e-12);
  EXPECT_NEAR(r.rmse * r.rmse, r.mse, 1e-12);
  EXPECT_NEAR(r.per_word.at("two").first, std::sqrt(0.6), 1e-12);
  EXPECT_EQ(r.per_word.at("bed").first, 0.0);
}

TEST(Evaluate, EmptySetRejected) {
  const Network<float> net(NetworkSpec{32, 0.5});
  EXPECT_THROW(evaluate(net, LabeledSet{}), Error);
}

TEST(FullBatchDescent, LossIsMonotone) {
  auto net = build_network<double>(NetworkSpec{32, 0.5}, 5);
  const auto set = toy_set(6, 2);
  std::vector<const FeatureMap*> fms;
  for (const auto& f : set.features) fms.push_back(&f);
  const auto x = make_input<double>(fms);
  Tensor<double> t({6, 5});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 5; ++k) t[i * 5 + k] = set.targets[i][k];
  const auto losses = full_batch_descent(net, x, t, 50, 1e-3);
  ASSERT_EQ(losses.size(), 50u);
  for (std::size_t s = 1; s < losses.size(); ++s) EXPECT_LE(losses[s], losses[s - 1] + 1e-9) << "step " << s;
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Train, ReportInvariantsAndFiles) {
  support::TempDir dir;
  auto cfg = small_config(4);
  cfg.out_dir = dir.file("run");
  std::vector<int> seen;
  const auto out = train_on(cfg, toy_set(20, 3), toy_set(6, 4), {}, [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3, 4}));
  ASSERT_EQ(out.report.epochs.size(), 4u);
  double min_val = 1e9;
  for (const auto& e : out.report.epochs) {
    EXPECT_NEAR(e.val_rmse * e.val_rmse, e.val_mse, 1e-12);
    EXPECT_NEAR(e.train_rmse * e.train_rmse, e.train_mse, 1e-12);
    min_val = std::min(min_val, e.val_rmse);
  }
  EXPECT_EQ(out.report.best_val_rmse, min_val);
  EXPECT_LE(out.report.best_val_rmse, out.report.epochs.back().val_rmse);
  EXPECT_EQ(out.best.meta.epoch, out.report.best_epoch);

  std::ifstream csv(dir.file("run/report.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "epoch,train_mse,train_rmse,val_mse,val_rmse,seconds");
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 4u);

  const auto best = load_checkpoint(dir.file("run/best.ckpt"));
  EXPECT_EQ(best.meta.epoch, out.report.best_epoch);
  const auto r = evaluate(best.network, toy_set(6, 4));
  EXPECT_NEAR(r.rmse, out.report.best_val_rmse, 1e-12);
  EXPECT_EQ(load_checkpoint(dir.file("run/last.ckpt")).meta.epoch, 4);
}

TEST(Train, SameSeedIsBitReproducible) {
  support::TempDir dir;
  auto cfg = small_config(2);
  cfg.out_dir = dir.file("a");
  const auto a = train_on(cfg, toy_set(16, 3), toy_set(4, 4));
  cfg.out_dir = dir.file("b");
  const auto b = train_on(cfg, toy_set(16, 3), toy_set(4, 4));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.report.epochs[i].train_mse, b.report.epochs[i].train_mse);
    EXPECT_EQ(a.report.epochs[i].val_mse, b.report.epochs[i].val_mse);
  }
  EXPECT_EQ(read_all(dir.file("a/best.ckpt")), read_all(dir.file("b/best.ckpt")));
  EXPECT_EQ(read_all(dir.file("a/last.ckpt")), read_all(dir.file("b/last.ckpt")));
}

TEST(Train, EmptySplitsRejected) {
  const auto cfg = small_config(1);
  try {
    train_on(cfg, LabeledSet{}, toy_set(4, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_dataset);
  }
  EXPECT_THROW(train_on(cfg, toy_set(4, 1), LabeledSet{}), Error);
}

TEST(Train, LearnsSeparableToyProblem) {
  auto cfg = small_config(25);
  cfg.dropout_rate = 0.0;
  const auto out = train_on(cfg, toy_set(16, 3), toy_set(8, 9));
  EXPECT_LT(out.report.best_val_rmse, 0.5 * out.report.epochs.front().val_rmse + 0.05);
}
