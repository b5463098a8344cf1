#include <gtest/gtest.h>

#include <sstream>

#include "s2t/model.hpp"
#include "support/test_util.hpp"

using namespace s2t;

TEST(Network, ParameterCountsMatchTable) {
  const auto net = build_network<float>(NetworkSpec{256, 0.5}, 1);
  const auto rows = net.summary();
  std::vector<std::size_t> counts;
  for (const auto& r : rows)
    if (r.parameters) counts.push_back(r.parameters);
  EXPECT_EQ(counts, (std::vector<std::size_t>{568, 32, 71936, 1024, 98368, 325}));
  EXPECT_EQ(net.trainable_count(), 171725u);
  EXPECT_EQ(net.stored_count(), 172253u);
  EXPECT_EQ(net.stored_count() - net.trainable_count(), 528u);
}

TEST(Network, ShapeChainMatchesTable) {
  const auto net = build_network<float>(NetworkSpec{256, 0.5}, 1);
  const std::vector<Shape> expected{{129, 71, 1}, {120, 65, 8}, {17, 13, 8}, {17, 13, 8}, {11, 9, 256}, {2, 3, 256},
                                    {2, 3, 256},  {1536},       {64},        {64},        {5}};
  const auto rows = net.summary();
  ASSERT_EQ(rows.size(), expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].output_shape, expected[i]) << "row " << i;
}

TEST(Network, SecondConvCountFormula) {
  for (int f : {32, 64, 128, 256}) {
    const Network<float> net(NetworkSpec{f, 0.5});
    EXPECT_EQ(net.conv2.parameter_count(), std::size_t(7 * 5 * 8 * f + f));
    EXPECT_EQ(net.dense1.in_features(), std::size_t(6 * f));
  }
  EXPECT_EQ(Network<float>(NetworkSpec{64, 0.5}).conv2.parameter_count(), 17984u);
}

TEST(Network, InvalidFilterCountRejected) {
  for (int f : {0, 16, 100, 512}) {
    try {
      build_network<float>(NetworkSpec{f, 0.5}, 1);
      FAIL() << f;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::invalid_spec);
    }
  }
}

TEST(Network, InitialisationState) {
  const auto net = build_network<float>(NetworkSpec{128, 0.5}, 3);
  for (float v : net.bn1.gamma.values()) EXPECT_EQ(v, 1.0f);
  for (float v : net.bn2.running_var.values()) EXPECT_EQ(v, 1.0f);
  for (float v : net.bn2.running_mean.values()) EXPECT_EQ(v, 0.0f);
  for (float v : net.conv2.bias.values()) EXPECT_EQ(v, 0.0f);
  const double L = glorot_limit(7 * 5 * 8, 7 * 5 * 128);
  for (float v : net.conv2.weight.values()) EXPECT_LE(std::abs(v), L + 1e-7);
  EXPECT_NE(net.conv2.weight, Tensor<float>(net.conv2.weight.dims()));
}

TEST(Network, OutputContract) {
  const auto net = support::random_network(32, 4);
  Rng rng(1);
  Tensor<float> x({3, 129, 71, 1});
  for (auto& v : x.values()) v = float(rng.uniform(-23.0, 25.0));
  const auto y = net.infer(x);
  EXPECT_EQ(y.dims(), (Shape{3, 5}));
  for (float v : y.values()) EXPECT_GE(v, 0.0f);
  EXPECT_EQ(y, net.infer(x));  // deterministic
}

TEST(Network, ZeroWeightsGiveZeroOutput) {
  const Network<float> net(NetworkSpec{32, 0.5});
  Tensor<float> x({1, 129, 71, 1}, 4.0f);
  const auto y = net.infer(x);
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Network, WrongInputShapeRejected) {
  const auto net = build_network<float>(NetworkSpec{32, 0.5}, 1);
  EXPECT_THROW(net.infer(Tensor<float>({1, 128, 71, 1})), Error);
}

TEST(Network, DescribeTableSumsToStoredTotal) {
  std::ostringstream os;
  print_summary(os, build_network<float>(NetworkSpec{256, 0.5}, 0));
  const auto s = os.str();
  EXPECT_NE(s.find("Total params: 172253"), std::string::npos);
  EXPECT_NE(s.find("Trainable params: 171725"), std::string::npos);
  EXPECT_NE(s.find("120 x 65 x 8"), std::string::npos);
  EXPECT_NE(s.find("2 x 3 x 256"), std::string::npos);
}

TEST(Network, DoubleCastAgreesWithFloat) {
  const auto net = support::random_network(32, 6);
  const auto net64 = net.cast<double>();
  Rng rng(2);
  Tensor<float> x({2, 129, 71, 1});
  for (auto& v : x.values()) v = float(rng.uniform(-10.0, 10.0));
  const auto a = net.infer(x);
  const auto b = net64.infer(x.cast<double>());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-3 * (1.0 + std::abs(b[i])));
}
