#pragma once

// Central finite-difference checks of every hand-written backward pass, in
// double precision. Each kernel is reduced to the scalar L = sum(r * f(x))
// with a fixed random projection r, so the analytic input gradient is the
// backward pass fed with gy = r.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s2t/layers.hpp"
#include "s2t/optim.hpp"

namespace s2t::gradcheck {

using TensorD = Tensor<double>;

struct KernelResult {
  std::string kernel;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;

/// |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by 0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline TensorD random_tensor(Shape dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(dims));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Compares `analytic` against central differences of `loss` w.r.t. `param`.
inline double compare(TensorD& param, const TensorD& analytic, const std::function<double()>& loss,
                      std::size_t& probes) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + kStep;
    const double up = loss();
    param[i] = saved - kStep;
    const double down = loss();
    param[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * kStep)));
    ++probes;
  }
  return worst;
}

inline KernelResult check_conv2d(Rng& rng) {
  ConvLayer<double> layer(3, 3, 2, 2);
  layer.weight = random_tensor(layer.weight.dims(), rng);
  layer.bias = random_tensor(layer.bias.dims(), rng);
  auto x = random_tensor({2, 5, 4, 2}, rng);
  const auto r = random_tensor(conv2d(x, layer).dims(), rng);
  const auto g = conv2d_backward(x, layer, r);
  auto loss = [&] { return dot(r, conv2d(x, layer)); };
  KernelResult k{"conv2d"};
  k.max_rel_error = std::max({compare(x, g.input, loss, k.probes), compare(layer.weight, g.weight, loss, k.probes),
                              compare(layer.bias, g.bias, loss, k.probes)});
  return k;
}

inline KernelResult check_maxpool2d(Rng& rng) {
  // Distinct values spaced well above the step so no perturbation flips a max.
  TensorD x({2, 6, 5, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(i) * 0.01;
  rng.shuffle(x.values().begin(), x.values().end());
  const auto pooled = maxpool2d(x, 3, 2, 3, 2);
  const auto r = random_tensor(pooled.output.dims(), rng);
  const auto gx = maxpool2d_backward(x.dims(), pooled.argmax, r);
  auto loss = [&] { return dot(r, maxpool2d(x, 3, 2, 3, 2).output); };
  KernelResult k{"maxpool2d"};
  k.max_rel_error = compare(x, gx, loss, k.probes);
  return k;
}

inline KernelResult check_batchnorm(Rng& rng) {
  BatchNormLayer<double> layer(3);
  layer.gamma = random_tensor({3}, rng, 0.5, 1.5);
  layer.beta = random_tensor({3}, rng);
  auto x = random_tensor({4, 3, 2, 3}, rng);
  const auto r = random_tensor(x.dims(), rng);
  BatchNormCache<double> cache;
  auto scratch = layer;
  (void)batchnorm_train(x, scratch, &cache);
  const auto g = batchnorm_backward(cache, layer, r);
  auto loss = [&] {
    auto l = layer;  // running statistics are updated on a throwaway copy
    return dot(r, batchnorm_train(x, l));
  };
  KernelResult k{"batchnorm"};
  k.max_rel_error = std::max({compare(x, g.input, loss, k.probes), compare(layer.gamma, g.gamma, loss, k.probes),
                              compare(layer.beta, g.beta, loss, k.probes)});
  return k;
}

inline KernelResult check_dense(Rng& rng) {
  DenseLayer<double> layer(6, 4);
  layer.weight = random_tensor(layer.weight.dims(), rng);
  layer.bias = random_tensor(layer.bias.dims(), rng);
  auto x = random_tensor({3, 6}, rng);
  const auto r = random_tensor({3, 4}, rng);
  const auto g = dense_backward(x, layer, r);
  auto loss = [&] { return dot(r, dense(x, layer)); };
  KernelResult k{"dense"};
  k.max_rel_error = std::max({compare(x, g.input, loss, k.probes), compare(layer.weight, g.weight, loss, k.probes),
                              compare(layer.bias, g.bias, loss, k.probes)});
  return k;
}

inline KernelResult check_relu(Rng& rng) {
  // Probed away from the kink: |x| >= 0.05.
  auto x = random_tensor({4, 7}, rng, 0.05, 1.0);
  for (auto& v : x.values())
    if (rng.uniform01() < 0.5) v = -v;
  const auto r = random_tensor(x.dims(), rng);
  const auto gx = relu_backward(x, r);
  auto loss = [&] { return dot(r, relu(x)); };
  KernelResult k{"relu"};
  k.max_rel_error = compare(x, gx, loss, k.probes);
  return k;
}

inline KernelResult check_mse_loss(Rng& rng) {
  const auto desired = random_tensor({3, kFingers}, rng, 0.0, 1.0);
  auto inferred = random_tensor({3, kFingers}, rng, 0.0, 1.0);
  const auto g = mse_loss(desired, inferred).grad;
  auto loss = [&] { return mse_loss(desired, inferred).mse; };
  KernelResult k{"mse_loss"};
  k.max_rel_error = compare(inferred, g, loss, k.probes);
  return k;
}

inline std::vector<KernelResult> run_all(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<KernelResult> out;
  out.push_back(check_conv2d(rng));
  out.push_back(check_maxpool2d(rng));
  out.push_back(check_batchnorm(rng));
  out.push_back(check_dense(rng));
  out.push_back(check_relu(rng));
  out.push_back(check_mse_loss(rng));
  return out;
}

inline bool all_pass(const std::vector<KernelResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const KernelResult& k) { return k.max_rel_error < kTolerance; });
}

}  // namespace s2t::gradcheck
