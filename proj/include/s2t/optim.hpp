#pragma once

#include <cmath>
#include <vector>

#include "s2t/tensor.hpp"

namespace s2t {

inline constexpr std::size_t kFingers = 5;

template <typename T>
struct LossResult {
  double mse = 0.0;
  Tensor<T> grad;  // d mse / d inferred
};

/// MSE = (1 / 5N) * sum over the batch of l'l with l = desired - inferred.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& desired, const Tensor<T>& inferred) {
  if (desired.dims() != inferred.dims() || desired.rank() != 2 || desired.dim(1) != kFingers) {
    throw Error(Errc::shape_mismatch, "mse_loss desired " + shape_str(desired.dims()) + " vs inferred " +
                                          shape_str(inferred.dims()));
  }
  const double norm = double(desired.size());  // 5N
  LossResult<T> r{0.0, Tensor<T>(inferred.dims())};
  for (std::size_t i = 0; i < desired.size(); ++i) {
    const double l = double(desired[i]) - double(inferred[i]);
    r.mse += l * l;
    r.grad[i] = T(-2.0 * l / norm);
  }
  r.mse /= norm;
  return r;
}

inline double rmse(double mse) {
  if (mse < 0.0 || std::isnan(mse)) throw Error(Errc::negative_input, "rmse of " + std::to_string(mse));
  return std::sqrt(mse);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

/// One bias-corrected Adam update over parallel lists of parameters and grads.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state) {
  if (params.size() != grads.size()) {
    throw Error(Errc::shape_mismatch, "adam: " + std::to_string(params.size()) + " params vs " +
                                          std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->dims());
      state.v.emplace_back(p->dims());
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(Errc::shape_mismatch, "adam state tracks " + std::to_string(state.m.size()) +
                                          " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t]->dims() != grads[t]->dims() || params[t]->dims() != state.m[t].dims()) {
      throw Error(Errc::shape_mismatch, "adam tensor " + std::to_string(t) + ": param " +
                                            shape_str(params[t]->dims()) + " grad " +
                                            shape_str(grads[t]->dims()));
    }
  }

  ++state.step_count;
  const auto& cfg = state.config;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step_count));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<T>& p = *params[t];
    const Tensor<T>& g = *grads[t];
    Tensor<T>& m = state.m[t];
    Tensor<T>& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]);
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      p[i] = T(double(p[i]) - cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
    }
  }
}

/// Plain gradient descent, used by the full-batch monotonicity check.
template <typename T>
void sgd_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads, double lr) {
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<T>& p = *params[t];
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = T(double(p[i]) - lr * double((*grads[t])[i]));
  }
}

}  // namespace s2t
