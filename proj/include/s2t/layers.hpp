#pragma once

// Forward/backward kernels for the network. Activations are batched NHWC
// tensors ([N, H, W, C]) or [N, features] matrices. Every reduction runs in a
// fixed order, so results are bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "s2t/tensor.hpp"

namespace s2t {

enum class Mode { train, infer };

// ---------------------------------------------------------------- convolution

template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // out x kh x kw x in
  Tensor<T> bias;    // out

  ConvLayer() = default;
  ConvLayer(std::size_t out, std::size_t kh, std::size_t kw, std::size_t in)
      : weight({out, kh, kw, in}), bias({out}) {}

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel_h() const { return weight.dim(1); }
  std::size_t kernel_w() const { return weight.dim(2); }
  std::size_t in_channels() const { return weight.dim(3); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

namespace detail {

template <typename T>
void check_conv_input(const Tensor<T>& x, const ConvLayer<T>& layer) {
  if (x.rank() != 4 || x.dim(3) != layer.in_channels() || x.dim(1) < layer.kernel_h() ||
      x.dim(2) < layer.kernel_w()) {
    throw Error(Errc::shape_mismatch, "conv2d input " + shape_str(x.dims()) + " vs weight " +
                                          shape_str(layer.weight.dims()));
  }
}

}  // namespace detail

/// Valid cross-correlation with stride 1, plus bias. No activation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvLayer<T>& layer) {
  detail::check_conv_input(x, layer);
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t cout = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  const std::size_t row = kw * cin;  // one contiguous input run per kernel row
  const std::size_t k = kh * row;

  // Transposed weights [k][cout] so the innermost loop runs over output channels.
  std::vector<T> wt(k * cout);
  for (std::size_t c = 0; c < cout; ++c)
    for (std::size_t j = 0; j < k; ++j) wt[j * cout + c] = layer.weight[c * k + j];

  Tensor<T> y({n, oh, ow, cout});
  std::vector<T> acc(cout);
  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * h * w * cin;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::copy(layer.bias.data(), layer.bias.data() + cout, acc.begin());
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const T* xr = xb + ((oy + ky) * w + ox) * cin;
          const T* wr = wt.data() + ky * row * cout;
          for (std::size_t j = 0; j < row; ++j) {
            const T v = xr[j];
            const T* wc = wr + j * cout;
            T* a = acc.data();
            for (std::size_t c = 0; c < cout; ++c) a[c] += v * wc[c];
          }
        }
        std::copy(acc.begin(), acc.end(), y.data() + ((b * oh + oy) * ow + ox) * cout);
      }
    }
  }
  return y;
}

/// Gradients of conv2d. The input gradient is skipped when `need_input` is false
/// (first layer).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvLayer<T>& layer, const Tensor<T>& gy,
                             bool need_input = true) {
  detail::check_conv_input(x, layer);
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t cout = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  if (gy.dims() != Shape{n, oh, ow, cout}) {
    throw Error(Errc::shape_mismatch, "conv2d grad " + shape_str(gy.dims()) + " vs output " +
                                          shape_str({n, oh, ow, cout}));
  }
  const std::size_t row = kw * cin;
  const std::size_t k = kh * row;

  ConvGrads<T> g;
  g.bias = Tensor<T>({cout});
  std::vector<T> gwt(k * cout, T{});
  if (need_input) g.input = Tensor<T>(x.dims());

  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * h * w * cin;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* go = gy.data() + ((b * oh + oy) * ow + ox) * cout;
        for (std::size_t c = 0; c < cout; ++c) g.bias[c] += go[c];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const T* xr = xb + ((oy + ky) * w + ox) * cin;
          T* gr = gwt.data() + ky * row * cout;
          for (std::size_t j = 0; j < row; ++j) {
            const T v = xr[j];
            T* gc = gr + j * cout;
            for (std::size_t c = 0; c < cout; ++c) gc[c] += v * go[c];
          }
        }
        if (!need_input) continue;
        T* gxb = g.input.data() + b * h * w * cin;
        for (std::size_t c = 0; c < cout; ++c) {
          const T gv = go[c];
          if (gv == T{}) continue;
          const T* wc = layer.weight.data() + c * k;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            T* gxr = gxb + ((oy + ky) * w + ox) * cin;
            const T* wr = wc + ky * row;
            for (std::size_t j = 0; j < row; ++j) gxr[j] += gv * wr[j];
          }
        }
      }
    }
  }

  g.weight = Tensor<T>(layer.weight.dims());
  for (std::size_t c = 0; c < cout; ++c)
    for (std::size_t j = 0; j < k; ++j) g.weight[c * k + j] = gwt[j * cout + c];
  return g;
}

// ---------------------------------------------------------------- max pooling

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index feeding each output
};

/// Max pooling over [N, H, W, C]. Output dims are floor((H - pool) / stride) + 1,
/// which equals floor(H / stride) when pool == stride.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, std::size_t pool_h, std::size_t pool_w,
                        std::size_t stride_h, std::size_t stride_w) {
  if (x.rank() != 4 || pool_h == 0 || pool_w == 0 || stride_h == 0 || stride_w == 0 ||
      x.dim(1) < pool_h || x.dim(2) < pool_w) {
    throw Error(Errc::shape_mismatch, "maxpool2d input " + shape_str(x.dims()) + " vs pool " +
                                          std::to_string(pool_h) + "x" + std::to_string(pool_w));
  }
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), ch = x.dim(3);
  const std::size_t oh = (h - pool_h) / stride_h + 1, ow = (w - pool_w) / stride_w + 1;
  PoolResult<T> r{Tensor<T>({n, oh, ow, ch}), std::vector<std::size_t>(n * oh * ow * ch)};
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t c = 0; c < ch; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          bool first = true;
          // Row-major scan with strict '>' keeps the first maximum on ties.
          for (std::size_t py = 0; py < pool_h; ++py)
            for (std::size_t px = 0; px < pool_w; ++px) {
              const std::size_t i = ((b * h + oy * stride_h + py) * w + ox * stride_w + px) * ch + c;
              if (first || x[i] > best) {
                best = x[i];
                best_i = i;
                first = false;
              }
            }
          const std::size_t o = ((b * oh + oy) * ow + ox) * ch + c;
          r.output[o] = best;
          r.argmax[o] = best_i;
        }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_dims, const std::vector<std::size_t>& argmax,
                             const Tensor<T>& gy) {
  if (gy.size() != argmax.size()) {
    throw Error(Errc::shape_mismatch, "maxpool2d grad " + shape_str(gy.dims()) +
                                          " vs recorded outputs " + std::to_string(argmax.size()));
  }
  Tensor<T> gx(input_dims);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += gy[o];
  return gx;
}

// ---------------------------------------------------------------- batch norm

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;               // trainable
  Tensor<T> running_mean, running_var;  // statistics
  double epsilon = 1e-3;
  double momentum = 0.99;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels)
      : gamma({channels}, T(1)), beta({channels}), running_mean({channels}), running_var({channels}, T(1)) {}

  std::size_t channels() const { return gamma.size(); }
  std::size_t trainable_count() const { return 2 * channels(); }
  std::size_t stored_count() const { return 4 * channels(); }
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;      // xhat
  std::vector<T> inv_std;    // per channel
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

namespace detail {

template <typename T>
std::size_t bn_channels_check(const Tensor<T>& x, const BatchNormLayer<T>& layer) {
  if (x.rank() < 2 || x.dims().back() != layer.channels()) {
    throw Error(Errc::shape_mismatch, "batchnorm input " + shape_str(x.dims()) + " vs channels " +
                                          std::to_string(layer.channels()));
  }
  return layer.channels();
}

}  // namespace detail

/// Inference: normalizes with the running statistics.
template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNormLayer<T>& layer) {
  const std::size_t ch = detail::bn_channels_check(x, layer);
  std::vector<T> scale(ch), shift(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    const double s = double(layer.gamma[c]) / std::sqrt(double(layer.running_var[c]) + layer.epsilon);
    scale[c] = T(s);
    shift[c] = T(double(layer.beta[c]) - s * double(layer.running_mean[c]));
  }
  Tensor<T> y(x.dims());
  const std::size_t m = x.size() / ch;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < ch; ++c) y[i * ch + c] = x[i * ch + c] * scale[c] + shift[c];
  return y;
}

/// Training: batch statistics over N*H*W per channel; updates running stats.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, BatchNormLayer<T>& layer, BatchNormCache<T>* cache = nullptr) {
  const std::size_t ch = detail::bn_channels_check(x, layer);
  if (x.dim(0) < 2) {
    throw Error(Errc::degenerate_batch, "batchnorm train mode needs batch size >= 2, got " +
                                            std::to_string(x.dim(0)));
  }
  const std::size_t m = x.size() / ch;
  std::vector<double> mean(ch, 0.0), var(ch, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < ch; ++c) mean[c] += double(x[i * ch + c]);
  for (auto& v : mean) v /= double(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const double d = double(x[i * ch + c]) - mean[c];
      var[c] += d * d;
    }
  for (auto& v : var) v /= double(m);

  BatchNormCache<T> local;
  BatchNormCache<T>& cc = cache ? *cache : local;
  cc.normalized = Tensor<T>(x.dims());
  cc.inv_std.assign(ch, T{});
  for (std::size_t c = 0; c < ch; ++c) cc.inv_std[c] = T(1.0 / std::sqrt(var[c] + layer.epsilon));

  Tensor<T> y(x.dims());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const T xh = T((double(x[i * ch + c]) - mean[c]) * double(cc.inv_std[c]));
      cc.normalized[i * ch + c] = xh;
      y[i * ch + c] = layer.gamma[c] * xh + layer.beta[c];
    }

  const double mom = layer.momentum;
  for (std::size_t c = 0; c < ch; ++c) {
    layer.running_mean[c] = T(mom * double(layer.running_mean[c]) + (1.0 - mom) * mean[c]);
    layer.running_var[c] = T(mom * double(layer.running_var[c]) + (1.0 - mom) * var[c]);
  }
  return y;
}

/// Full batch-statistics chain rule.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormLayer<T>& layer,
                                     const Tensor<T>& gy) {
  const std::size_t ch = layer.channels();
  if (gy.dims() != cache.normalized.dims()) {
    throw Error(Errc::shape_mismatch, "batchnorm grad " + shape_str(gy.dims()) + " vs cached " +
                                          shape_str(cache.normalized.dims()));
  }
  const std::size_t m = gy.size() / ch;
  std::vector<double> sum_g(ch, 0.0), sum_gx(ch, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      sum_g[c] += double(gy[i * ch + c]);
      sum_gx[c] += double(gy[i * ch + c]) * double(cache.normalized[i * ch + c]);
    }
  BatchNormGrads<T> g{Tensor<T>(gy.dims()), Tensor<T>({ch}), Tensor<T>({ch})};
  for (std::size_t c = 0; c < ch; ++c) {
    g.gamma[c] = T(sum_gx[c]);
    g.beta[c] = T(sum_g[c]);
  }
  const double inv_m = 1.0 / double(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const double k = double(layer.gamma[c]) * double(cache.inv_std[c]) * inv_m;
      g.input[i * ch + c] = T(k * (double(m) * double(gy[i * ch + c]) - sum_g[c] -
                                   double(cache.normalized[i * ch + c]) * sum_gx[c]));
    }
  return g;
}

// ---------------------------------------------------------------- dense

template <typename T>
struct DenseLayer {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out) : weight({in, out}), bias({out}) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// y = x W + b for x of shape [N, in].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const DenseLayer<T>& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features()) {
    throw Error(Errc::shape_mismatch, "dense input " + shape_str(x.dims()) + " vs weight " +
                                          shape_str(layer.weight.dims()));
  }
  const std::size_t n = x.dim(0), in = layer.in_features(), out = layer.out_features();
  Tensor<T> y({n, out});
  for (std::size_t b = 0; b < n; ++b) {
    T* yr = y.data() + b * out;
    std::copy(layer.bias.data(), layer.bias.data() + out, yr);
    for (std::size_t i = 0; i < in; ++i) {
      const T v = x[b * in + i];
      const T* wr = layer.weight.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += v * wr[o];
    }
  }
  return y;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer, const Tensor<T>& gy) {
  const std::size_t n = x.dim(0), in = layer.in_features(), out = layer.out_features();
  if (gy.dims() != Shape{n, out}) {
    throw Error(Errc::shape_mismatch, "dense grad " + shape_str(gy.dims()) + " vs output " +
                                          shape_str({n, out}));
  }
  DenseGrads<T> g{Tensor<T>(x.dims()), Tensor<T>(layer.weight.dims()), Tensor<T>({out})};
  for (std::size_t b = 0; b < n; ++b) {
    const T* go = gy.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) g.bias[o] += go[o];
    for (std::size_t i = 0; i < in; ++i) {
      const T v = x[b * in + i];
      T* gw = g.weight.data() + i * out;
      const T* wr = layer.weight.data() + i * out;
      T s{};
      for (std::size_t o = 0; o < out; ++o) {
        gw[o] += v * go[o];
        s += wr[o] * go[o];
      }
      g.input[b * in + i] = s;
    }
  }
  return g;
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
  return y;
}

/// Gradient is zero where x <= 0, including x == 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  if (x.dims() != gy.dims()) {
    throw Error(Errc::shape_mismatch, "relu grad " + shape_str(gy.dims()) + " vs " + shape_str(x.dims()));
  }
  Tensor<T> gx(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{} ? gy[i] : T{};
  return gx;
}

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate); empty in infer mode
};

/// Inverted dropout. The mask is a pure function of the seed.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::uint64_t seed) {
  if (mode == Mode::infer || rate <= 0.0) return {x, {}};
  if (rate >= 1.0) throw Error(Errc::invalid_config, "dropout rate must be in [0, 1)");
  Rng rng(seed);
  const T keep_scale = T(1.0 / (1.0 - rate));
  DropoutResult<T> r{Tensor<T>(x.dims()), Tensor<T>(x.dims())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T m = rng.uniform01() < rate ? T{} : keep_scale;
    r.mask[i] = m;
    r.output[i] = x[i] * m;
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& gy) {
  if (mask.size() == 0) return gy;
  Tensor<T> gx(gy.dims());
  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * mask[i];
  return gx;
}

/// [N, H, W, C] -> [N, H*W*C], row-major.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() == 0) throw Error(Errc::shape_mismatch, "flatten of a scalar");
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

// ---------------------------------------------------------------- init

inline double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  if (fan_in == 0 || fan_out == 0) throw Error(Errc::invalid_spec, "glorot fan must be >= 1");
  return std::sqrt(6.0 / double(fan_in + fan_out));
}

/// i.i.d. U[-L, L] with L = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(Shape dims, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = glorot_limit(fan_in, fan_out);
  Tensor<T> t(std::move(dims));
  for (auto& v : t.values()) v = T(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
Tensor<T> glorot_uniform(Shape dims, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  Rng rng(seed);
  return glorot_uniform<T>(std::move(dims), fan_in, fan_out, rng);
}

}  // namespace s2t
