#pragma once

// The ten-layer speech-feature -> trajectory network:
//
//   in 129x71x1
//   conv 8 @ 10x7, relu      -> 120x65x8
//   maxpool 7x5 / 7x5        -> 17x13x8
//   batchnorm                -> 17x13x8
//   conv F @ 7x5, relu       -> 11x9xF
//   maxpool 5x3 / 5x3        -> 2x3xF
//   batchnorm                -> 2x3xF
//   flatten                  -> 6F
//   dense 64, relu           -> 64
//   dropout                  -> 64
//   dense 5, relu            -> 5
//
// F (filters2) is the only free architectural parameter.

#include <array>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "s2t/features.hpp"
#include "s2t/layers.hpp"
#include "s2t/optim.hpp"

namespace s2t {

struct NetworkSpec {
  int filters2 = 256;
  double dropout_rate = 0.5;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline constexpr std::array<int, 4> kAllowedFilters2{32, 64, 128, 256};

inline void validate_spec(const NetworkSpec& spec) {
  bool ok = false;
  for (int f : kAllowedFilters2) ok |= (f == spec.filters2);
  if (!ok) throw Error(Errc::invalid_spec, "filters2 must be one of 32/64/128/256, got " + std::to_string(spec.filters2));
  if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0)) {
    throw Error(Errc::invalid_spec, "dropout_rate must be in [0, 1), got " + std::to_string(spec.dropout_rate));
  }
}

namespace arch {
inline constexpr std::size_t kConv1Filters = 8, kConv1H = 10, kConv1W = 7;
inline constexpr std::size_t kPool1H = 7, kPool1W = 5;
inline constexpr std::size_t kConv2H = 7, kConv2W = 5;
inline constexpr std::size_t kPool2H = 5, kPool2W = 3;
inline constexpr std::size_t kHidden = 64;
}  // namespace arch

/// One row of the layer summary table.
struct LayerRow {
  int index;
  std::string type;
  std::string filters;
  std::string filter_size;
  std::string stride;
  std::string activation;
  Shape output_shape;  // without batch
  std::size_t parameters;  // stored, including batchnorm running statistics
  std::size_t trainable;
};

template <typename T>
struct ForwardCache {
  Tensor<T> input;
  Tensor<T> conv1_out, relu1_out;
  PoolResult<T> pool1;
  BatchNormCache<T> bn1;
  Tensor<T> bn1_out;
  Tensor<T> conv2_out, relu2_out;
  PoolResult<T> pool2;
  BatchNormCache<T> bn2;
  Tensor<T> flat;
  Tensor<T> dense1_out, relu3_out;
  Tensor<T> dropout_mask;
  Tensor<T> dropped;
  Tensor<T> dense2_out;
  Tensor<T> output;
};

template <typename T>
class Network {
 public:
  NetworkSpec spec;
  ConvLayer<T> conv1;
  BatchNormLayer<T> bn1;
  ConvLayer<T> conv2;
  BatchNormLayer<T> bn2;
  DenseLayer<T> dense1;
  DenseLayer<T> dense2;

  Network() : Network(NetworkSpec{}) {}

  /// Zero-initialized layers with the right shapes; see build_network for init.
  explicit Network(NetworkSpec s) : spec(s) {
    validate_spec(spec);
    const auto f2 = std::size_t(spec.filters2);
    conv1 = ConvLayer<T>(arch::kConv1Filters, arch::kConv1H, arch::kConv1W, 1);
    bn1 = BatchNormLayer<T>(arch::kConv1Filters);
    conv2 = ConvLayer<T>(f2, arch::kConv2H, arch::kConv2W, arch::kConv1Filters);
    bn2 = BatchNormLayer<T>(f2);
    dense1 = DenseLayer<T>(flat_size(), arch::kHidden);
    dense2 = DenseLayer<T>(arch::kHidden, kFingers);
  }

  std::size_t flat_size() const {
    const auto [h, w] = pool2_hw();
    return h * w * std::size_t(spec.filters2);
  }

  /// Trainable tensors in a fixed order (matching gradients()).
  std::vector<Tensor<T>*> parameters() {
    return {&conv1.weight, &conv1.bias, &bn1.gamma,     &bn1.beta,     &conv2.weight, &conv2.bias,
            &bn2.gamma,    &bn2.beta,   &dense1.weight, &dense1.bias, &dense2.weight, &dense2.bias};
  }

  /// Every stored tensor with its checkpoint name, in declaration order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
    return {{"conv1.weight", &conv1.weight},     {"conv1.bias", &conv1.bias},
            {"bn1.gamma", &bn1.gamma},           {"bn1.beta", &bn1.beta},
            {"bn1.running_mean", &bn1.running_mean}, {"bn1.running_var", &bn1.running_var},
            {"conv2.weight", &conv2.weight},     {"conv2.bias", &conv2.bias},
            {"bn2.gamma", &bn2.gamma},           {"bn2.beta", &bn2.beta},
            {"bn2.running_mean", &bn2.running_mean}, {"bn2.running_var", &bn2.running_var},
            {"dense1.weight", &dense1.weight},   {"dense1.bias", &dense1.bias},
            {"dense2.weight", &dense2.weight},   {"dense2.bias", &dense2.bias}};
  }
  std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const {
    auto v = const_cast<Network*>(this)->named_tensors();
    return {v.begin(), v.end()};
  }

  std::size_t trainable_count() const {
    return conv1.parameter_count() + bn1.trainable_count() + conv2.parameter_count() +
           bn2.trainable_count() + dense1.parameter_count() + dense2.parameter_count();
  }
  std::size_t stored_count() const {
    return conv1.parameter_count() + bn1.stored_count() + conv2.parameter_count() + bn2.stored_count() +
           dense1.parameter_count() + dense2.parameter_count();
  }

  /// Layer summary derived from the layer dimensions by shape algebra.
  std::vector<LayerRow> summary() const {
    const std::size_t c1 = conv1.out_channels();
    const std::size_t f2 = conv2.out_channels();
    const std::size_t h1 = kFreqBins - conv1.kernel_h() + 1, w1 = kFrames - conv1.kernel_w() + 1;
    const std::size_t ph1 = h1 / arch::kPool1H, pw1 = w1 / arch::kPool1W;
    const std::size_t h2 = ph1 - conv2.kernel_h() + 1, w2 = pw1 - conv2.kernel_w() + 1;
    const std::size_t ph2 = h2 / arch::kPool2H, pw2 = w2 / arch::kPool2W;
    auto dims = [](std::size_t a, std::size_t b) { return std::to_string(a) + " x " + std::to_string(b); };
    return {
        {0, "Input (Log of spectrogram)", "-", "-", "-", "-", {kFreqBins, kFrames, 1}, 0, 0},
        {1, "Convolution 2D", std::to_string(c1), dims(conv1.kernel_h(), conv1.kernel_w()), "1", "ReLU",
         {h1, w1, c1}, conv1.parameter_count(), conv1.parameter_count()},
        {2, "Max Pooling 2D", "-", dims(arch::kPool1H, arch::kPool1W), dims(arch::kPool1H, arch::kPool1W), "Max",
         {ph1, pw1, c1}, 0, 0},
        {3, "Batch normalization", "-", "-", "-", "-", {ph1, pw1, c1}, bn1.stored_count(), bn1.trainable_count()},
        {4, "Convolution 2D", std::to_string(f2), dims(conv2.kernel_h(), conv2.kernel_w()), "1", "ReLU",
         {h2, w2, f2}, conv2.parameter_count(), conv2.parameter_count()},
        {5, "Max Pooling 2D", "-", dims(arch::kPool2H, arch::kPool2W), dims(arch::kPool2H, arch::kPool2W), "Max",
         {ph2, pw2, f2}, 0, 0},
        {6, "Batch normalization", "-", "-", "-", "-", {ph2, pw2, f2}, bn2.stored_count(), bn2.trainable_count()},
        {7, "Flatten", "-", "-", "-", "-", {ph2 * pw2 * f2}, 0, 0},
        {8, "Dense", "-", "-", "-", "ReLU", {dense1.out_features()}, dense1.parameter_count(),
         dense1.parameter_count()},
        {9, "Drop out", "-", "-", "-", "-", {dense1.out_features()}, 0, 0},
        {10, "Dense", "-", "-", "-", "ReLU", {dense2.out_features()}, dense2.parameter_count(),
         dense2.parameter_count()},
    };
  }

  /// Inference-mode forward over [N, 129, 71, 1]; returns [N, 5] ReLU outputs.
  Tensor<T> infer(const Tensor<T>& x) const {
    check_input(x);
    auto a = relu(conv2d(x, conv1));
    a = maxpool2d(a, arch::kPool1H, arch::kPool1W, arch::kPool1H, arch::kPool1W).output;
    a = batchnorm_infer(a, bn1);
    a = relu(conv2d(a, conv2));
    a = maxpool2d(a, arch::kPool2H, arch::kPool2W, arch::kPool2H, arch::kPool2W).output;
    a = batchnorm_infer(a, bn2);
    a = relu(dense(flatten(a), dense1));
    return relu(dense(a, dense2));
  }

  /// Training-mode forward. Uses batch statistics (and updates running ones)
  /// and applies dropout with a mask drawn from `dropout_seed`.
  Tensor<T> forward_train(const Tensor<T>& x, ForwardCache<T>& c, std::uint64_t dropout_seed) {
    check_input(x);
    c.input = x;
    c.conv1_out = conv2d(x, conv1);
    c.relu1_out = relu(c.conv1_out);
    c.pool1 = maxpool2d(c.relu1_out, arch::kPool1H, arch::kPool1W, arch::kPool1H, arch::kPool1W);
    c.bn1_out = batchnorm_train(c.pool1.output, bn1, &c.bn1);
    c.conv2_out = conv2d(c.bn1_out, conv2);
    c.relu2_out = relu(c.conv2_out);
    c.pool2 = maxpool2d(c.relu2_out, arch::kPool2H, arch::kPool2W, arch::kPool2H, arch::kPool2W);
    c.flat = flatten(batchnorm_train(c.pool2.output, bn2, &c.bn2));
    c.dense1_out = dense(c.flat, dense1);
    c.relu3_out = relu(c.dense1_out);
    auto d = dropout(c.relu3_out, spec.dropout_rate, Mode::train, dropout_seed);
    c.dropped = std::move(d.output);
    c.dropout_mask = std::move(d.mask);
    c.dense2_out = dense(c.dropped, dense2);
    c.output = relu(c.dense2_out);
    return c.output;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::uint64_t dropout_seed = 0) {
    if (mode == Mode::infer) return infer(x);
    ForwardCache<T> c;
    return forward_train(x, c, dropout_seed);
  }

  /// Gradients for parameters(), in the same order, given d loss / d output.
  std::vector<Tensor<T>> backward(const ForwardCache<T>& c, const Tensor<T>& grad_output) const {
    auto g = relu_backward(c.dense2_out, grad_output);
    auto d2 = dense_backward(c.dropped, dense2, g);
    g = dropout_backward(c.dropout_mask, d2.input);
    g = relu_backward(c.dense1_out, g);
    auto d1 = dense_backward(c.flat, dense1, g);
    g = d1.input.reshaped(c.pool2.output.dims());
    auto b2 = batchnorm_backward(c.bn2, bn2, g);
    g = maxpool2d_backward(c.relu2_out.dims(), c.pool2.argmax, b2.input);
    g = relu_backward(c.conv2_out, g);
    auto k2 = conv2d_backward(c.bn1_out, conv2, g);
    auto b1 = batchnorm_backward(c.bn1, bn1, k2.input);
    g = maxpool2d_backward(c.relu1_out.dims(), c.pool1.argmax, b1.input);
    g = relu_backward(c.conv1_out, g);
    auto k1 = conv2d_backward(c.input, conv1, g, /*need_input=*/false);
    std::vector<Tensor<T>> out;
    out.reserve(12);
    for (auto* t : {&k1.weight, &k1.bias, &b1.gamma, &b1.beta, &k2.weight, &k2.bias, &b2.gamma, &b2.beta,
                    &d1.weight, &d1.bias, &d2.weight, &d2.bias}) {
      out.push_back(std::move(*t));
    }
    return out;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(spec);
    auto dst = out.named_tensors();
    auto src = named_tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    out.bn1.epsilon = bn1.epsilon;
    out.bn1.momentum = bn1.momentum;
    out.bn2.epsilon = bn2.epsilon;
    out.bn2.momentum = bn2.momentum;
    return out;
  }

 private:
  std::pair<std::size_t, std::size_t> pool2_hw() const {
    const std::size_t ph1 = (kFreqBins - arch::kConv1H + 1) / arch::kPool1H;
    const std::size_t pw1 = (kFrames - arch::kConv1W + 1) / arch::kPool1W;
    return {(ph1 - arch::kConv2H + 1) / arch::kPool2H, (pw1 - arch::kConv2W + 1) / arch::kPool2W};
  }

  static void check_input(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != kFreqBins || x.dim(2) != kFrames || x.dim(3) != 1) {
      throw Error(Errc::shape_mismatch, "network input " + shape_str(x.dims()) + ", expected Nx129x71x1");
    }
  }
};

/// Output-shape column for the given second-layer filter count.
inline std::vector<Shape> reference_shape_chain(int filters2) {
  const auto f = std::size_t(filters2);
  return {{129, 71, 1}, {120, 65, 8}, {17, 13, 8}, {17, 13, 8}, {11, 9, f}, {2, 3, f},
          {2, 3, f},    {6 * f},      {64},        {64},        {5}};
}

/// Glorot-uniform weights (conv fans are kh*kw*Cin and kh*kw*Cout), zero biases,
/// identity batchnorm. Throws InvalidSpec if the derived shape chain deviates
/// from the reference architecture.
template <typename T = float>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  Network<T> net(spec);
  const auto rows = net.summary();
  const auto ref = reference_shape_chain(spec.filters2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].output_shape != ref[i]) {
      throw Error(Errc::invalid_spec, "layer " + std::to_string(i) + " output " + shape_str(rows[i].output_shape) +
                                          " != " + shape_str(ref[i]));
    }
  }
  Rng rng(seed);
  auto init_conv = [&](ConvLayer<T>& l) {
    const std::size_t area = l.kernel_h() * l.kernel_w();
    l.weight = glorot_uniform<T>(l.weight.dims(), area * l.in_channels(), area * l.out_channels(), rng);
  };
  auto init_dense = [&](DenseLayer<T>& l) {
    l.weight = glorot_uniform<T>(l.weight.dims(), l.in_features(), l.out_features(), rng);
  };
  init_conv(net.conv1);
  init_conv(net.conv2);
  init_dense(net.dense1);
  init_dense(net.dense2);
  return net;
}

/// Stacks feature maps into a [N, 129, 71, 1] batch.
template <typename T = float>
Tensor<T> make_input(const std::vector<const FeatureMap*>& features) {
  Tensor<T> x({features.size(), kFreqBins, kFrames, 1});
  std::size_t off = 0;
  for (const auto* fm : features) {
    if (fm->rows != kFreqBins || fm->cols != kFrames) {
      throw Error(Errc::shape_mismatch, "feature map " + std::to_string(fm->rows) + "x" + std::to_string(fm->cols));
    }
    for (float v : fm->values) x[off++] = T(v);
  }
  return x;
}

template <typename T>
void print_summary(std::ostream& os, const Network<T>& net) {
  const auto rows = net.summary();
  os << std::left << std::setw(6) << "Layer" << std::setw(28) << "Type" << std::setw(10) << "# filters"
     << std::setw(12) << "Filter size" << std::setw(9) << "Stride" << std::setw(11) << "Activation"
     << std::setw(16) << "Output shape" << std::right << std::setw(13) << "# Parameters" << '\n';
  std::size_t total = 0;
  for (const auto& r : rows) {
    std::string shape;
    for (std::size_t i = 0; i < r.output_shape.size(); ++i) shape += (i ? " x " : "") + std::to_string(r.output_shape[i]);
    os << std::left << std::setw(6) << r.index << std::setw(28) << r.type << std::setw(10) << r.filters
       << std::setw(12) << r.filter_size << std::setw(9) << r.stride << std::setw(11) << r.activation
       << std::setw(16) << shape << std::right << std::setw(13) << r.parameters << '\n';
    total += r.parameters;
  }
  os << "Total params: " << total << '\n'
     << "Trainable params: " << net.trainable_count() << '\n'
     << "Non-trainable params: " << (net.stored_count() - net.trainable_count()) << '\n';
}

}  // namespace s2t
