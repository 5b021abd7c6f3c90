#pragma once

// Parameterised building blocks shared by the network modules.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uacanet/ops.hpp"

namespace uacanet {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

/// Source of initial weights. Kaiming fan-in scaling for conv kernels,
/// zeros for biases and shifts, ones for norm scales.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> kaiming(Shape shape) {
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    return parameter(Tensor<T>::randn(std::move(shape), rng_, static_cast<T>(stddev)));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline std::int64_t norm_groups(std::int64_t channels, std::int64_t max_groups = 8) {
  for (std::int64_t g = std::min(channels, max_groups); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;  // empty when has_bias is false
  Conv2dOptions options;
  bool has_bias = true;

  Conv2d() = default;
  Conv2d(Initializer& init, std::int64_t cin, std::int64_t cout, std::int64_t kh, std::int64_t kw,
         Conv2dOptions opt = {}, bool with_bias = true)
      : weight(init.kaiming<T>({cout, cin, kh, kw})), options(opt), has_bias(with_bias) {
    if (has_bias) bias = parameter(Tensor<T>::zeros({cout}));
  }

  /// Point-wise (1x1) convolution.
  static Conv2d pointwise(Initializer& init, std::int64_t cin, std::int64_t cout) {
    return Conv2d(init, cin, cout, 1, 1);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return has_bias ? conv2d(x, weight, bias, options) : conv2d(x, weight, options);
  }

  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }

  void zero_() {
    std::fill(weight.data().begin(), weight.data().end(), T(0));
    if (has_bias) std::fill(bias.data().begin(), bias.data().end(), T(0));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (has_bias) out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct GroupNorm {
  std::int64_t groups = 1;
  Tensor<T> gamma;
  Tensor<T> beta;

  GroupNorm() = default;
  GroupNorm(std::int64_t channels, std::int64_t group_count)
      : groups(group_count),
        gamma(parameter(Tensor<T>::ones({channels}))),
        beta(parameter(Tensor<T>::zeros({channels}))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

/// conv (no bias, the norm's shift covers it) -> group norm -> optional relu
template <typename T>
struct ConvNormAct {
  Conv2d<T> conv;
  GroupNorm<T> norm;
  bool activate = true;

  ConvNormAct() = default;
  ConvNormAct(Initializer& init, std::int64_t cin, std::int64_t cout, std::int64_t kh,
              std::int64_t kw, Conv2dOptions opt, bool with_relu = true)
      : conv(init, cin, cout, kh, kw, opt, false), norm(cout, norm_groups(cout)), activate(with_relu) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = norm(conv(x));
    return activate ? relu(y) : y;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".norm", out);
  }
};

}  // namespace uacanet
