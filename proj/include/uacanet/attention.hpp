#pragma once

// Parallel axial attention and the encoder/decoder blocks built on it.

#include <array>

#include "uacanet/nn.hpp"

namespace uacanet {

enum class Axis { horizontal, vertical };

inline const char* axis_name(Axis axis) { return axis == Axis::horizontal ? "horizontal" : "vertical"; }

/// Non-local attention restricted to one spatial axis: every row
/// (horizontal) or column (vertical) attends over its own positions.
/// out = x + out_proj(softmax(q k^T) v)
template <typename T>
struct AxialAttention {
  Axis axis = Axis::horizontal;
  std::int64_t reduction = 8;
  Conv2d<T> query, key, value, out_proj;

  AxialAttention() = default;
  AxialAttention(Initializer& init, std::int64_t channels, Axis ax, std::int64_t r = 8)
      : axis(ax), reduction(r) {
    if (r < 1 || channels % r != 0) {
      throw std::invalid_argument(detail::concat_msg("axial attention: reduction ", r,
                                                     " does not divide ", channels, " channels"));
    }
    query = Conv2d<T>::pointwise(init, channels, channels / r);
    key = Conv2d<T>::pointwise(init, channels, channels / r);
    value = Conv2d<T>::pointwise(init, channels, channels);
    out_proj = Conv2d<T>::pointwise(init, channels, channels);
  }

  std::int64_t channels() const { return value.in_channels(); }

  /// Row-stochastic affinities: [B,H,W,W] (horizontal) or [B,W,H,H] (vertical).
  Tensor<T> affinity(const Tensor<T>& x) const {
    const auto q = query(x), k = key(x);
    if (axis == Axis::horizontal) {
      return softmax_last(matmul(permute(q, {0, 2, 3, 1}), permute(k, {0, 2, 1, 3})));
    }
    return softmax_last(matmul(permute(q, {0, 3, 2, 1}), permute(k, {0, 3, 1, 2})));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != channels()) {
      throw ShapeError(detail::concat_msg("axial attention expects ", channels(),
                                          " channels, got ", shape_str(x.shape())));
    }
    const auto attn = affinity(x);
    const auto v = value(x);
    Tensor<T> attended;
    if (axis == Axis::horizontal) {
      attended = permute(matmul(attn, permute(v, {0, 2, 3, 1})), {0, 3, 1, 2});
    } else {
      attended = permute(matmul(attn, permute(v, {0, 3, 2, 1})), {0, 3, 2, 1});
    }
    return add(x, out_proj(attended));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    out_proj.collect(prefix + ".out", out);
  }
};

/// Horizontal and vertical axial attention evaluated on the same input and
/// summed element-wise. No positional encoding.
template <typename T>
struct ParallelAxialAttention {
  AxialAttention<T> horizontal;
  AxialAttention<T> vertical;

  ParallelAxialAttention() = default;
  ParallelAxialAttention(Initializer& init, std::int64_t channels, std::int64_t r = 8)
      : horizontal(init, channels, Axis::horizontal, r), vertical(init, channels, Axis::vertical, r) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return add(horizontal(x), vertical(x)); }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    horizontal.collect(prefix + ".h", out);
    vertical.collect(prefix + ".v", out);
  }
};

template <typename T>
Tensor<T> paa(const Tensor<T>& x, const AxialAttention<T>& h_params, const AxialAttention<T>& v_params) {
  return add(h_params(x), v_params(x));
}

/// RFB-style encoder. Branch 0 is a point-wise reduction; branches 1..3 add
/// a 1xk / kx1 pair and a 3x3 conv dilated by 3, 5, 7. Each branch ends in a
/// PAA block; the concatenated branches are fused and added to a point-wise
/// residual of the input.
template <typename T>
struct PAAEncoder {
  static constexpr std::array<int, 3> kKernels{3, 5, 7};

  std::array<std::vector<ConvNormAct<T>>, 4> branches;
  std::array<ParallelAxialAttention<T>, 4> attention;
  ConvNormAct<T> fuse;
  ConvNormAct<T> residual;
  bool use_paa = true;
  std::int64_t in_channels = 0;

  PAAEncoder() = default;
  PAAEncoder(Initializer& init, std::int64_t cin, std::int64_t width, bool with_paa = true,
             std::int64_t r = 8)
      : use_paa(with_paa), in_channels(cin) {
    branches[0].emplace_back(init, cin, width, 1, 1, Conv2dOptions{});
    for (std::size_t b = 0; b < kKernels.size(); ++b) {
      const int k = kKernels[b];
      auto& stack = branches[b + 1];
      stack.emplace_back(init, cin, width, 1, 1, Conv2dOptions{});
      stack.emplace_back(init, width, width, 1, k, Conv2dOptions{1, 0, k / 2, 1});
      stack.emplace_back(init, width, width, k, 1, Conv2dOptions{1, k / 2, 0, 1});
      stack.emplace_back(init, width, width, 3, 3, Conv2dOptions::same(3, 3, k));
    }
    if (use_paa) {
      for (auto& a : attention) a = ParallelAxialAttention<T>(init, width, r);
    }
    fuse = ConvNormAct<T>(init, 4 * width, width, 3, 3, Conv2dOptions::same(3, 3), false);
    residual = ConvNormAct<T>(init, cin, width, 1, 1, Conv2dOptions{}, false);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != in_channels) {
      throw ShapeError(detail::concat_msg("PAA encoder expects ", in_channels, " channels, got ",
                                          shape_str(x.shape())));
    }
    std::vector<Tensor<T>> outs;
    for (std::size_t b = 0; b < branches.size(); ++b) {
      Tensor<T> y = x;
      for (const auto& layer : branches[b]) y = layer(y);
      if (use_paa) y = attention[b](y);
      outs.push_back(y);
    }
    return relu(add(fuse(concat_channels(outs)), residual(x)));
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    for (std::size_t b = 0; b < branches.size(); ++b) {
      for (std::size_t l = 0; l < branches[b].size(); ++l)
        branches[b][l].collect(detail::concat_msg(prefix, ".branch", b, ".", l), out);
      if (use_paa) attention[b].collect(detail::concat_msg(prefix, ".branch", b, ".paa"), out);
    }
    fuse.collect(prefix + ".fuse", out);
    residual.collect(prefix + ".residual", out);
  }
};

template <typename T>
struct DecoderOutput {
  Tensor<T> feature;
  Tensor<T> logit;
};

/// Fuses three encoder scales at the finest resolution, refines with PAA and
/// predicts a 1-channel saliency logit.
template <typename T>
struct PAADecoder {
  ConvNormAct<T> fuse1;
  ConvNormAct<T> fuse2;
  ParallelAxialAttention<T> attention;
  Conv2d<T> head;
  bool use_paa = true;

  PAADecoder() = default;
  PAADecoder(Initializer& init, std::int64_t width, bool with_paa = true, std::int64_t r = 8)
      : fuse1(init, 3 * width, width, 3, 3, Conv2dOptions::same(3, 3)),
        fuse2(init, width, width, 3, 3, Conv2dOptions::same(3, 3)),
        use_paa(with_paa) {
    if (use_paa) attention = ParallelAxialAttention<T>(init, width, r);
    head = Conv2d<T>::pointwise(init, width, 1);
  }

  DecoderOutput<T> operator()(const Tensor<T>& e2, const Tensor<T>& e3, const Tensor<T>& e4) const {
    const auto h = e2.dim(2), w = e2.dim(3);
    if (e3.dim(2) * 2 != h || e3.dim(3) * 2 != w || e4.dim(2) * 4 != h || e4.dim(3) * 4 != w) {
      throw ShapeError(detail::concat_msg("PAA decoder expects scales 1, 1/2, 1/4; got ",
                                          shape_str(e2.shape()), ", ", shape_str(e3.shape()), ", ",
                                          shape_str(e4.shape())));
    }
    auto fused = concat_channels<T>({e2, bilinear_resize(e3, h, w), bilinear_resize(e4, h, w)});
    auto feat = fuse2(fuse1(fused));
    if (use_paa) feat = attention(feat);
    return {feat, head(feat)};
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    fuse1.collect(prefix + ".fuse1", out);
    fuse2.collect(prefix + ".fuse2", out);
    if (use_paa) attention.collect(prefix + ".paa", out);
    head.collect(prefix + ".head", out);
  }
};

}  // namespace uacanet
