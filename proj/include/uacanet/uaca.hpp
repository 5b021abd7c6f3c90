#pragma once

// Uncertainty augmented context attention.
//
// A guidance saliency map m in [0,1] is split into foreground, background
// and uncertain-area maps; each map pools the feature map into one context
// vector; every pixel is then re-expressed as a softmax-weighted mix of the
// projected context vectors, fused with the input and turned into a residual
// saliency logit on top of the guidance.

#include "uacanet/nn.hpp"

namespace uacanet {

template <typename T>
struct AreaMaps {
  Tensor<T> fg;
  Tensor<T> bg;
  Tensor<T> unc;
};

/// m_f = max(m - 0.5, 0), m_b = max(0.5 - m, 0), m_u = 0.5 - |m - 0.5|
template <typename T>
AreaMaps<T> area_maps(const Tensor<T>& m) {
  const T half = T(0.5);
  return {scalar_max(add_scalar(m, -half), T(0)), scalar_max(rsub_scalar(m, half), T(0)),
          rsub_scalar(abs(add_scalar(m, -half)), half)};
}

/// One [B,C,1] vector per area, in the order foreground, background,
/// uncertain (the last one absent when uncertainty is disabled).
template <typename T>
struct ContextVectors {
  std::vector<Tensor<T>> items;

  const Tensor<T>& fg() const { return items.at(0); }
  const Tensor<T>& bg() const { return items.at(1); }
  const Tensor<T>& unc() const { return items.at(2); }
  std::size_t size() const { return items.size(); }
};

template <typename T>
std::vector<Tensor<T>> active_areas(const AreaMaps<T>& areas, bool use_uncertainty) {
  std::vector<Tensor<T>> maps{areas.fg, areas.bg};
  if (use_uncertainty) maps.push_back(areas.unc);
  return maps;
}

/// v_a[c] = sum_i m_a[i] x[c,i] over all pixels i, unnormalised; computed as
/// a (C x HW)(HW x 1) product per batch item.
template <typename T>
ContextVectors<T> context_vectors(const Tensor<T>& x, const AreaMaps<T>& areas,
                                  bool use_uncertainty = true) {
  if (x.ndim() != 4 || areas.fg.ndim() != 4 || x.dim(0) != areas.fg.dim(0) ||
      x.dim(2) != areas.fg.dim(2) || x.dim(3) != areas.fg.dim(3) || areas.fg.dim(1) != 1) {
    throw ShapeError(detail::concat_msg("context_vectors: features ", shape_str(x.shape()),
                                        " vs area map ", shape_str(areas.fg.shape())));
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto flat = reshape(x, {b, c, hw});
  ContextVectors<T> out;
  for (const auto& m : active_areas(areas, use_uncertainty))
    out.items.push_back(matmul(flat, reshape(m, {b, hw, 1})));
  return out;
}

/// The learnable part of one UACA stage: psi/phi/omega/delta are point-wise
/// projections; fusion and head produce the stage feature and residual logit.
template <typename T>
struct UACAParams {
  Conv2d<T> psi;    // pixel -> embedding
  Conv2d<T> phi;    // context vector -> embedding
  Conv2d<T> omega;  // context vector -> value
  Conv2d<T> delta;  // aggregated value -> context feature
  ConvNormAct<T> fuse1;
  ConvNormAct<T> fuse2;
  Conv2d<T> head;
  bool use_uncertainty = true;

  UACAParams() = default;
  UACAParams(Initializer& init, std::int64_t cin, std::int64_t width, bool with_uncertainty = true)
      : use_uncertainty(with_uncertainty) {
    const std::int64_t embed = std::max<std::int64_t>(1, cin / 2);
    psi = Conv2d<T>::pointwise(init, cin, embed);
    phi = Conv2d<T>::pointwise(init, cin, embed);
    omega = Conv2d<T>::pointwise(init, cin, width);
    delta = Conv2d<T>::pointwise(init, width, width);
    fuse1 = ConvNormAct<T>(init, width + cin, width, 1, 1, Conv2dOptions{});
    fuse2 = ConvNormAct<T>(init, width, width, 3, 3, Conv2dOptions::same(3, 3));
    head = Conv2d<T>::pointwise(init, width, 1);
  }

  std::int64_t in_channels() const { return psi.in_channels(); }
  std::int64_t width() const { return delta.out_channels(); }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    psi.collect(prefix + ".psi", out);
    phi.collect(prefix + ".phi", out);
    omega.collect(prefix + ".omega", out);
    delta.collect(prefix + ".delta", out);
    fuse1.collect(prefix + ".fuse1", out);
    fuse2.collect(prefix + ".fuse2", out);
    head.collect(prefix + ".head", out);
  }
};

namespace detail {

/// Applies a point-wise conv to a [B,C,1] vector.
template <typename T>
Tensor<T> project_vector(const Conv2d<T>& conv, const Tensor<T>& v) {
  const std::int64_t b = v.dim(0);
  auto y = conv(reshape(v, {b, v.dim(1), 1, 1}));
  return reshape(y, {b, y.dim(1), 1});
}

}  // namespace detail

/// s'_a(i) = psi(x_i)^T phi(v_a), normalised by softmax across the areas at
/// every pixel. Returns one [B,1,H,W] score map per area.
template <typename T>
std::vector<Tensor<T>> similarity_scores(const Tensor<T>& x, const ContextVectors<T>& v,
                                         const UACAParams<T>& params) {
  const std::int64_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const auto emb = params.psi(x);
  const auto pixels = permute(reshape(emb, {b, emb.dim(1), h * w}), {0, 2, 1});  // [B,HW,E]
  std::vector<Tensor<T>> logits;
  for (const auto& va : v.items) {
    logits.push_back(reshape(matmul(pixels, detail::project_vector(params.phi, va)), {b, 1, h, w}));
  }
  return softmax_over(logits);
}

/// t_i = delta(sum_a s_a(i) omega(v_a)); each term is an outer product
/// omega(v_a) [C',1] x s_a [1,HW].
template <typename T>
Tensor<T> context_aggregate(const std::vector<Tensor<T>>& scores, const ContextVectors<T>& v,
                            const UACAParams<T>& params) {
  if (scores.size() != v.size() || scores.empty()) {
    throw std::invalid_argument("context_aggregate: score/vector count mismatch");
  }
  const std::int64_t b = scores[0].dim(0), h = scores[0].dim(2), w = scores[0].dim(3);
  Tensor<T> mixed;
  for (std::size_t a = 0; a < scores.size(); ++a) {
    auto term = matmul(detail::project_vector(params.omega, v.items[a]),
                       reshape(scores[a], {b, 1, h * w}));
    mixed = a == 0 ? term : add(mixed, term);
  }
  return params.delta(reshape(mixed, {b, mixed.dim(1), h, w}));
}

template <typename T>
struct UACAOutput {
  Tensor<T> feature;
  Tensor<T> logit;
  Tensor<T> guidance;  // guidance logit resized to the stage resolution
  Tensor<T> saliency;  // sigmoid(guidance)
  AreaMaps<T> areas;
  Tensor<T> context;   // t
};

/// One UACA stage on features x with guidance logits at any resolution.
/// The returned logit is head(feature) + resized guidance.
template <typename T>
UACAOutput<T> uaca_forward(const Tensor<T>& x, const Tensor<T>& guidance_logit,
                           const UACAParams<T>& params) {
  if (x.ndim() != 4 || x.dim(1) != params.in_channels()) {
    throw ShapeError(detail::concat_msg("UACA expects ", params.in_channels(), " channels, got ",
                                        shape_str(x.shape())));
  }
  if (guidance_logit.ndim() != 4 || guidance_logit.dim(1) != 1 || guidance_logit.dim(0) != x.dim(0)) {
    throw ShapeError("UACA guidance must be [B,1,H,W], got " + shape_str(guidance_logit.shape()));
  }
  UACAOutput<T> out;
  out.guidance = bilinear_resize(guidance_logit, x.dim(2), x.dim(3));
  out.saliency = sigmoid(out.guidance);
  out.areas = area_maps(out.saliency);
  const auto vectors = context_vectors(x, out.areas, params.use_uncertainty);
  const auto scores = similarity_scores(x, vectors, params);
  out.context = context_aggregate(scores, vectors, params);
  out.feature = params.fuse2(params.fuse1(concat_channels<T>({out.context, x})));
  out.logit = add(params.head(out.feature), out.guidance);
  return out;
}

}  // namespace uacanet
