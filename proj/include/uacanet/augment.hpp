#pragma once

// Training-time augmentation: flips, scale jitter, rotation and mask
// dilation/erosion.

#include <numbers>
#include <random>

#include "uacanet/dataset.hpp"

namespace uacanet {

struct AugmentConfig {
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  bool scale = true;
  double scale_min = 0.75;
  double scale_max = 1.25;
  bool rotate = true;
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 359.0;
  bool morphology = true;
  int morph_radius_min = 0;
  int morph_radius_max = 3;

  static AugmentConfig none() {
    AugmentConfig c;
    c.flip_h_prob = c.flip_v_prob = 0.0;
    c.scale = c.rotate = c.morphology = false;
    return c;
  }

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(flip_h_prob) || !prob(flip_v_prob)) throw std::invalid_argument("flip probabilities must lie in [0,1]");
    if (scale_min <= 0.0 || scale_max < scale_min) throw std::invalid_argument("scale range must be positive and ordered");
    if (morph_radius_min < 0 || morph_radius_max < morph_radius_min)
      throw std::invalid_argument("morphology radius range must be non-negative and ordered");
  }
};

namespace detail {

/// Plane-wise copy through an index map; src < 0 selects `fill`.
inline Tensor<float> remap(const Tensor<float>& t, const std::vector<std::int64_t>& src, float fill) {
  const std::int64_t planes = t.dim(0), plane = t.dim(1) * t.dim(2);
  Tensor<float> out = Tensor<float>::zeros(t.shape());
  for (std::int64_t c = 0; c < planes; ++c)
    for (std::int64_t i = 0; i < plane; ++i) {
      const auto s = src[static_cast<std::size_t>(i)];
      out[c * plane + i] = s < 0 ? fill : t[c * plane + s];
    }
  return out;
}

inline float sample_bilinear_clamped(const Tensor<float>& t, std::int64_t c, double y, double x) {
  const std::int64_t h = t.dim(1), w = t.dim(2);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::int64_t>(std::floor(y)), x0 = static_cast<std::int64_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const auto px = [&](std::int64_t yy, std::int64_t xx) { return static_cast<double>(t[(c * h + yy) * w + xx]); };
  const double top = px(y0, x0) + fx * (px(y0, x1) - px(y0, x0));
  const double bot = px(y1, x0) + fx * (px(y1, x1) - px(y1, x0));
  return static_cast<float>(top + fy * (bot - top));
}

}  // namespace detail

inline Sample flip_horizontal(const Sample& s) {
  const std::int64_t h = s.height(), w = s.width();
  std::vector<std::int64_t> src(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) src[y * w + x] = y * w + (w - 1 - x);
  return {detail::remap(s.image, src, 0), detail::remap(s.mask, src, 0), s.source};
}

inline Sample flip_vertical(const Sample& s) {
  const std::int64_t h = s.height(), w = s.width();
  std::vector<std::int64_t> src(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) src[y * w + x] = (h - 1 - y) * w + x;
  return {detail::remap(s.image, src, 0), detail::remap(s.mask, src, 0), s.source};
}

/// Zooms by `factor` about the centre keeping the frame size (centre crop
/// when enlarging, pad when shrinking). Image: bilinear with edge
/// replication; mask: nearest with 0 outside.
inline Sample scale_about_center(const Sample& s, double factor) {
  const std::int64_t h = s.height(), w = s.width();
  Sample out{Tensor<float>::zeros(s.image.shape()), Tensor<float>::zeros(s.mask.shape()), s.source};
  const double cy = 0.5 * static_cast<double>(h), cx = 0.5 * static_cast<double>(w);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double sy = (static_cast<double>(y) + 0.5 - cy) / factor + cy - 0.5;
      const double sx = (static_cast<double>(x) + 0.5 - cx) / factor + cx - 0.5;
      for (std::int64_t c = 0; c < 3; ++c) out.image[(c * h + y) * w + x] = detail::sample_bilinear_clamped(s.image, c, sy, sx);
      const auto ny = static_cast<std::int64_t>(std::lround(sy)), nx = static_cast<std::int64_t>(std::lround(sx));
      out.mask[y * w + x] = (ny >= 0 && ny < h && nx >= 0 && nx < w) ? s.mask[ny * w + nx] : 0.0f;
    }
  return out;
}

/// Rotates by `degrees` about the image centre.
inline Sample rotate_about_center(const Sample& s, double degrees) {
  const std::int64_t h = s.height(), w = s.width();
  Sample out{Tensor<float>::zeros(s.image.shape()), Tensor<float>::zeros(s.mask.shape()), s.source};
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), sn = std::sin(theta);
  const double cy = 0.5 * static_cast<double>(h) - 0.5, cx = 0.5 * static_cast<double>(w) - 0.5;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      // inverse rotation maps destination to source
      const double sx = c * dx + sn * dy + cx;
      const double sy = -sn * dx + c * dy + cy;
      for (std::int64_t ch = 0; ch < 3; ++ch)
        out.image[(ch * h + y) * w + x] = detail::sample_bilinear_clamped(s.image, ch, sy, sx);
      const auto ny = static_cast<std::int64_t>(std::lround(sy)), nx = static_cast<std::int64_t>(std::lround(sx));
      out.mask[y * w + x] = (ny >= 0 && ny < h && nx >= 0 && nx < w) ? s.mask[ny * w + nx] : 0.0f;
    }
  return out;
}

/// Binary dilation (grow = true) or erosion with a disk of the given radius.
/// Pixels outside the frame count as background.
inline Tensor<float> morph_disk(const Tensor<float>& mask, int radius, bool grow) {
  if (radius <= 0) return mask.clone();
  const std::int64_t h = mask.dim(mask.ndim() - 2), w = mask.dim(mask.ndim() - 1);
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
  Tensor<float> out = Tensor<float>::zeros(mask.shape());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      bool any = false, all = true;
      for (auto [dy, dx] : offsets) {
        const std::int64_t yy = y + dy, xx = x + dx;
        const bool fg = yy >= 0 && yy < h && xx >= 0 && xx < w && mask[yy * w + xx] > 0.5f;
        any = any || fg;
        all = all && fg;
      }
      out[y * w + x] = (grow ? any : all) ? 1.0f : 0.0f;
    }
  return out;
}

/// Applies the configured augmentations in order: flips, scale, rotation,
/// mask morphology. Every random draw comes from `rng`.
template <typename Rng>
Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Sample s = sample;
  if (uni(rng) < cfg.flip_h_prob) s = flip_horizontal(s);
  if (uni(rng) < cfg.flip_v_prob) s = flip_vertical(s);
  if (cfg.scale) s = scale_about_center(s, cfg.scale_min + (cfg.scale_max - cfg.scale_min) * uni(rng));
  if (cfg.rotate)
    s = rotate_about_center(s, cfg.rotation_min_deg + (cfg.rotation_max_deg - cfg.rotation_min_deg) * uni(rng));
  if (cfg.morphology) {
    std::uniform_int_distribution<int> radius(cfg.morph_radius_min, cfg.morph_radius_max);
    const int r = radius(rng);
    s.mask = morph_disk(s.mask, r, uni(rng) < 0.5);
  }
  for (auto& v : s.image.data()) v = std::clamp(v, 0.0f, 1.0f);
  return s;
}

}  // namespace uacanet
