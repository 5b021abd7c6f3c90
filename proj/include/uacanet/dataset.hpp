#pragma once

// Dataset layout (root/images/*.ppm + root/masks/*.pgm) and the synthetic
// blob benchmark.

#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "uacanet/pnm.hpp"

namespace uacanet {

struct Sample {
  Tensor<float> image;  // [3,H,W] in [0,1]
  Tensor<float> mask;   // [1,H,W] in {0,1}
  std::string source;   // file path or "synth:<seed>:<index>"

  std::int64_t height() const { return image.dim(1); }
  std::int64_t width() const { return image.dim(2); }
};

struct DatasetEntry {
  std::string stem;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;  // sorted by stem
  std::vector<std::string> unmatched;  // stems present on one side only
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::map<std::string, std::filesystem::path> stems_in(const std::filesystem::path& dir,
                                                             const std::string& ext) {
  std::map<std::string, std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext)
      out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

}  // namespace detail

/// Pairs images and masks by file stem.
inline DatasetIndex list_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root / "images") || !std::filesystem::is_directory(root / "masks")) {
    throw DatasetError("dataset root " + root.string() + " needs images/ and masks/ subdirectories");
  }
  const auto images = detail::stems_in(root / "images", ".ppm");
  const auto masks = detail::stems_in(root / "masks", ".pgm");
  DatasetIndex index;
  for (const auto& [stem, path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) {
      index.unmatched.push_back("images/" + stem);
    } else {
      index.entries.push_back({stem, path, it->second});
    }
  }
  for (const auto& [stem, path] : masks)
    if (!images.count(stem)) index.unmatched.push_back("masks/" + stem);
  if (index.entries.empty()) {
    throw DatasetError("dataset root " + root.string() + " has no image/mask pairs with matching stems");
  }
  return index;
}

inline Sample load_sample(const DatasetEntry& entry) {
  Sample s{read_image(entry.image_path), read_mask(entry.mask_path), entry.image_path.string()};
  if (s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2)) {
    throw DatasetError("size mismatch between " + entry.image_path.string() + " " +
                       shape_str(s.image.shape()) + " and its mask " + shape_str(s.mask.shape()));
  }
  return s;
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& root) {
  std::vector<Sample> out;
  for (const auto& e : list_dataset(root).entries) out.push_back(load_sample(e));
  return out;
}

/// Writes samples into root/images + root/masks as <prefix><index>.ppm/.pgm.
inline void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                          const std::string& prefix = "sample_") {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[64];
    std::snprintf(stem, sizeof(stem), "%s%05zu", prefix.c_str(), i);
    write_image(root / "images" / (std::string(stem) + ".ppm"), samples[i].image);
    write_mask(root / "masks" / (std::string(stem) + ".pgm"), samples[i].mask);
  }
}

/// Fraction of foreground pixels in a mask.
inline double foreground_fraction(const Tensor<float>& mask) {
  double fg = 0;
  for (float v : mask.values()) fg += v;
  return fg / static_cast<double>(mask.numel());
}

namespace detail {

struct Ellipse {
  double cy, cx, ry, rx, angle;

  /// Normalised radial distance: < 1 inside.
  double distance(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return std::sqrt(u * u + v * v);
  }
};

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

inline Sample render_blobs(std::int64_t side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double s = static_cast<double>(side);

  // Polyps: 1-3 ellipses with semi-axes in [0.08, 0.2] * side, fully inside
  // the frame. One ellipse covers at least pi * 0.08^2 (2%) of the image and
  // three cover at most 3 pi 0.2^2 (38%).
  const int count = 1 + static_cast<int>(uni(rng) * 3.0);
  std::vector<Ellipse> blobs;
  for (int k = 0; k < count; ++k) {
    Ellipse e{};
    e.ry = s * (0.08 + 0.12 * uni(rng));
    e.rx = s * (0.08 + 0.12 * uni(rng));
    e.angle = std::numbers::pi * uni(rng);
    const double reach = std::max(e.rx, e.ry) + 1.0;
    e.cy = reach + (s - 2 * reach) * uni(rng);
    e.cx = reach + (s - 2 * reach) * uni(rng);
    blobs.push_back(e);
  }

  // Background: mucosa-like base colour with a few low-frequency waves.
  const double base[3] = {0.55 + 0.1 * uni(rng), 0.28 + 0.08 * uni(rng), 0.25 + 0.08 * uni(rng)};
  const double tint[3] = {0.88 + 0.08 * uni(rng), 0.50 + 0.1 * uni(rng), 0.40 + 0.1 * uni(rng)};
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k)
    waves.push_back({2 * std::numbers::pi * (1 + 4 * uni(rng)) / s,
                     2 * std::numbers::pi * (1 + 4 * uni(rng)) / s, 2 * std::numbers::pi * uni(rng),
                     0.03 + 0.04 * uni(rng)});
  std::normal_distribution<double> noise(0.0, 0.02);

  Sample out{Tensor<float>::zeros({3, side, side}), Tensor<float>::zeros({1, side, side}), {}};
  const double edge = 1.5 / (0.08 * s);  // soft edge half-width in normalised distance
  for (std::int64_t y = 0; y < side; ++y)
    for (std::int64_t x = 0; x < side; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      double texture = 0;
      for (const auto& w : waves) texture += w.amp * std::sin(w.fy * py + w.fx * px + w.phase);
      double alpha = 0, shade = 0;
      bool inside = false;
      for (const auto& e : blobs) {
        const double d = e.distance(py, px);
        inside = inside || d < 1.0;
        const double a = 1.0 - smoothstep(1.0 - edge, 1.0 + edge, d);
        if (a > alpha) {
          alpha = a;
          shade = 0.12 * (1.0 - std::min(d, 1.0) * std::min(d, 1.0));
        }
      }
      out.mask[y * side + x] = inside ? 1.0f : 0.0f;
      const std::int64_t plane = side * side;
      for (int c = 0; c < 3; ++c) {
        const double bg = base[c] + texture;
        const double fg = tint[c] + shade + 0.5 * texture;
        const double v = (1 - alpha) * bg + alpha * fg + noise(rng);
        out.image[c * plane + y * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return out;
}

}  // namespace detail

/// `n` synthetic samples: 1-3 soft-edged elliptical blobs on a textured
/// background, mask = union of the ellipse interiors. Sample i depends only
/// on (seed, i).
inline std::vector<Sample> synth_blobs(std::size_t n, std::int64_t side, std::uint64_t seed,
                                       std::size_t first_index = 0) {
  if (side < 32) throw std::invalid_argument("synth_blobs: side must be >= 32");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = first_index; i < first_index + n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    Sample s = detail::render_blobs(side, rng);
    while (foreground_fraction(s.mask) < 0.01 || foreground_fraction(s.mask) > 0.5)
      s = detail::render_blobs(side, rng);
    s.source = "synth:" + std::to_string(seed) + ":" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uacanet
