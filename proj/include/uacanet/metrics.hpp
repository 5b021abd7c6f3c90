#pragma once

// Per-image segmentation metrics and their dataset-level aggregate.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>

#include "uacanet/tensor.hpp"

namespace uacanet {

namespace detail {

template <typename T>
void check_same_size(std::span<const T> pred, std::span<const T> gt, const char* what) {
  if (pred.size() != gt.size()) {
    throw ShapeError(concat_msg(what, ": prediction has ", pred.size(), " pixels, target ", gt.size()));
  }
}

struct Overlap {
  double inter = 0, pred = 0, target = 0;
};

template <typename T>
Overlap binary_overlap(std::span<const T> pred, std::span<const T> gt, double threshold) {
  Overlap o;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = static_cast<double>(pred[i]) >= threshold;
    const bool g = static_cast<double>(gt[i]) >= 0.5;
    o.inter += (p && g) ? 1 : 0;
    o.pred += p ? 1 : 0;
    o.target += g ? 1 : 0;
  }
  return o;
}

}  // namespace detail

/// 2|P n G| / (|P| + |G|) after thresholding; 1 when both are empty.
template <typename T>
double dice_score(std::span<const T> pred_prob, std::span<const T> gt, double threshold = 0.5) {
  detail::check_same_size(pred_prob, gt, "dice_score");
  const auto o = detail::binary_overlap(pred_prob, gt, threshold);
  if (o.pred + o.target == 0) return 1.0;
  return 2.0 * o.inter / (o.pred + o.target);
}

/// |P n G| / |P u G| after thresholding; 1 when both are empty.
template <typename T>
double iou_score(std::span<const T> pred_prob, std::span<const T> gt, double threshold = 0.5) {
  detail::check_same_size(pred_prob, gt, "iou_score");
  const auto o = detail::binary_overlap(pred_prob, gt, threshold);
  const double uni = o.pred + o.target - o.inter;
  if (uni == 0) return 1.0;
  return o.inter / uni;
}

/// Mean absolute difference between the raw probability map and the mask.
template <typename T>
double mae(std::span<const T> pred_prob, std::span<const T> gt) {
  detail::check_same_size(pred_prob, gt, "mae");
  double acc = 0;
  for (std::size_t i = 0; i < pred_prob.size(); ++i)
    acc += std::abs(static_cast<double>(pred_prob[i]) - static_cast<double>(gt[i]));
  return pred_prob.empty() ? 0.0 : acc / static_cast<double>(pred_prob.size());
}

template <typename T>
double dice_score(const Tensor<T>& p, const Tensor<T>& g, double threshold = 0.5) {
  return dice_score<T>(p.data(), g.data(), threshold);
}
template <typename T>
double iou_score(const Tensor<T>& p, const Tensor<T>& g, double threshold = 0.5) {
  return iou_score<T>(p.data(), g.data(), threshold);
}
template <typename T>
double mae(const Tensor<T>& p, const Tensor<T>& g) {
  return mae<T>(p.data(), g.data());
}

struct ImageScore {
  std::string path;
  double dice = 0, iou = 0, mae = 0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double mean_dice = 0, mean_iou = 0, mean_mae = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  std::size_t count() const { return images.size(); }

  /// Recomputes the means from the per-image rows, in row order.
  void finalize() {
    mean_dice = mean_iou = mean_mae = 0;
    for (const auto& s : images) {
      mean_dice += s.dice;
      mean_iou += s.iou;
      mean_mae += s.mae;
    }
    if (!images.empty()) {
      const double n = static_cast<double>(images.size());
      mean_dice /= n;
      mean_iou /= n;
      mean_mae /= n;
    }
  }

  nlohmann::json to_json() const {
    return {{"count", images.size()},
            {"mDice", mean_dice},
            {"mIoU", mean_iou},
            {"MAE", mean_mae},
            {"skipped", skipped},
            {"warnings", warnings}};
  }

  void write_json(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setw(2) << to_json() << '\n';
  }

  /// CSV with header path,dice,iou,mae; values at full double precision.
  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "path,dice,iou,mae\n" << std::setprecision(17);
    for (const auto& s : images) out << s.path << ',' << s.dice << ',' << s.iou << ',' << s.mae << '\n';
  }

  static std::vector<ImageScore> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<ImageScore> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      // path may contain commas; the three numbers are the trailing fields
      ImageScore s;
      auto cut = [&line]() {
        const auto pos = line.rfind(',');
        std::string field = line.substr(pos + 1);
        line.erase(pos);
        return std::stod(field);
      };
      s.mae = cut();
      s.iou = cut();
      s.dice = cut();
      s.path = line;
      rows.push_back(s);
    }
    return rows;
  }
};

/// Pixels within `radius` (Euclidean) of the mask boundary, where a boundary
/// pixel is one whose 4-neighbourhood contains the opposite label.
inline std::vector<bool> boundary_band(std::span<const float> mask, std::int64_t h, std::int64_t w,
                                       int radius) {
  std::vector<bool> edge(static_cast<std::size_t>(h * w), false);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const bool v = mask[y * w + x] > 0.5f;
      const std::int64_t ny[4] = {y - 1, y + 1, y, y};
      const std::int64_t nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        if ((mask[ny[k] * w + nx[k]] > 0.5f) != v) edge[y * w + x] = true;
      }
    }
  std::vector<bool> band(edge.size(), false);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (!edge[y * w + x]) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          if (dy * dy + dx * dx <= radius * radius && yy >= 0 && yy < h && xx >= 0 && xx < w)
            band[yy * w + xx] = true;
        }
    }
  return band;
}

}  // namespace uacanet
