#pragma once

// Segmentation losses: pixel BCE + soft IoU, summed over the deeply
// supervised predictions.

#include <array>

#include "uacanet/ops.hpp"

namespace uacanet {

enum class BceReduction { mean, sum };

constexpr double kProbabilityClamp = 1e-7;
constexpr double kIouGuard = 1e-7;

/// -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1-1e-7].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred_prob, const Tensor<T>& gt,
                   BceReduction reduction = BceReduction::mean) {
  if (pred_prob.shape() != gt.shape()) {
    throw ShapeError(detail::concat_msg("bce_loss: prediction ", shape_str(pred_prob.shape()),
                                        " vs target ", shape_str(gt.shape())));
  }
  const T eps = static_cast<T>(kProbabilityClamp);
  const auto p = clamp(pred_prob, eps, T(1) - eps);
  const auto pos = mul(gt, log(p));
  const auto neg = mul(rsub_scalar(gt, T(1)), log(rsub_scalar(p, T(1))));
  const auto total = mul_scalar(sum(add(pos, neg)), T(-1));
  return reduction == BceReduction::sum ? total
                                        : mul_scalar(total, T(1) / static_cast<T>(gt.numel()));
}

/// 1 - sum(y p) / (sum(y + p - y p) + 1e-7)
template <typename T>
Tensor<T> iou_loss(const Tensor<T>& pred_prob, const Tensor<T>& gt) {
  if (pred_prob.shape() != gt.shape()) {
    throw ShapeError(detail::concat_msg("iou_loss: prediction ", shape_str(pred_prob.shape()),
                                        " vs target ", shape_str(gt.shape())));
  }
  const auto overlap = mul(gt, pred_prob);
  const auto inter = sum(overlap);
  const auto uni = add_scalar(sum(sub(add(gt, pred_prob), overlap)), static_cast<T>(kIouGuard));
  return rsub_scalar(div(inter, uni), T(1));
}

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  std::array<double, 4> per_map{};
};

/// Sum over the four logit maps of bce(sigmoid(l), gt) + iou(sigmoid(l), gt).
template <typename T>
LossBreakdown<T> total_loss(const std::array<Tensor<T>, 4>& logits, const Tensor<T>& gt,
                            BceReduction reduction = BceReduction::mean) {
  LossBreakdown<T> out;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const auto prob = sigmoid(logits[k]);
    auto term = add(bce_loss(prob, gt, reduction), iou_loss(prob, gt));
    out.per_map[k] = static_cast<double>(term.item());
    out.total = k == 0 ? term : add(out.total, term);
  }
  return out;
}

}  // namespace uacanet
