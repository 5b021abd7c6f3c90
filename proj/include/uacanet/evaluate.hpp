#pragma once

// Inference at the model resolution and scoring at the original resolution.

#include <iostream>

#include "uacanet/dataset.hpp"
#include "uacanet/metrics.hpp"
#include "uacanet/model.hpp"

namespace uacanet {

template <typename T>
struct Prediction {
  Tensor<float> probability;  // [1,H,W] at the input image's resolution
  ModelOutput<T> raw;         // everything at model resolution
};

/// Resizes to the model side, runs the network, and resizes the final
/// probability map back to the image's own size.
template <typename T>
Prediction<T> predict(const UACANet<T>& model, const Tensor<float>& image) {
  NoGradGuard no_grad;
  const auto side = model.config().side;
  const auto h = image.dim(1), w = image.dim(2);
  auto input = bilinear_resize(reshape(image, {1, 3, h, w}), side, side).template cast<T>();
  Prediction<T> out;
  out.raw = model.forward(input);
  const auto prob = bilinear_resize(out.raw.probability(), h, w);
  out.probability = reshape(prob.template cast<float>(), {1, h, w});
  return out;
}

template <typename T>
ImageScore score_sample(const UACANet<T>& model, const Sample& sample) {
  const auto pred = predict(model, sample.image);
  return {sample.source, dice_score(pred.probability, sample.mask), iou_score(pred.probability, sample.mask),
          mae(pred.probability, sample.mask)};
}

template <typename T>
EvalReport evaluate_samples(const UACANet<T>& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalReport report;
  for (const auto& s : samples) report.images.push_back(score_sample(model, s));
  report.finalize();
  return report;
}

/// Evaluates every indexed pair; unreadable pairs are skipped with a warning.
template <typename T>
EvalReport evaluate_dataset(const UACANet<T>& model, const DatasetIndex& index) {
  if (index.entries.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalReport report;
  for (const auto& u : index.unmatched) report.warnings.push_back("unmatched " + u);
  for (const auto& entry : index.entries) {
    Sample sample;
    try {
      sample = load_sample(entry);
    } catch (const std::exception& e) {
      ++report.skipped;
      report.warnings.push_back(std::string("skipped: ") + e.what());
      std::cerr << "warning: skipping " << entry.stem << ": " << e.what() << '\n';
      continue;
    }
    report.images.push_back(score_sample(model, sample));
  }
  if (report.images.empty()) throw std::runtime_error("evaluate: no readable samples");
  report.finalize();
  return report;
}

/// Mean uncertain-area value m_u near the ground-truth boundary versus
/// everywhere else, pooled over a set of samples.
struct UncertaintyProfile {
  double near_boundary = 0;
  double elsewhere = 0;
  double ratio() const { return elsewhere > 0 ? near_boundary / elsewhere : std::numeric_limits<double>::infinity(); }
};

/// Uses the last UACA stage's m_u, resampled to each image's resolution.
template <typename T>
UncertaintyProfile uncertainty_profile(const UACANet<T>& model, const std::vector<Sample>& samples,
                                       int band_radius = 2) {
  double near_sum = 0, far_sum = 0, near_n = 0, far_n = 0;
  for (const auto& s : samples) {
    const auto pred = predict(model, s.image);
    const auto h = s.height(), w = s.width();
    NoGradGuard no_grad;
    const auto mu = bilinear_resize(pred.raw.stages[2].areas.unc, h, w).template cast<float>();
    const auto band = boundary_band(s.mask.data(), h, w, band_radius);
    for (std::int64_t i = 0; i < h * w; ++i) {
      if (band[static_cast<std::size_t>(i)]) {
        near_sum += mu[i];
        near_n += 1;
      } else {
        far_sum += mu[i];
        far_n += 1;
      }
    }
  }
  return {near_n > 0 ? near_sum / near_n : 0.0, far_n > 0 ? far_sum / far_n : 0.0};
}

}  // namespace uacanet
