#pragma once

// Central-difference verification of reverse-mode gradients.

#include <functional>
#include <optional>

#include "uacanet/tensor.hpp"

namespace uacanet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// One coordinate to probe: tensor `input` (index into the wrt list), element `index`.
struct GradCoordinate {
  std::size_t input;
  std::int64_t index;
};

/// |a - n| / max(|a| + |n|, floor). The floor keeps coordinates whose true
/// derivative is zero from turning rounding noise into a large ratio.
inline double relative_gap(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
}

/// Compares d loss / d wrt[k][i] from backward() against
/// (loss(x + h) - loss(x - h)) / 2h at every requested coordinate (all
/// coordinates when `coords` is empty). `loss` must rebuild its graph on
/// every call and return a rank-0 tensor.
template <typename T>
GradCheckReport grad_check_many(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> wrt,
                                double h = 1e-5, std::vector<GradCoordinate> coords = {}) {
  for (auto& t : wrt) {
    t.requires_grad(true);
    t.zero_grad();
  }
  Tensor<T> value = loss();
  if (value.numel() != 1 || value.ndim() != 0) {
    throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(value.shape()));
  }
  value.backward();
  std::vector<std::vector<T>> analytic;
  for (auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

  if (coords.empty()) {
    for (std::size_t k = 0; k < wrt.size(); ++k)
      for (std::int64_t i = 0; i < wrt[k].numel(); ++i) coords.push_back({k, i});
  }
  GradCheckReport report;
  report.coordinates = coords.size();
  // Central differences carry an absolute error of roughly eps * |f| / h.
  const double floor = 1e-5 * std::max(1.0, std::abs(static_cast<double>(value.item())));
  NoGradGuard no_grad;
  for (const auto& c : coords) {
    T& slot = wrt[c.input][c.index];
    const T saved = slot;
    slot = static_cast<T>(static_cast<double>(saved) + h);
    const double up = static_cast<double>(loss().item());
    slot = static_cast<T>(static_cast<double>(saved) - h);
    const double down = static_cast<double>(loss().item());
    slot = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = static_cast<double>(analytic[c.input][static_cast<std::size_t>(c.index)]);
    const double err = relative_gap(a, numeric, floor);
    if (err > report.max_rel_error || report.coordinates == 1) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      report.worst_input = c.input;
      report.worst_index = c.index;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

/// Max relative error of the gradient of scalar `f` at `x`.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                  double h = 1e-5) {
  return grad_check_many<T>([&] { return f(x); }, {x}, h).max_rel_error;
}

}  // namespace uacanet
