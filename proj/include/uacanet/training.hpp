#pragma once

// Adam, the polynomial learning-rate schedule and the training loop.

#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include "uacanet/augment.hpp"
#include "uacanet/losses.hpp"
#include "uacanet/model.hpp"

namespace uacanet {

enum class ScheduleForm {
  literal,       // base * (1 - (iter/iter_max)^p)
  conventional,  // base * (1 - iter/iter_max)^p
};

struct PolySchedule {
  double base_lr = 1e-4;
  std::int64_t iter_max = 1;
  double power = 0.9;
  ScheduleForm form = ScheduleForm::literal;
};

inline double poly_lr(std::int64_t iter, const PolySchedule& sched) {
  if (sched.iter_max <= 0) throw std::invalid_argument("poly_lr: iter_max must be positive");
  if (iter > sched.iter_max) {
    std::cerr << "warning: iteration " << iter << " beyond iter_max " << sched.iter_max
              << ", learning rate clamped to 0\n";
    return 0.0;
  }
  const double t = static_cast<double>(std::max<std::int64_t>(iter, 0)) / static_cast<double>(sched.iter_max);
  if (sched.form == ScheduleForm::conventional) return sched.base_lr * std::pow(1.0 - t, sched.power);
  return sched.base_lr * (1.0 - std::pow(t, sched.power));
}

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, std::vector<T>> first_moment;
  std::map<std::string, std::vector<T>> second_moment;
};

/// Bias-corrected Adam update of every named parameter, then zeroes grads.
template <typename T>
void adam_step(const NamedParams<T>& params, AdamState<T>& state, double lr) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw std::logic_error("adam_step: parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto [name, p] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != static_cast<std::size_t>(p.numel())) m.assign(static_cast<std::size_t>(p.numel()), T(0));
    if (v.size() != static_cast<std::size_t>(p.numel())) v.assign(static_cast<std::size_t>(p.numel()), T(0));
    auto data = p.data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      data[i] = static_cast<T>(static_cast<double>(data[i]) - update);
    }
    p.zero_grad();
  }
}

template <typename T>
struct Batch {
  Tensor<T> images;  // [B,3,S,S]
  Tensor<T> masks;   // [B,1,S,S]
};

/// Stacks samples into a batch at side x side (bilinear for images;
/// masks are resampled bilinearly and re-binarised at 0.5).
template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, std::int64_t side) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto n = static_cast<std::int64_t>(samples.size());
  const std::int64_t plane = side * side;
  Batch<T> b{Tensor<T>::zeros({n, 3, side, side}), Tensor<T>::zeros({n, 1, side, side})};
  NoGradGuard no_grad;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const auto img = bilinear_resize(reshape(s.image, {1, 3, s.height(), s.width()}), side, side);
    const auto msk = bilinear_resize(reshape(s.mask, {1, 1, s.height(), s.width()}), side, side);
    for (std::int64_t k = 0; k < 3 * plane; ++k) b.images[i * 3 * plane + k] = static_cast<T>(img[k]);
    for (std::int64_t k = 0; k < plane; ++k) b.masks[i * plane + k] = msk[k] >= 0.5f ? T(1) : T(0);
  }
  return b;
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepResult {
  std::int64_t iter = 0;
  double lr = 0;
  double loss = 0;
  std::array<double, 4> per_map{};
};

/// forward -> four-map loss -> backward -> Adam at poly_lr(iter).
template <typename T>
StepResult train_step(const UACANet<T>& model, const Batch<T>& batch, AdamState<T>& optimizer,
                      const PolySchedule& sched, std::int64_t iter,
                      BceReduction reduction = BceReduction::mean) {
  StepResult r;
  r.iter = iter;
  r.lr = poly_lr(iter, sched);
  const auto out = model.forward(batch.images);
  auto loss = total_loss(out.logits, batch.masks, reduction);
  r.loss = static_cast<double>(loss.total.item());
  r.per_map = loss.per_map;
  if (!std::isfinite(r.loss)) {
    std::ostringstream oss;
    oss << "non-finite loss at iter " << iter << " (lr " << r.lr << "), per-map losses:";
    for (double v : r.per_map) oss << ' ' << v;
    throw TrainingDiverged(oss.str());
  }
  loss.total.backward();
  adam_step(model.named_parameters(), optimizer, r.lr);
  return r;
}

struct TrainOptions {
  std::int64_t epochs = 1;
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;
  double base_lr = 1e-4;
  ScheduleForm schedule = ScheduleForm::literal;
  BceReduction reduction = BceReduction::mean;
  std::optional<AugmentConfig> augmentation;  // none -> train on raw samples
  std::int64_t start_iter = 0;                // resume point

  std::int64_t steps_per_epoch(std::size_t samples) const {
    return (static_cast<std::int64_t>(samples) + batch_size - 1) / batch_size;
  }
  std::int64_t iter_max(std::size_t samples) const { return epochs * steps_per_epoch(samples); }
};

/// Runs iterations [start_iter, iter_max). Sample order and augmentation
/// draws depend only on (seed, epoch, sample index), so resumed and fresh
/// runs see the same data stream.
template <typename T>
void train(const UACANet<T>& model, const std::vector<Sample>& samples, AdamState<T>& optimizer,
           const TrainOptions& opt, const std::function<void(const StepResult&)>& on_step = {}) {
  if (samples.empty()) throw std::invalid_argument("train: no training samples");
  if (opt.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  const std::int64_t per_epoch = opt.steps_per_epoch(samples.size());
  PolySchedule sched{opt.base_lr, opt.iter_max(samples.size()), 0.9, opt.schedule};
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  for (std::int64_t iter = opt.start_iter; iter < sched.iter_max; ++iter) {
    const std::int64_t epoch = iter / per_epoch;
    if (epoch != order_epoch) {
      order.resize(samples.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 shuffle_rng(opt.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      order_epoch = epoch;
    }
    const std::int64_t first = (iter % per_epoch) * opt.batch_size;
    std::vector<Sample> chunk;
    for (std::int64_t k = first; k < std::min<std::int64_t>(first + opt.batch_size, static_cast<std::int64_t>(samples.size())); ++k) {
      const auto idx = order[static_cast<std::size_t>(k)];
      if (opt.augmentation) {
        std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(epoch),
                          static_cast<std::uint32_t>(idx), 0xA06u};
        std::mt19937_64 rng(seq);
        chunk.push_back(augment(samples[idx], *opt.augmentation, rng));
      } else {
        chunk.push_back(samples[idx]);
      }
    }
    const auto batch = make_batch<T>(chunk, model.config().side);
    const auto result = train_step(model, batch, optimizer, sched, iter, opt.reduction);
    if (on_step) on_step(result);
  }
}

}  // namespace uacanet
