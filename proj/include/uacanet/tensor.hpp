#pragma once

// Dense tensor with reverse-mode gradient tracking.
//
// A Tensor<T> is a cheap handle onto shared storage. Operations that touch at
// least one gradient-tracking operand (while grad mode is on) attach a Node to
// their result; the nodes form the computation record that backward() replays.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

namespace uacanet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

/// Raised for operand shape violations; the message names the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename... Args>
std::string concat_msg(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph construction for its lifetime (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorImpl;

/// One executed operation: its operands and the rule that pushes the
/// result's gradient back into them.
template <typename T>
struct Node {
  std::uint64_t sequence = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds real numbers");

 public:
  using value_type = T;

  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

  Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError(detail::concat_msg("tensor shape ", shape_str(shape), " holds ",
                                          numel_of(shape), " elements, got ", data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor full(Shape shape, T value) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const& { return impl_->data; }
  std::vector<T> values() && { return impl_->data; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<T> grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  std::span<const T> grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T(0)); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }

  bool is_leaf() const { return impl_->node == nullptr; }
  const std::shared_ptr<Node<T>>& node() const { return impl_->node; }

  T item() const {
    if (impl_->data.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
    }
    return impl_->data[0];
  }

  T& operator[](std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  /// Row-major element access for 4-d tensors.
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }

  /// Deep copy of the values, disconnected from any graph.
  Tensor clone() const { return Tensor(impl_->shape, impl_->data); }

  /// Same storage semantics as clone(); named for intent at call sites.
  Tensor detach() const { return clone(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.size());
    std::transform(impl_->data.begin(), impl_->data.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(impl_->shape, std::move(out));
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

  void backward() const;

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

/// Builds the result of an operation and, when any operand participates in
/// differentiation, records the node that will route its gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&)> backward_rule) {
  Tensor<T> out(std::move(shape), std::move(data));
#ifndef NDEBUG
  for (T v : out.values()) {
    if (!std::isfinite(v)) {
      bool finite_in = true;
      for (const auto& in : inputs)
        for (T x : in.values()) finite_in = finite_in && std::isfinite(x);
      if (finite_in) throw std::runtime_error(std::string("non-finite output from ") + op);
      break;
    }
  }
#endif
  if (!grad_enabled()) return out;
  bool tracked = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!tracked) return out;
  auto node = std::make_shared<Node<T>>();
  node->sequence = next_sequence();
  node->op = op;
  for (auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward_rule);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

}  // namespace detail

/// The computation record reachable from `root`, in execution order.
/// Every node's operands were produced by nodes that appear earlier.
template <typename T>
std::vector<std::shared_ptr<TensorImpl<T>>> computation_record(const Tensor<T>& root) {
  std::vector<std::shared_ptr<TensorImpl<T>>> order;
  std::unordered_set<const TensorImpl<T>*> seen;
  std::vector<std::shared_ptr<TensorImpl<T>>> stack{root.impl()};
  while (!stack.empty()) {
    auto cur = std::move(stack.back());
    stack.pop_back();
    if (!cur->node || !seen.insert(cur.get()).second) continue;
    order.push_back(cur);
    for (const auto& in : cur->node->inputs) stack.push_back(in);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->node->sequence < b->node->sequence; });
  return order;
}

template <typename T>
void Tensor<T>::backward() const {
  if (impl_->data.size() != 1 || !impl_->shape.empty()) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw std::logic_error("backward() on a tensor that is not connected to any parameter");
  }
  NoGradGuard no_grad;
  auto record = computation_record(*this);
  impl_->ensure_grad();
  impl_->grad[0] += T(1);
  for (auto it = record.rbegin(); it != record.rend(); ++it) {
    const auto& impl = **it;
    if (impl.grad.empty()) continue;  // no gradient reached this entry
    for (const auto& in : impl.node->inputs)
      if (in->requires_grad) in->ensure_grad();
    impl.node->backward(impl);
  }
}

/// Creates a trainable leaf.
template <typename T>
Tensor<T> parameter(Tensor<T> init) {
  init.requires_grad(true);
  return init;
}

}  // namespace uacanet
