#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sfnet/common.hpp"

namespace sfnet {

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII switch that disables gradient recording on the current thread.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Mask value standing in for -inf in the attention kernel: the most
/// negative finite scalar of the precision. row_softmax maps it to exactly 0.
template <typename S>
constexpr S mask_sentinel() {
  return std::numeric_limits<S>::lowest();
}

/// Dense row-major tensor with reverse-mode gradient tracking.
///
/// A Tensor is a cheap shared handle to an immutable value buffer plus an
/// optional gradient buffer. Operations record a backward closure and their
/// parent handles; node ids increase in creation order, so replaying the
/// reachable set in decreasing id order is a valid reverse topological pass.
template <typename S>
class Tensor {
  static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grad
  };

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    return leaf(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> d(shape_numel(shape), S(0));
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    std::vector<S> d(shape_numel(shape), S(1));
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    std::vector<S> d(shape_numel(shape), v);
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(S v) { return leaf({1}, {v}, false); }

  /// Uniform fill in [lo, hi) drawn in flat order from rng.
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
    std::vector<S> d(shape_numel(shape));
    for (auto& x : d) x = static_cast<S>(rng.uniform(lo, hi));
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t numel() const { return n_->value.size(); }
  std::size_t extent(std::size_t axis) const { return n_->shape.at(axis); }

  const std::vector<S>& value() const { return n_->value; }

  /// Mutable access to the value buffer. Callers must hold exclusive access
  /// to the graph (optimizer updates, finite-difference probes).
  std::vector<S>& raw_value() { return n_->value; }

  S item() const {
    if (numel() != 1)
      throw ShapeError("item: tensor has shape " + shape_str(shape()) + ", expected one element");
    return n_->value[0];
  }

  S at(std::size_t i, std::size_t j) const {
    return n_->value[i * n_->shape[1] + j];
  }

  bool requires_grad() const { return n_->requires_grad; }

  /// Marks a leaf as trainable. Must not be called on op results.
  void set_requires_grad(bool on) {
    if (on && n_->backprop)
      throw ConfigError("set_requires_grad: only leaves can change grad tracking");
    n_->requires_grad = on;
    if (on)
      n_->grad.assign(n_->value.size(), S(0));
    else
      n_->grad.clear();
  }

  const std::vector<S>& grad() const {
    if (!n_->requires_grad)
      throw ConfigError("grad: tensor does not track gradients");
    return n_->grad;
  }

  void zero_grad() {
    if (n_->requires_grad) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  /// Reverse pass from a scalar loss. Accumulates into every reachable
  /// requires_grad node; repeated calls after zero_grad are identical.
  void backward() const {
    if (numel() != 1)
      throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(shape()));
    if (!n_->requires_grad) return;  // constant graph, nothing to do

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{n_.get()};
    seen.insert(n_.get());
    while (!stack.empty()) {
      Node* nd = stack.back();
      stack.pop_back();
      order.push_back(nd);
      for (const auto& p : nd->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    n_->grad[0] += S(1);
    for (Node* nd : order) {
      if (nd->backprop) nd->backprop(*nd);
    }
  }

  const std::shared_ptr<Node>& node() const { return n_; }

  /// Builds an op result. Records the tape entry only when gradients are
  /// enabled and some parent tracks them.
  static Tensor make(Shape shape, std::vector<S> value,
                     std::vector<Tensor> parents,
                     std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->id = detail::next_node_id();
    bool track = false;
    if (grad_enabled()) {
      for (const auto& p : parents)
        if (p.n_->requires_grad) track = true;
    }
    if (track) {
      node->requires_grad = true;
      node->grad.assign(node->value.size(), S(0));
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.n_);
      node->backprop = std::move(backprop);
    }
    Tensor t;
    t.n_ = std::move(node);
    return t;
  }

 private:
  static Tensor leaf(Shape shape, std::vector<S> data, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->id = detail::next_node_id();
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), S(0));
    Tensor t;
    t.n_ = std::move(node);
    return t;
  }

  std::shared_ptr<Node> n_;
};

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.value())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace sfnet
