#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iln/errors.hpp"
#include "iln/tensor.hpp"

/**
 * \file
 * \brief Reverse-mode automatic differentiation over dense tensors.
 *
 * Every op returns a `Var` whose node remembers its inputs and a closure that
 * propagates the node's gradient to them. `backward(loss)` walks the graph in
 * reverse topological order. Leaves created with `leaf()` accumulate their
 * gradient across calls until cleared.
 */

namespace iln::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  ///< empty until a gradient reaches the node
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}  // namespace detail

[[nodiscard]] inline bool grad_mode() noexcept { return detail::grad_enabled; }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a graph node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
  [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
  [[nodiscard]] const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }
  [[nodiscard]] bool valid() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
[[nodiscard]] Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

/// A differentiable leaf (parameter or input under test).
template <typename T>
[[nodiscard]] Var<T> leaf(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

namespace detail {

template <typename T, typename Fn>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs, Fn&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_mode()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::forward<Fn>(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_op_n(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_mode()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

}  // namespace detail

/// Accumulates d(loss)/d(leaf) into every reachable leaf.
template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // iterative post-order DFS gives a topological order
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // free intermediate gradients; leaves keep theirs
  for (Node<T>* node : order) {
    if (node->backward) node->grad = Tensor<T>();
  }
}

}  // namespace iln::ad
