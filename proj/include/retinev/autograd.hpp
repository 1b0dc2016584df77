// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "retinev/tensor.hpp"

namespace retinev::ag {

/// Per-thread switch for graph recording. Inference runs under NoGradGuard so
/// intermediate activations are released as soon as they go out of scope.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // lazily allocated, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_ref() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  [[nodiscard]] bool parent_needs_grad(std::size_t i) const { return parents[i]->requires_grad; }
};

/// Handle to a node in the recorded computation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading; never use on graph interior nodes.
  [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
  [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
  [[nodiscard]] Tensor<T>& mutable_grad() { return node_->grad_ref(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }
  [[nodiscard]] T item() const { return node_->value[0]; }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records an op result. The backward closure receives the result node and
/// accumulates into parent gradients for parents with requires_grad.
template <class T>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Reverse-mode sweep from `root`, seeding d(root)/d(root) = 1 elementwise.
template <class T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_ref().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace retinev::ag
