// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tinydistill/error.hpp"

namespace td {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

template <class S>
struct Node;

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

template <class S>
class Grads;

/// One vertex of a dynamically built computation graph. Values are written
/// once at construction; gradients live in an external Grads map so that
/// independent graphs sharing leaf nodes can run backward concurrently.
template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  bool requires_grad = false;
  std::vector<NodePtr<S>> parents;
  std::function<void(const Node<S>&, const std::vector<S>&, Grads<S>&)> backward;

  std::size_t size() const { return value.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
};

template <class S>
NodePtr<S> make_leaf(Shape shape, std::vector<S> value, bool requires_grad) {
  check(numel(shape) == value.size(), "leaf: shape/data size mismatch");
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <class S>
NodePtr<S> make_constant(Shape shape, std::vector<S> value) {
  return make_leaf<S>(std::move(shape), std::move(value), false);
}

/// Gradient store for one backward pass, keyed by node identity.
template <class S>
class Grads {
public:
  /// Gradient buffer of a node, zero-initialized on first access.
  std::vector<S>& of(const Node<S>* n) {
    auto [it, fresh] = g_.try_emplace(n);
    if (fresh) it->second.assign(n->value.size(), S(0));
    return it->second;
  }

  /// Gradient if the node was reached by backward, nullptr otherwise.
  const std::vector<S>* find(const Node<S>* n) const {
    auto it = g_.find(n);
    return it == g_.end() ? nullptr : &it->second;
  }

  /// Gradient with off-path nodes reported as exact zeros.
  std::vector<S> get_or_zero(const NodePtr<S>& n) const {
    if (const auto* g = find(n.get())) return *g;
    return std::vector<S>(n->value.size(), S(0));
  }

private:
  std::unordered_map<const Node<S>*, std::vector<S>> g_;
};

/// Reverse-mode sweep from a scalar loss. `seed` is the gradient of the
/// enclosing objective with respect to this loss (1 for a plain backward,
/// a batch weight when per-sequence losses are accumulated separately).
template <class S>
void backward(const NodePtr<S>& loss, Grads<S>& grads, S seed = S(1)) {
  check(loss != nullptr, "backward: null loss");
  check(loss->value.size() == 1, "backward: loss must be a scalar, got " +
                                     std::to_string(loss->value.size()) +
                                     " elements");
  if (!loss->requires_grad) return;

  // iterative post-order DFS over grad-requiring ancestry
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grads.of(loss.get())[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (!n->backward) continue;
    const auto* g = grads.find(n);
    if (!g) continue;
    n->backward(*n, *g, grads);
  }
}

} // namespace td
