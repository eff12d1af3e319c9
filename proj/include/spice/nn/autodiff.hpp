#pragma once

// Tape-free reverse-mode differentiation. Every op result keeps shared
// pointers to its inputs plus a closure that pushes its gradient upstream;
// backward() walks that DAG once in reverse topological order and then
// releases it.

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spice/nn/tensor.hpp"

namespace spice::nn {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool grad_ready = false;
  bool requires_grad = false;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad_ready; }

  // Zero-initialized on first use.
  Tensor<T>& grad_buffer() {
    if (!grad_ready) {
      grad = Tensor<T>(value.shape, T(0));
      grad_ready = true;
    }
    return grad;
  }

  void clear_grad() {
    grad = Tensor<T>();
    grad_ready = false;
  }
};

template <typename T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  static Var leaf(Tensor<T> value, bool requires_grad) {
    Var v;
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.size(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }

  // Gradient, or zeros when nothing has flowed into this variable.
  Tensor<T> grad() const {
    return node_->has_grad() ? node_->grad : Tensor<T>(shape(), T(0));
  }
  void zero_grad() { node_->clear_grad(); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!all_finite<T>(t.values())) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace detail

// Wraps an op result. The backward closure receives the result node (whose
// grad is populated) and must accumulate into parents that require grad.
// No graph is recorded when no input requires grad.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn, const char* op) {
  detail::check_finite(value, op);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  Var<T> out = Var<T>::leaf(std::move(value), any);
  if (any) {
    auto& node = out.node();
    node.parents.reserve(inputs.size());
    for (const auto& in : inputs) node.parents.push_back(in.node_ptr());
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate, so
// callers zero parameter grads between steps. The graph is released
// afterwards; calling backward on the same loss again is an error.
template <typename T>
void backward(const Var<T>& loss) {
  auto& root = loss.node();
  if (root.released) {
    throw GraphError("backward: graph already released");
  }
  if (root.value.size() != 1) {
    throw GraphError("backward: loss must be a scalar, got shape " +
                     shape_str(root.value.shape));
  }
  if (!root.requires_grad) {
    throw GraphError("backward: loss does not depend on any parameter");
  }

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }

  for (Node<T>* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->released = true;
      if (n != &root) n->clear_grad();
    }
  }
}

// Forward identity; contributes nothing upstream.
template <typename T>
Var<T> stop_gradient(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

}  // namespace spice::nn
