#pragma once

#include "mmif/core/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mmif {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording for its lifetime (inference, metric extraction).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }

  Buffer<Scalar>& grad_buffer() {
    if (!has_grad()) grad = Tensor<Scalar>(value.shape());
    return grad.data();
  }
};

/// Handle onto a node of the dynamic computation graph. Copies share the node.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  // Handles share their node, so mutation through a const handle is intended.
  Tensor<Scalar>& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int i) const { return node_->value.dim(i); }
  Index size() const { return node_->value.size(); }
  Scalar item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) const { node_->requires_grad = r; }
  bool has_grad() const { return node_->has_grad(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& mutable_grad() const { return node_->grad; }
  void zero_grad() const { node_->grad = Tensor<Scalar>(); }

  Var detach() const { return Var(node_->value, false); }
  const NodePtr& node() const { return node_; }

  /// Reverse-mode sweep seeded with d(this)/d(this) = 1 (or a given seed).
  void backward() const { backward(Tensor<Scalar>::ones(shape())); }

  void backward(const Tensor<Scalar>& seed) const {
    require_shape(seed.shape() == shape(), "backward seed shape mismatch");
    if (!node_->requires_grad) return;
    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> seen;
    // Iterative post-order DFS; order ends with the root.
    std::vector<std::pair<Node<Scalar>*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node<Scalar>* p = n->parents[i++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer() += seed.data();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<Scalar>* n = *it;
      if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
    // Interior gradients are transient; leaves keep theirs.
    for (Node<Scalar>* n : order)
      if (n->backward_fn) n->grad = Tensor<Scalar>();
  }

  static Var from_node(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  NodePtr node_;
};

/// Builds a result node; the backward closure is kept only when some parent needs gradients.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  bool needs = false;
  if (detail::grad_mode())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<Scalar>::from_node(std::move(node));
}

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> t) {
  return Var<Scalar>(std::move(t), false);
}

}  // namespace mmif
