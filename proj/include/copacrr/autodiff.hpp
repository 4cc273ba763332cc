#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "copacrr/error.hpp"
#include "copacrr/tensor.hpp"

namespace copacrr {

/// Handle to a node in a Graph. Only meaningful for the graph that created it.
struct Var {
  std::size_t id = 0;
};

/// Tape-based reverse-mode differentiation.
///
/// Nodes are appended in creation order, which is already a topological
/// order: every node's inputs were created before it. backward() walks the
/// tape once in reverse, so each node's rule runs at most once.
///
/// A graph is single-threaded. Independent graphs share nothing and can be
/// built and differentiated concurrently.
class Graph {
 public:
  /// Receives the gradient flowing into a node and pushes it to its inputs.
  using BackwardRule = std::function<void(Graph&, const Tensor& out_grad)>;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  Var parameter(Tensor value) { return push(std::move(value), true, {}); }

  /// Adds an op output. It requires a gradient iff any input does; the rule is
  /// dropped otherwise.
  Var add(Tensor value, std::initializer_list<Var> inputs, BackwardRule rule) {
    return add(std::move(value), std::vector<Var>(inputs), std::move(rule));
  }

  Var add(Tensor value, const std::vector<Var>& inputs, BackwardRule rule) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).requires_grad;
    return push(std::move(value), needs, needs ? std::move(rule) : BackwardRule{});
  }

  const Tensor& value(Var v) const { return node(v).value; }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient accumulated by the last backward(). Zeros if none reached v.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.grad) return *n.grad;
    return Tensor(n.value.shape());
  }

  bool has_grad(Var v) const { return node(v).grad.has_value(); }

  /// Buffer that a backward rule accumulates into for input v, allocated on
  /// first use. Null when v does not take part in differentiation.
  Tensor* grad_sink(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value.shape());
    return &*n.grad;
  }

  /// Seeds d(root)/d(root) with `seed` (every element) and propagates.
  void backward(Var root, double seed = 1.0) {
    for (Node& n : nodes_) n.grad.reset();
    Tensor* g = grad_sink(root);
    if (!g) return;
    g->fill(seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.rule || !n.grad) continue;
      // Rules only touch their inputs' buffers, never their own.
      n.rule(*this, *n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    BackwardRule rule;
  };

  Var push(Tensor value, bool requires_grad, BackwardRule rule) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, std::move(rule)});
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw Error("invalid graph variable " + std::to_string(v.id));
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw Error("invalid graph variable " + std::to_string(v.id));
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

}  // namespace copacrr
