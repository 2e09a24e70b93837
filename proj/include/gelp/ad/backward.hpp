#pragma once

#include <unordered_map>
#include <unordered_set>

#include "gelp/ad/ops.hpp"

namespace gelp::ad {

struct GradOptions {
  /// Record the backward pass so the returned gradients can be differentiated.
  bool create_graph = false;
};

template <class T>
class GraphWalker {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  static std::vector<std::optional<Tensor<T>>> run(const Tensor<T>& output, const std::vector<Tensor<T>>& wrt,
                                                   const Tensor<T>& seed, GradOptions opts) {
    std::vector<std::optional<Tensor<T>>> result(wrt.size());
    if (!output.requires_grad()) return result;
    require(seed.shape() == output.shape(), "gradient seed shape must match the output");

    std::unordered_set<const detail::Node<T>*> targets;
    for (const auto& w : wrt)
      if (w.defined() && w.requires_grad()) targets.insert(w.id());

    const auto order = topological_order(output.node_);
    // A node is relevant when some target is reachable through its inputs.
    std::unordered_set<const detail::Node<T>*> relevant;
    for (const auto& n : order) {
      bool r = targets.count(n.get()) > 0;
      for (const auto& in : n->inputs) r = r || relevant.count(in.id()) > 0;
      if (r) relevant.insert(n.get());
    }

    GradMode mode(opts.create_graph);
    std::unordered_map<const detail::Node<T>*, Tensor<T>> grads;
    grads.emplace(output.id(), opts.create_graph ? seed : seed.detach());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto& n = *it;
      auto found = grads.find(n.get());
      if (found == grads.end() || !relevant.count(n.get())) continue;
      if (!n->backward) continue;
      const Tensor<T> g = found->second;
      if (!targets.count(n.get())) grads.erase(found);
      bool needed = false;
      for (const auto& in : n->inputs) needed = needed || (in.requires_grad() && relevant.count(in.id()));
      if (!needed) continue;
      auto in_grads = n->backward(n->inputs, Tensor<T>(n), g);
      for (std::size_t i = 0; i < n->inputs.size(); ++i) {
        const auto& in = n->inputs[i];
        if (!in_grads[i] || !in.requires_grad() || !relevant.count(in.id())) continue;
        auto slot = grads.find(in.id());
        if (slot == grads.end())
          grads.emplace(in.id(), *in_grads[i]);
        else
          slot->second = add(slot->second, *in_grads[i]);
      }
    }
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      if (!wrt[i].defined()) continue;
      auto found = grads.find(wrt[i].id());
      if (found != grads.end()) result[i] = found->second;
    }
    return result;
  }

  static std::vector<Tensor<T>> reachable_leaves(const Tensor<T>& output) {
    std::vector<Tensor<T>> leaves;
    if (!output.requires_grad()) return leaves;
    for (const auto& n : topological_order(output.node_))
      if (!n->backward && n->requires_grad) leaves.push_back(Tensor<T>(n));
    return leaves;
  }

 private:
  /// Post-order over nodes that require gradients (inputs before consumers).
  static std::vector<NodePtr> topological_order(const NodePtr& root) {
    std::vector<NodePtr> order;
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack{{root, 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const auto& in = node->inputs[next++];
        if (in.requires_grad() && seen.insert(in.id()).second) stack.emplace_back(in.node_, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;
  }
};

/// Gradients of `output` with respect to each tensor in `wrt` (leaves or
/// intermediate results). An entry is empty when `wrt[i]` does not influence
/// the output through recorded ops; that is distinct from a zero gradient.
/// Non-scalar outputs need an explicit seed (the vector in the vector-Jacobian product).
template <class T>
std::vector<std::optional<Tensor<T>>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& wrt,
                                           GradOptions opts = {}, std::optional<Tensor<T>> seed = std::nullopt) {
  if (!seed) {
    require(output.size() == 1, "grad of a non-scalar output needs an explicit seed");
    seed = Tensor<T>(output.shape(), T(1));
  }
  return GraphWalker<T>::run(output, wrt, *seed, opts);
}

/// Gradients for every trainable leaf reachable from a scalar loss.
template <class T>
class GradientMap {
 public:
  GradientMap() = default;
  GradientMap(const std::vector<Tensor<T>>& leaves, std::vector<std::optional<Tensor<T>>> grads) {
    for (std::size_t i = 0; i < leaves.size(); ++i)
      if (grads[i]) map_.emplace(leaves[i].id(), std::move(*grads[i]));
  }

  /// Empty for tensors that are detached from the loss.
  std::optional<Tensor<T>> operator()(const Tensor<T>& t) const {
    auto found = map_.find(t.id());
    if (found == map_.end()) return std::nullopt;
    return found->second;
  }
  std::size_t size() const { return map_.size(); }

 private:
  std::unordered_map<const detail::Node<T>*, Tensor<T>> map_;
};

template <class T>
GradientMap<T> backward(const Tensor<T>& loss, GradOptions opts = {}) {
  require(loss.size() == 1, "backward needs a scalar loss");
  const auto leaves = GraphWalker<T>::reachable_leaves(loss);
  return GradientMap<T>(leaves, grad(loss, leaves, opts));
}

}  // namespace gelp::ad
