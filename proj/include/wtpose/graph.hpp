#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wtpose/tensor.hpp"

namespace wtpose {

using NodeId = std::size_t;

// Tape of tensor operations in creation (= topological) order. Reverse-mode
// differentiation sweeps the tape backwards from a scalar loss node.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  struct Node {
    std::string op;
    std::string scope;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;  // parameter leaves reference, not copy
    bool sink_to_external = false;
    bool requires_grad = false;
    std::vector<T> grad;
    BackwardFn backward;
  };

  // RAII name prefix for nodes recorded while alive; used in diagnostics.
  class Scope {
   public:
    Scope(Graph& g, const std::string& name) : g_(g) { g_.scopes_.push_back(name); }
    ~Scope() { g_.scopes_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  NodeId constant(Tensor<T> value) { return leaf("constant", std::move(value), nullptr, false, false); }

  // Leaf whose gradient stays inside the graph (read back with grad()).
  NodeId variable(Tensor<T> value) { return leaf("variable", std::move(value), nullptr, grad_enabled_, false); }

  // Leaf referencing a tensor owned elsewhere. When trainable, backward adds
  // the gradient into the tensor's own grad buffer. The tensor must outlive
  // the graph.
  NodeId parameter(const Tensor<T>& p, bool trainable = true) {
    return leaf("parameter", Tensor<T>(), &p, grad_enabled_ && trainable, grad_enabled_ && trainable);
  }

  NodeId record(std::string op, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn backward) {
    Node node;
    node.op = std::move(op);
    node.scope = scope_path();
    node.inputs = std::move(inputs);
    if (!value.all_finite()) {
      throw NumericError("non-finite value produced by '" + node.op + "'" +
                         (node.scope.empty() ? std::string() : " in " + node.scope) + " (node " +
                         std::to_string(nodes_.size()) + ", shape " + to_string(value.shape()) + ")");
    }
    node.value = std::move(value);
    for (NodeId in : node.inputs) node.requires_grad = node.requires_grad || nodes_.at(in).requires_grad;
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  // Gradient accumulated into a non-parameter node by the last backward().
  std::span<const T> grad(NodeId id) const { return nodes_.at(id).grad; }

  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  // During backward: the buffer a node adds its input's gradient into, or an
  // empty span when that input does not need one.
  std::span<T> grad_sink(NodeId id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(value(id).numel(), T(0));
    return n.grad;
  }

  std::span<const T> grad_out(NodeId id) const { return nodes_.at(id).grad; }

  void backward(NodeId loss) {
    if (value(loss).numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + to_string(value(loss).shape()));
    }
    if (!nodes_.at(loss).requires_grad) return;
    for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T(0));
    grad_sink(loss)[0] = T(1);
    for (NodeId i = loss + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.sink_to_external) n.external->accumulate_grad(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }

 private:
  NodeId leaf(const char* op, Tensor<T> value, const Tensor<T>* external, bool requires_grad, bool sink) {
    Node node;
    node.op = op;
    node.scope = scope_path();
    node.value = std::move(value);
    node.external = external;
    node.requires_grad = requires_grad;
    node.sink_to_external = sink;
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  std::string scope_path() const {
    std::string s;
    for (const auto& part : scopes_) {
      if (!s.empty()) s += '.';
      s += part;
    }
    return s;
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::string> scopes_;
};

}  // namespace wtpose
