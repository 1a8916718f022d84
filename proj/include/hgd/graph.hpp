#pragma once

#include <cassert>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hgd/tensor.hpp"

namespace hgd {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  using NodeId = std::uint32_t;

  Var() = default;
  Var(Graph<T>* graph, NodeId id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph<T>& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }

  const Tensor<T>& value() const { return graph_->value(id_); }
  Shape dims() const { return value().dims(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }

 private:
  Graph<T>* graph_ = nullptr;
  NodeId id_ = 0;
};

struct GraphOptions {
  /// Verify every recorded forward value is finite.
#ifdef NDEBUG
  bool check_finite = false;
#else
  bool check_finite = true;
#endif
  /// Fault injection for harness self-tests: conv1x1 weight gradients are
  /// scaled by 1.01 during backward.
  bool corrupt_backward = false;
};

/// Where backward() deposits gradients of parameter leaves.
enum class GradSink {
  kBoundTensors,  // summed into Tensor::grad() of the bound parameter
  kGraphOnly,     // kept in the graph; read back with bound_gradients()
};

/// Tape of differentiable operations. Nodes are appended in evaluation order,
/// so node ids are a topological order and one reverse sweep is a complete
/// backward pass.
///
/// A graph is single-threaded. Independent graphs may run concurrently as long
/// as they use GradSink::kGraphOnly when they share parameter tensors.
template <typename T>
class Graph {
 public:
  using NodeId = std::uint32_t;
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  Graph() = default;
  explicit Graph(GraphOptions options) : options_(options) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  GraphOptions& options() noexcept { return options_; }
  const GraphOptions& options() const noexcept { return options_; }

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    return push(Node{"constant", {}, std::move(value), nullptr, nullptr, false, {}});
  }

  /// Owned leaf; when `requires_grad` its gradient is readable via grad_of().
  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    return push(Node{"leaf", {}, std::move(value), nullptr, nullptr, requires_grad, {}});
  }

  /// Leaf bound to an external parameter tensor (not copied). The tensor must
  /// outlive the graph. Gradients flow only if tensor.requires_grad().
  Var<T> param(Tensor<T>& tensor) {
    return push(Node{"param", {}, Tensor<T>{}, &tensor, &tensor, tensor.requires_grad(), {}});
  }

  /// Appends an operation node. Inputs must already be in the graph.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<NodeId> inputs,
                BackwardFn backward) {
    bool needs_grad = false;
    for (NodeId in : inputs) {
      assert(in < nodes_.size() && "graph inputs must precede their consumer");
      needs_grad = needs_grad || nodes_[in].requires_grad;
    }
    if (options_.check_finite && !value.all_finite()) {
      throw NumericError("non-finite value produced by " + std::string(op));
    }
    return push(Node{std::string(op), std::move(inputs), std::move(value), nullptr, nullptr,
                     needs_grad, needs_grad ? std::move(backward) : BackwardFn{}});
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(NodeId id) const { return nodes_[id].op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  std::span<T> grad(NodeId id) {
    auto& g = grads_[id];
    if (g.empty()) g.assign(value(id).size(), T{0});
    return g;
  }

  bool has_grad(NodeId id) const { return !grads_[id].empty(); }

  std::span<const T> grad_of(Var<T> v) const { return grads_[v.id()]; }

  /// Reverse sweep from a scalar loss. Every node is visited at most once and
  /// gradients from multiple consumers are summed.
  void backward(Var<T> loss, GradSink sink = GradSink::kBoundTensors) {
    if (&loss.graph() != this) throw std::invalid_argument("loss belongs to another graph");
    if (loss.value().size() != 1) {
      throw DimensionError("backward requires a scalar loss, got dims " +
                           shape_str(loss.dims()));
    }
    for (auto& g : grads_) g.clear();
    grad(loss.id())[0] = T{1};
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || grads_[id].empty() || !n.backward) continue;
      n.backward(*this, id);
    }
    if (sink == GradSink::kBoundTensors) {
      for (NodeId id = 0; id < nodes_.size(); ++id) {
        Node& n = nodes_[id];
        if (!n.bound || !n.requires_grad || grads_[id].empty()) continue;
        auto dst = n.bound->grad();
        const auto& src = grads_[id];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  /// Parameter gradients gathered by the last backward(), in node order.
  /// A tensor bound more than once appears once per binding.
  std::vector<std::pair<Tensor<T>*, std::span<const T>>> bound_gradients() const {
    std::vector<std::pair<Tensor<T>*, std::span<const T>>> out;
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.bound && n.requires_grad && !grads_[id].empty()) {
        out.emplace_back(n.bound, std::span<const T>(grads_[id]));
      }
    }
    return out;
  }

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* bound = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    grads_.emplace_back();
    return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
  }

  GraphOptions options_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

}  // namespace hgd
