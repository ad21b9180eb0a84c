#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mslm/ndarray.hpp"

namespace mslm {

// One node in the dynamically built computation graph. `value` is the forward
// result; `grad` always has the same shape and starts zeroed. Leaves have no
// inputs and no backward_fn; their grads accumulate across backward() calls
// until explicitly reset.
template <typename T>
struct GraphNode {
  std::string op;
  std::vector<std::shared_ptr<GraphNode>> inputs;
  NdArray<T> value;
  NdArray<T> grad;
  std::function<void(GraphNode&)> backward_fn;
  bool requires_grad = false;

  GraphNode(std::string op_name, NdArray<T> v)
      : op(std::move(op_name)), value(std::move(v)), grad(NdArray<T>::zeros(value.shape)) {}
};

template <typename T>
class Tensor {
 public:
  using Node = GraphNode<T>;
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  // Trainable leaf: gradient accumulates across backward passes.
  static Tensor param(NdArray<T> v) {
    auto n = std::make_shared<Node>("param", std::move(v));
    n->requires_grad = true;
    return Tensor(std::move(n));
  }

  // Non-trainable leaf (inputs, constants).
  static Tensor constant(NdArray<T> v) {
    return Tensor(std::make_shared<Node>("const", std::move(v)));
  }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  const NdArray<T>& value() const { return node_->value; }
  NdArray<T>& value() { return node_->value; }
  const NdArray<T>& grad() const { return node_->grad; }
  NdArray<T>& grad() { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }

  void zero_grad() { node_->grad.fill(T(0)); }

  T item() const {
    if (node_->value.numel() != 1) {
      throw ShapeError("item: tensor has shape " + shape_str(node_->value.shape));
    }
    return node_->value.data[0];
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
inline void topo_order(GraphNode<T>* root, std::vector<GraphNode<T>*>& out) {
  // Iterative post-order DFS; input order makes the result deterministic.
  std::unordered_set<GraphNode<T>*> visited;
  struct Frame {
    GraphNode<T>* node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      GraphNode<T>* child = f.node->inputs[f.next_input++].get();
      if (visited.insert(child).second) stack.push_back({child, 0});
    } else {
      out.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Non-leaf grads are reset first so
// that each call contributes exactly d(root)/d(leaf) to every leaf.
template <typename T>
inline void backward(const Tensor<T>& root) {
  if (root.value().numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " +
                     shape_str(root.value().shape));
  }
  std::vector<GraphNode<T>*> topo;
  detail::topo_order(root.node().get(), topo);
  for (GraphNode<T>* n : topo) {
    if (!n->inputs.empty()) n->grad.fill(T(0));
  }
  root.node()->grad.data[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    GraphNode<T>* n = *it;
    if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace mslm
