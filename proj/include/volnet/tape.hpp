#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "volnet/errors.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

// node_id -> gradient tensor of the node's forward shape. Entries are
// absent until something flowed into them.
template <typename Scalar>
class GradMap {
 public:
  explicit GradMap(std::size_t nodes) : grads_(nodes) {}

  bool has(NodeId id) const {
    return id >= 0 && id < static_cast<NodeId>(grads_.size()) && grads_[static_cast<std::size_t>(id)].defined();
  }

  const Tensor<Scalar>& at(NodeId id) const {
    if (!has(id)) throw Error("no gradient recorded for node " + std::to_string(id));
    return grads_[static_cast<std::size_t>(id)];
  }

  const Tensor<Scalar>& at(const Tensor<Scalar>& t) const { return at(t.node()); }

  void accumulate(NodeId id, const Tensor<Scalar>& g) {
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot.defined()) {
      slot = g;
      return;
    }
    if (slot.shape() != g.shape()) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(slot.shape()));
    }
    // clone before += : the incoming tensor may share storage with a saved
    // forward value
    Tensor<Scalar> sum = slot.clone();
    Scalar* dst = sum.mutable_data();
    const Scalar* src = g.data();
    for (index_t i = 0; i < sum.size(); ++i) dst[i] += src[i];
    slot = sum;
  }

  void release(NodeId id) { grads_[static_cast<std::size_t>(id)] = Tensor<Scalar>(); }

 private:
  std::vector<Tensor<Scalar>> grads_;
};

// Recorded computation graph. Nodes are appended in execution order, so
// every node's inputs precede it and a single reverse sweep propagates
// gradients with each node visited exactly once.
template <typename Scalar>
class Tape {
 public:
  // upstream gradient -> one gradient per input (same order); an undefined
  // entry means "no gradient for that input".
  using BackwardFn = std::function<std::vector<Tensor<Scalar>>(const Tensor<Scalar>&)>;

  // Registers t as a leaf and binds it to this tape in place.
  Tensor<Scalar>& watch(Tensor<Scalar>& t) {
    t.tape_ = this;
    t.node_ = add_node("leaf", t.shape(), {}, nullptr);
    return t;
  }

  // Binds an op result: records a node holding the inputs and the backward
  // closure (which owns whatever forward values it needs).
  void attach(Tensor<Scalar>& out, const char* op, std::vector<NodeId> inputs, BackwardFn backward) {
    for (NodeId id : inputs) {
      if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
        throw Error(std::string(op) + ": input tensor is not tracked on this tape");
      }
    }
    out.tape_ = this;
    out.node_ = add_node(op, out.shape(), std::move(inputs), std::move(backward));
  }

  std::size_t size() const { return nodes_.size(); }
  const char* op_of(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].op; }
  const Shape& shape_of(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

  // Reverse-mode sweep from a scalar loss. Consumes the recorded closures:
  // saved forward values and intermediate gradients are released as soon as
  // they have been used.
  GradMap<Scalar> backward(const Tensor<Scalar>& loss) {
    if (loss.tape() != this) throw Error("backward: loss is not tracked on this tape");
    if (!loss.is_scalar()) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    GradMap<Scalar> grads(nodes_.size());
    grads.accumulate(loss.node(), Tensor<Scalar>::full(loss.shape(), Scalar(1)));
    for (NodeId id = loss.node(); id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (!grads.has(id)) {
        node.backward = nullptr;
        continue;
      }
      if (!node.backward) continue;  // leaf: keep its gradient
      std::vector<Tensor<Scalar>> input_grads = node.backward(grads.at(id));
      if (input_grads.size() != node.inputs.size()) {
        throw Error(std::string(node.op) + ": backward returned " + std::to_string(input_grads.size()) +
                    " gradients for " + std::to_string(node.inputs.size()) + " inputs");
      }
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (!input_grads[i].defined()) continue;
        if (input_grads[i].shape() != nodes_[static_cast<std::size_t>(node.inputs[i])].shape) {
          throw ShapeError(std::string(node.op) + ": input gradient shape " + shape_str(input_grads[i].shape()) +
                           " does not match forward shape " +
                           shape_str(nodes_[static_cast<std::size_t>(node.inputs[i])].shape));
        }
        grads.accumulate(node.inputs[i], input_grads[i]);
      }
      grads.release(id);
      node.backward = nullptr;  // frees saved forward values
    }
    return grads;
  }

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<NodeId> inputs;
    BackwardFn backward;
  };

  NodeId add_node(const char* op, Shape shape, std::vector<NodeId> inputs, BackwardFn backward) {
    nodes_.push_back(Node{op, std::move(shape), std::move(inputs), std::move(backward)});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

namespace detail {

// Resolves the tape an op result should record on; inputs tracked on two
// different tapes is a usage error.
template <typename Scalar>
Tape<Scalar>* result_tape(std::initializer_list<const Tensor<Scalar>*> inputs) {
  Tape<Scalar>* tape = nullptr;
  for (const Tensor<Scalar>* t : inputs) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) throw Error("inputs are tracked on different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace detail

}  // namespace volnet
