// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dflow/tensor.hpp"

namespace dflow {

using NodeId = std::size_t;

template <class T>
class BasicTape;

// Handle to a value recorded on a tape.
template <class T>
struct BasicVar {
  BasicTape<T>* tape = nullptr;
  NodeId id = 0;

  const BasicTensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

template <class T>
using Gradients = std::map<NodeId, BasicTensor<T>>;

// Records primitive ops in execution order. Inputs always precede the node
// that consumes them, so a single reverse sweep is a valid topological
// traversal. One tape per forward/backward pass.
template <class T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using Var = BasicVar<T>;
  // Adds d(loss)/d(input_i) into *input_grads[i]; entries are null for
  // inputs that do not require a gradient.
  using BackwardFn = std::function<void(const std::vector<T>& grad_out,
                                        std::span<std::vector<T>* const> input_grads)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(TensorT value) { return push(std::move(value), {}, nullptr, false, false); }

  // Trainable leaf; backward() reports a gradient for it.
  Var leaf(TensorT value) { return push(std::move(value), {}, nullptr, true, true); }

  Var record(TensorT value, std::vector<NodeId> inputs, BackwardFn fn) {
    bool needs = false;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) throw std::logic_error("tape input out of range");
      needs = needs || nodes_[in].requires_grad;
    }
    if (!needs) return push(std::move(value), {}, nullptr, false, false);
    return push(std::move(value), std::move(inputs), std::move(fn), true, false);
  }

  const TensorT& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  bool is_leaf(NodeId id) const { return nodes_.at(id).is_leaf; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Returns one gradient per trainable
  // leaf; leaves the loss does not depend on get zeros.
  Gradients<T> backward(Var loss) const {
    if (nodes_.empty()) throw std::logic_error("backward on empty tape");
    if (loss.tape != this) throw std::logic_error("loss recorded on another tape");
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss.id).shape()));
    }
    std::vector<std::vector<T>> grads(loss.id + 1);
    grads[loss.id].assign(1, T(1));
    std::vector<std::vector<T>*> slots;
    for (NodeId id = loss.id + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (grads[id].empty() || !n.backward) continue;
      slots.clear();
      for (NodeId in : n.inputs) {
        if (!nodes_[in].requires_grad) {
          slots.push_back(nullptr);
          continue;
        }
        if (grads[in].empty()) grads[in].assign(nodes_[in].value.size(), T(0));
        slots.push_back(&grads[in]);
      }
      n.backward(grads[id], slots);
      std::vector<T>().swap(grads[id]);
    }
    Gradients<T> out;
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (!n.is_leaf) continue;
      if (id <= loss.id && !grads[id].empty()) {
        try {
          out.emplace(id, TensorT(n.value.shape(), std::move(grads[id])));
        } catch (const NonFiniteError& e) {
          throw NonFiniteError(std::string("gradient accumulation: ") + e.what());
        }
      } else {
        out.emplace(id, TensorT::zeros(n.value.shape()));
      }
    }
    return out;
  }

 private:
  struct Node {
    TensorT value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  Var push(TensorT value, std::vector<NodeId> inputs, BackwardFn fn, bool rg, bool leaf) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn), rg, leaf});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;

}  // namespace dflow
