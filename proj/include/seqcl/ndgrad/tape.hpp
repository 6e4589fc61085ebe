#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seqcl/error.hpp"
#include "seqcl/ndgrad/tensor.hpp"

namespace seqcl {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const noexcept { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of a computation. Nodes are appended in evaluation order,
/// which is already a topological order, so backward is a single reverse sweep.
class Tape {
 public:
  /// Propagates the node's accumulated gradient to its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), "constant", false, {}); }
  Var variable(Tensor value) { return push(std::move(value), "variable", true, {}); }

  /// Records an op output. `requires_grad` should be the OR of the inputs';
  /// when false the backward closure is dropped.
  Var record(Tensor value, const char* op, bool requires_grad, BackwardFn backward) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "' with shape " +
                         shape_str(value.shape()));
    }
    return push(std::move(value), op, requires_grad, requires_grad ? std::move(backward) : BackwardFn{});
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }

  /// Gradient buffer for node `id`, allocated as zeros on first use.
  Tensor& grad(std::size_t id) {
    auto& node = nodes_[id];
    if (!node.has_grad) {
      node.grad = Tensor(node.value.shape(), 0.0);
      node.has_grad = true;
    }
    return node.grad;
  }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  /// Gradient of `root` w.r.t. `v` after backward(); zeros when `v` did not
  /// influence the root.
  Tensor grad_of(Var v) const {
    const auto& node = nodes_[v.id()];
    return node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0);
  }

  void backward(Var root) {
    if (root.valid() && &root.tape() != this) throw Error("backward: root belongs to another tape");
    if (nodes_[root.id()].value.size() != 1) {
      throw ShapeError("backward: root must be scalar, got shape " + shape_str(nodes_[root.id()].value.shape()));
    }
    for (auto& n : nodes_) {
      n.grad = Tensor();
      n.has_grad = false;
    }
    if (!nodes_[root.id()].requires_grad) return;
    grad(root.id()).fill(1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.has_grad || !node.backward) continue;
      node.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    const char* op = "";
    BackwardFn backward;
  };

  Var push(Tensor value, const char* op, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace seqcl
