#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mono3d/tensor.hpp"

namespace mono3d {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order; backward walks
/// them in reverse and calls each node's pullback with its output gradient.
class Tape {
 public:
  /// Receives the node's output value and the gradient flowing into it.
  using Pullback =
      std::function<void(const Tensor& out, std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. The pullback is dropped if no input needs grads.
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs,
             Pullback pullback);

  /// Seeds d(output)/d(output) = 1 and propagates. Output must hold a single
  /// element.
  void backward(Var output);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient accumulator of a node (allocated on demand).
  std::span<double> grad(Var v);
  /// Gradient after backward; zeros when nothing flowed into the node.
  Tensor grad_tensor(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_[id]->op; }

  /// Name of the first op whose output holds a NaN or infinity.
  std::optional<std::string> first_non_finite() const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    bool requires_grad = false;
    Pullback pullback;
  };

  Node& node(Var v) const;

  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace mono3d
