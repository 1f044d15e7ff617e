#include "mono3d/tape.hpp"

#include <algorithm>

namespace mono3d {

const Tensor& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw std::invalid_argument("tape: variable belongs to a different tape");
  }
  return *nodes_[v.id_];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->op = requires_grad ? "leaf" : "constant";
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs,
                 Pullback pullback) {
  auto n = std::make_unique<Node>();
  n->op = std::string(op);
  n->value = std::move(value);
  n->requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var v) {
    return node(v).requires_grad;
  });
  if (n->requires_grad) n->pullback = std::move(pullback);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var output) {
  Node& out = node(output);
  if (out.value.size() != 1) {
    throw ShapeError("backward: output must be a scalar, got " +
                     to_string(out.value.shape()));
  }
  out.value.grad()[0] = 1.0;
  for (std::size_t id = output.id_ + 1; id-- > 0;) {
    Node& n = *nodes_[id];
    if (!n.pullback || !n.value.has_grad()) continue;
    n.pullback(n.value, n.value.grad());
  }
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<double> Tape::grad(Var v) { return node(v).value.grad(); }

Tensor Tape::grad_tensor(Var v) const {
  const Tensor& t = node(v).value;
  Tensor g(t.shape());
  if (t.has_grad()) {
    std::copy(t.grad().begin(), t.grad().end(), g.values().begin());
  }
  return g;
}

std::optional<std::string> Tape::first_non_finite() const {
  for (const auto& n : nodes_) {
    if (!n->value.all_finite()) return n->op;
  }
  return std::nullopt;
}

}  // namespace mono3d
