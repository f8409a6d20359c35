#include "dcda/numerics/tape.hpp"

#include <fmt/format.h>

#include "dcda/error.hpp"

namespace dcda {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  return push("leaf", std::move(value), requires_grad && tracking_, nullptr);
}

bool Tape::any_requires_grad(const Var* begin, const Var* end) const {
  for (const Var* v = begin; v != end; ++v) {
    if (v->tape() != this) {
      throw Error("tape", "operand recorded on a different tape");
    }
    if (nodes_[v->id()].requires_grad) return true;
  }
  return false;
}

Var Tape::record(std::string_view op, Matrix value,
                 std::initializer_list<Var> inputs, Backward backward) {
  const bool needs = tracking_ && any_requires_grad(inputs.begin(), inputs.end());
  return push(op, std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Var Tape::record(std::string_view op, Matrix value, const std::vector<Var>& inputs,
                 Backward backward) {
  const bool needs =
      tracking_ && any_requires_grad(inputs.data(), inputs.data() + inputs.size());
  return push(op, std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Var Tape::push(std::string_view op, Matrix value, bool needs_grad,
               Backward backward) {
  if (!value.all_finite()) {
    throw NumericError(fmt::format("{}: non-finite value in {} result", op,
                                   value.shape_string()));
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::backward(Var root) {
  const Matrix& v = value(root);
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError(fmt::format(
        "backward without seed needs a 1x1 root, got {}", v.shape_string()));
  }
  backward(root, Matrix(1, 1, 1.0));
}

void Tape::backward(Var root, const Matrix& seed) {
  const Matrix& v = value(root);
  if (seed.rows() != v.rows() || seed.cols() != v.cols()) {
    throw DimensionError(fmt::format("backward seed {} does not match root {}",
                                     seed.shape_string(), v.shape_string()));
  }
  if (!tracking_) throw Error("tape", "backward on a non-tracking tape");
  accumulate(root, seed.eigen());
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix(n.value.rows(), n.value.cols(), 0.0);
  return Matrix(n.grad);
}

}  // namespace dcda
