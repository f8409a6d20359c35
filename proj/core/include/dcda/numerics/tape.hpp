#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "dcda/numerics/matrix.hpp"

namespace dcda {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode gradient tape scoped to one forward pass. Nodes are appended
// in evaluation order, so backward is a reverse sweep over the vector.
// Not thread-safe: one tape per thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const RowMajorXd& upstream)>;

  explicit Tape(bool tracking = true) : tracking_(tracking) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return tracking_; }

  // Leaves. Non-finite values are rejected.
  Var leaf(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var variable(Matrix value) { return leaf(std::move(value), true); }

  // Records the output of an op. The backward closure is kept only when
  // tracking is on and at least one input needs a gradient.
  Var record(std::string_view op, Matrix value, std::initializer_list<Var> inputs,
             Backward backward);
  Var record(std::string_view op, Matrix value, const std::vector<Var>& inputs,
             Backward backward);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root, or the given cotangent.
  void backward(Var root);
  void backward(Var root, const Matrix& seed);

  // Gradient accumulated into `v`; zeros when nothing reached it.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    RowMajorXd grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  bool any_requires_grad(const Var* begin, const Var* end) const;
  Var push(std::string_view op, Matrix value, bool needs_grad, Backward backward);

  std::vector<Node> nodes_;
  bool tracking_;
};

}  // namespace dcda
