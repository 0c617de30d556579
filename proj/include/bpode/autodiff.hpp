#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpode/errors.hpp"
#include "bpode/tensor.hpp"

namespace bpode {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  AddScalar,
  LinComb,
  MatMul,
  MatMulNT,
  Sum,
  Square,
  SumSquares,
  Dot,
  Slice,
  ConcatCols,
  Column,
  PrependOnes,
  ScaleByScalar,
};

const char* op_name(Op op);

// Reverse-mode tape. Nodes are appended in evaluation order, so the node index
// is a topological order and the reverse pass is a single backward sweep.
// A tape may be swept several times with different seeds (Jacobian rows).
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Op op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output with seed 1.
  void backward(Var output);
  /// Reverse sweep with an explicit seed of the output's shape.
  void backward(Var output, const Tensor& seed);
  /// Gradient accumulated by the last sweep (zeros if the node was not reached).
  Tensor grad(Var v) const;

  /// First node whose value is non-finite, if any.
  std::optional<std::size_t> first_nonfinite() const { return first_nonfinite_; }
  /// Throws NumericError naming the first non-finite node.
  void check_finite() const;

  // Used by the primitive implementations.
  Var push(Tensor value, Op op, std::vector<std::size_t> inputs, Backward backward);
  Tensor& grad_slot(std::size_t id);
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Op op = Op::Constant;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  void clear_grads();

  std::vector<Node> nodes_;
  std::optional<std::size_t> first_nonfinite_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// Primitives. Rank-1 tensors act as column vectors.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// sum_i coeffs[i] * terms[i]; all terms share one shape.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);
/// a (m x k) times b (k x n).
Var matmul(Var a, Var b);
/// a (m x k) times transpose of b (n x k).
Var matmul_nt(Var a, Var b);
Var sum(Var a);
Var square(Var a);
Var sum_squares(Var a);
Var dot(Var a, Var b);
/// a (any shape) times a 1-element tensor s.
Var scale_by(Var a, Var s);
/// Matrix view of a contiguous block of a's flat storage.
Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols);
Var concat_cols(Var a, Var b);
Var column(Var a, std::size_t j);
/// [1 | a] for a matrix a.
Var prepend_ones(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return neg(a); }

// Plain kernels shared by the tape and the value-only code paths.
namespace kernels {
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
}  // namespace kernels

/// Scalar function of a parameter vector, built on a tape.
using TapeFunction = std::function<Var(Tape&, Var)>;

struct ValueAndGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// f(theta) and its gradient. Throws NumericError on any non-finite node.
ValueAndGrad value_and_grad(const TapeFunction& f, std::span<const double> theta);

inline ValueAndGrad value_and_grad(const TapeFunction& f, const Eigen::VectorXd& theta) {
  return value_and_grad(f, std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())));
}

/// Row i is the gradient of term(theta, data[i]).
template <typename Datum>
RowMatrix per_sample_grads(const std::function<Var(Tape&, Var, const Datum&)>& term,
                           std::span<const double> theta, std::span<const Datum> data) {
  RowMatrix out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(theta.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Datum& datum = data[i];
    auto g = value_and_grad([&](Tape& tape, Var th) { return term(tape, th, datum); }, theta);
    out.row(static_cast<Eigen::Index>(i)) = g.grad.transpose();
  }
  return out;
}

}  // namespace bpode
