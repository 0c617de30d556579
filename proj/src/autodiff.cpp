#include "bpode/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace bpode {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::LinComb: return "lincomb";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Sum: return "sum";
    case Op::Square: return "square";
    case Op::SumSquares: return "sum_squares";
    case Op::Dot: return "dot";
    case Op::Slice: return "slice";
    case Op::ConcatCols: return "concat_cols";
    case Op::Column: return "column";
    case Op::PrependOnes: return "prepend_ones";
    case Op::ScaleByScalar: return "scale_by";
  }
  return "unknown";
}

Var Tape::push(Tensor value, Op op, std::vector<std::size_t> inputs, Backward backward) {
  bool needs = op == Op::Leaf;
  for (auto in : inputs) needs = needs || nodes_[in].requires_grad;
  if (!first_nonfinite_ && !value.all_finite()) first_nonfinite_ = nodes_.size();
  Node node;
  node.value = std::move(value);
  node.op = op;
  node.requires_grad = needs;
  node.inputs = std::move(inputs);
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) { return push(std::move(value), Op::Leaf, {}, nullptr); }

Var Tape::constant(Tensor value) { return push(std::move(value), Op::Constant, {}, nullptr); }

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    if (n.grad.shape() != n.value.shape()) {
      n.grad = Tensor(n.value.shape());
    } else {
      n.grad.fill(0.0);
    }
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::clear_grads() {
  for (auto& n : nodes_) n.has_grad = false;
}

void Tape::backward(Var output) {
  if (output.value().size() != 1) {
    throw ValidationError("backward without seed needs a scalar output");
  }
  backward(output, Tensor(output.value().shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (!seed.same_shape(output.value())) throw ValidationError("seed shape mismatch");
  clear_grads();
  const std::size_t top = output.id();
  std::copy(seed.values().begin(), seed.values().end(), grad_slot(top).values().begin());
  for (std::size_t k = top + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, k);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::check_finite() const {
  if (!first_nonfinite_) return;
  std::ostringstream msg;
  msg << "non-finite value at tape node " << *first_nonfinite_ << " (" << op_name(nodes_[*first_nonfinite_].op)
      << ")";
  throw NumericError(msg.str());
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.size() != b.size() || a.rows() != b.rows()) {
    throw ValidationError(std::string(what) + ": shape mismatch");
  }
}

// Accumulate g into the grad of node `id` when it participates in the sweep.
void accumulate(Tape& tape, std::size_t id, const Tensor& g, double c = 1.0) {
  if (!tape.requires_grad(id)) return;
  Tensor& slot = tape.grad_slot(id);
  double* dst = slot.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < slot.size(); ++i) dst[i] += c * src[i];
}

}  // namespace

namespace kernels {

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      for (std::size_t j = 0; j < n; ++j) po[i * n + j] += aip * pb[p * n + j];
    }
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[j * k + p];
      po[i * n + j] = acc;
    }
  }
}

}  // namespace kernels

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), Op::Add, {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.out_grad(self));
    accumulate(t, ib, t.out_grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), Op::Sub, {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.out_grad(self));
    accumulate(t, ib, t.out_grad(self), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), Op::Mul, {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_slot(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_slot(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= c;
  const auto ia = a.id();
  return a.tape().push(std::move(out), Op::Scale, {ia},
                       [ia, c](Tape& t, std::size_t self) { accumulate(t, ia, t.out_grad(self), c); });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += c;
  const auto ia = a.id();
  return a.tape().push(std::move(out), Op::AddScalar, {ia},
                       [ia](Tape& t, std::size_t self) { accumulate(t, ia, t.out_grad(self)); });
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) throw ValidationError("lincomb: bad arguments");
  Tensor out(terms[0].value().shape());
  std::vector<std::size_t> ids;
  std::vector<double> cs;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require_same(out, terms[k].value(), "lincomb");
    if (coeffs[k] == 0.0) continue;
    const Tensor& v = terms[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * v[i];
    ids.push_back(terms[k].id());
    cs.push_back(coeffs[k]);
  }
  auto inputs = ids;
  return terms[0].tape().push(std::move(out), Op::LinComb, std::move(inputs),
                              [ids, cs](Tape& t, std::size_t self) {
                                for (std::size_t k = 0; k < ids.size(); ++k) {
                                  accumulate(t, ids[k], t.out_grad(self), cs[k]);
                                }
                              });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) throw ValidationError("matmul: inner dimension mismatch");
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  kernels::matmul(av, bv, out);
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), Op::MatMul, {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);  // m x n
    const Tensor& A = t.value(ia);       // m x k
    const Tensor& B = t.value(ib);       // k x n
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_slot(ia);  // g B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_slot(ib);  // A^T g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) throw ValidationError("matmul_nt: inner dimension mismatch");
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  kernels::matmul_nt(av, bv, out);
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), Op::MatMulNT, {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);  // m x n
    const Tensor& A = t.value(ia);       // m x k
    const Tensor& B = t.value(ib);       // n x k
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_slot(ia);  // g B
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * B[j * k + p];
        }
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_slot(ib);  // g^T A
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * A[i * k + p];
        }
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return a.tape().push(Tensor::scalar(s), Op::Sum, {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.out_grad(self).item();
    for (auto& v : t.grad_slot(ia).values()) v += g;
  });
}

Var square(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= v;
  const auto ia = a.id();
  return a.tape().push(std::move(out), Op::Square, {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.out_grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
  });
}

Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  const auto ia = a.id();
  return a.tape().push(Tensor::scalar(s), Op::SumSquares, {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.out_grad(self).item();
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * g * av[i];
  });
}

Var dot(Var a, Var b) {
  require_same(a.value(), b.value(), "dot");
  double s = 0.0;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(Tensor::scalar(s), Op::Dot, {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const double g = t.out_grad(self).item();
    accumulate(t, ia, t.value(ib), g);
    accumulate(t, ib, t.value(ia), g);
  });
}

Var scale_by(Var a, Var s) {
  if (s.value().size() != 1) throw ValidationError("scale_by: scalar factor expected");
  const double c = s.value().item();
  Tensor out = a.value();
  for (auto& v : out.values()) v *= c;
  const auto ia = a.id(), is = s.id();
  return a.tape().push(std::move(out), Op::ScaleByScalar, {ia, is}, [ia, is](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    accumulate(t, ia, g, t.value(is).item());
    if (t.requires_grad(is)) {
      const Tensor& av = t.value(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad_slot(is)[0] += acc;
    }
  });
}

Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  if (offset + rows * cols > av.size()) throw ValidationError("slice out of range");
  Tensor out = Tensor::matrix(rows, cols);
  std::copy_n(av.data() + offset, rows * cols, out.data());
  const auto ia = a.id();
  return a.tape().push(std::move(out), Op::Slice, {ia}, [ia, offset](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) throw ValidationError("concat_cols: row mismatch");
  const std::size_t m = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out = Tensor::matrix(m, ca + cb);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = av[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = bv[i * cb + j];
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), Op::ConcatCols, {ia, ib},
                       [ia, ib, m, ca, cb](Tape& t, std::size_t self) {
                         const Tensor& g = t.out_grad(self);
                         if (t.requires_grad(ia)) {
                           Tensor& ga = t.grad_slot(ia);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
                         }
                         if (t.requires_grad(ib)) {
                           Tensor& gb = t.grad_slot(ib);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                         }
                       });
}

Var column(Var a, std::size_t j) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (j >= n) throw ValidationError("column index out of range");
  Tensor out = Tensor::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) out[i] = av[i * n + j];
  const auto ia = a.id();
  return a.tape().push(std::move(out), Op::Column, {ia}, [ia, j, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < m; ++i) ga[i * n + j] += g[i];
  });
}

Var prepend_ones(Var a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::matrix(m, n + 1);
  for (std::size_t i = 0; i < m; ++i) {
    out(i, 0) = 1.0;
    for (std::size_t j = 0; j < n; ++j) out(i, j + 1) = av[i * n + j];
  }
  const auto ia = a.id();
  return a.tape().push(std::move(out), Op::PrependOnes, {ia}, [ia, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * (n + 1) + j + 1];
  });
}

ValueAndGrad value_and_grad(const TapeFunction& f, std::span<const double> theta) {
  Tape tape;
  Var th = tape.variable(Tensor::vector(std::vector<double>(theta.begin(), theta.end())));
  Var out = f(tape, th);
  if (out.value().size() != 1) throw ValidationError("value_and_grad needs a scalar function");
  tape.check_finite();
  tape.backward(out);
  ValueAndGrad r;
  r.value = out.value().item();
  const Tensor g = tape.grad(th);
  r.grad = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  if (!r.grad.allFinite()) throw NumericError("non-finite gradient");
  return r;
}

}  // namespace bpode
