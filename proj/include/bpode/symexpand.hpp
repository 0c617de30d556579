#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bpode/polynet.hpp"

namespace bpode {

/// Exponent multi-index (e_1, ..., e_d).
using Monomial = std::vector<int>;

int total_degree(const Monomial& m);
/// "1", "x0", "x0^2*x1", ...
std::string monomial_name(const Monomial& m);
/// Inverse of monomial_name for d variables.
Monomial parse_monomial(const std::string& name, std::size_t n_vars);
/// All monomials of total degree <= degree, graded then reverse-lexicographic
/// (1, x0, x1, x0^2, x0*x1, x1^2, ...).
std::vector<Monomial> monomial_basis(std::size_t n_vars, std::size_t degree);
double eval_monomial(const Monomial& m, std::span<const double> x);

// Sparse polynomial in d variables. Exact zeros are never stored.
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::size_t n_vars) : n_vars_(n_vars) {}
  static Polynomial constant(std::size_t n_vars, double c);
  static Polynomial variable(std::size_t n_vars, std::size_t j);

  std::size_t n_vars() const { return n_vars_; }
  const std::map<Monomial, double>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }
  double coeff(const Monomial& m) const;
  void add_term(const Monomial& m, double c);
  int degree() const;

  Polynomial& operator+=(const Polynomial& o);
  Polynomial operator*(const Polynomial& o) const;
  Polynomial scaled(double c) const;
  double operator()(std::span<const double> x) const;

 private:
  std::size_t n_vars_ = 0;
  std::map<Monomial, double> terms_;
};

/// One polynomial per network output.
using PolynomialForm = std::vector<Polynomial>;

double eval_form(const Polynomial& p, std::span<const double> x);

/// Symbolic expansion of the network into monomials.
PolynomialForm expand(std::span<const double> theta, const PolyNetArch& arch);
inline PolynomialForm expand(const ParamVector& theta) { return expand(theta.values(), theta.arch()); }

}  // namespace bpode

namespace bpode {

/// Evaluates each polynomial of the form on an N x d batch on a tape; N x form.size().
Var evaluate(const PolynomialForm& form, Var states);

}  // namespace bpode
