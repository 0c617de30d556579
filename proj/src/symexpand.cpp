#include "bpode/symexpand.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "bpode/errors.hpp"

namespace bpode {

int total_degree(const Monomial& m) { return std::accumulate(m.begin(), m.end(), 0); }

std::string monomial_name(const Monomial& m) {
  std::ostringstream out;
  bool first = true;
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (m[j] == 0) continue;
    if (!first) out << '*';
    out << 'x' << j;
    if (m[j] > 1) out << '^' << m[j];
    first = false;
  }
  return first ? "1" : out.str();
}

Monomial parse_monomial(const std::string& name, std::size_t n_vars) {
  Monomial m(n_vars, 0);
  if (name == "1") return m;
  std::istringstream in(name);
  std::string factor;
  while (std::getline(in, factor, '*')) {
    if (factor.size() < 2 || factor[0] != 'x') throw ValidationError("bad monomial: " + name);
    const auto caret = factor.find('^');
    const std::size_t j = std::stoul(factor.substr(1, caret == std::string::npos ? std::string::npos : caret - 1));
    const int e = caret == std::string::npos ? 1 : std::stoi(factor.substr(caret + 1));
    if (j >= n_vars || e < 1) throw ValidationError("bad monomial: " + name);
    m[j] += e;
  }
  return m;
}

namespace {

void enumerate_degree(std::size_t n_vars, int remaining, std::size_t pos, Monomial& cur, std::vector<Monomial>& out) {
  if (pos + 1 == n_vars) {
    cur[pos] = remaining;
    out.push_back(cur);
    return;
  }
  for (int e = remaining; e >= 0; --e) {
    cur[pos] = e;
    enumerate_degree(n_vars, remaining - e, pos + 1, cur, out);
  }
  cur[pos] = 0;
}

}  // namespace

std::vector<Monomial> monomial_basis(std::size_t n_vars, std::size_t degree) {
  std::vector<Monomial> out;
  for (int deg = 0; deg <= static_cast<int>(degree); ++deg) {
    Monomial cur(n_vars, 0);
    enumerate_degree(n_vars, deg, 0, cur, out);
  }
  return out;
}

double eval_monomial(const Monomial& m, std::span<const double> x) {
  double v = 1.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    for (int e = 0; e < m[j]; ++e) v *= x[j];
  }
  return v;
}

Polynomial Polynomial::constant(std::size_t n_vars, double c) {
  Polynomial p(n_vars);
  p.add_term(Monomial(n_vars, 0), c);
  return p;
}

Polynomial Polynomial::variable(std::size_t n_vars, std::size_t j) {
  Polynomial p(n_vars);
  Monomial m(n_vars, 0);
  m[j] = 1;
  p.add_term(m, 1.0);
  return p;
}

double Polynomial::coeff(const Monomial& m) const {
  const auto it = terms_.find(m);
  return it == terms_.end() ? 0.0 : it->second;
}

void Polynomial::add_term(const Monomial& m, double c) {
  if (c == 0.0) return;
  auto [it, inserted] = terms_.try_emplace(m, c);
  if (!inserted) {
    it->second += c;
    if (it->second == 0.0) terms_.erase(it);
  }
}

int Polynomial::degree() const {
  int d = 0;
  for (const auto& [m, c] : terms_) d = std::max(d, total_degree(m));
  return d;
}

Polynomial& Polynomial::operator+=(const Polynomial& o) {
  for (const auto& [m, c] : o.terms_) add_term(m, c);
  return *this;
}

Polynomial Polynomial::operator*(const Polynomial& o) const {
  Polynomial out(n_vars_);
  for (const auto& [ma, ca] : terms_) {
    for (const auto& [mb, cb] : o.terms_) {
      Monomial m(ma);
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += mb[j];
      out.add_term(m, ca * cb);
    }
  }
  return out;
}

Polynomial Polynomial::scaled(double c) const {
  Polynomial out(n_vars_);
  for (const auto& [m, v] : terms_) out.add_term(m, c * v);
  return out;
}

double Polynomial::operator()(std::span<const double> x) const {
  double s = 0.0;
  for (const auto& [m, c] : terms_) s += c * eval_monomial(m, x);
  return s;
}

double eval_form(const Polynomial& p, std::span<const double> x) { return p(x); }

namespace {

// Linear polynomials sum_j M(i, j) * base[j] for each row i.
std::vector<Polynomial> apply(const RowMatrix& M, const std::vector<Polynomial>& base, std::size_t n_vars) {
  std::vector<Polynomial> out(static_cast<std::size_t>(M.rows()), Polynomial(n_vars));
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (M(i, j) == 0.0) continue;
      out[static_cast<std::size_t>(i)] += base[static_cast<std::size_t>(j)].scaled(M(i, j));
    }
  }
  return out;
}

}  // namespace

PolynomialForm expand(std::span<const double> theta, const PolyNetArch& arch) {
  const ParamLayout layout = param_layout(arch);
  if (theta.size() != layout.total) throw ValidationError("expand: parameter vector has wrong length");
  const std::size_t d = arch.n_inputs;
  auto block = [&](const LayerBlock& b) {
    return RowMatrix(Eigen::Map<const RowMatrix>(theta.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                                                 static_cast<Eigen::Index>(b.cols)));
  };
  std::vector<Polynomial> xt;
  xt.push_back(Polynomial::constant(d, 1.0));
  for (std::size_t j = 0; j < d; ++j) xt.push_back(Polynomial::variable(d, j));

  std::vector<Polynomial> h = apply(block(layout.first), xt, d);
  for (std::size_t l = 0; l + 1 < arch.degree; ++l) {
    const auto u = apply(block(layout.input[l]), xt, d);
    const auto v = apply(block(layout.hidden[l]), h, d);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = u[i] * v[i];
  }
  return apply(block(layout.output), h, d);
}

}  // namespace bpode

namespace bpode {

Var evaluate(const PolynomialForm& form, Var states) {
  if (form.empty()) throw ValidationError("evaluate: empty form");
  const std::size_t d = states.cols();
  const std::size_t n = states.rows();
  Tape& tape = states.tape();
  std::vector<Var> cols;
  for (std::size_t j = 0; j < d; ++j) cols.push_back(column(states, j));
  Var ones = tape.constant(Tensor::matrix(n, 1, 1.0));
  Var out;
  for (const auto& poly : form) {
    if (poly.n_vars() != d && !poly.empty()) throw ValidationError("evaluate: form/state dimension mismatch");
    std::vector<Var> terms;
    std::vector<double> coeffs;
    for (const auto& [m, c] : poly.terms()) {
      Var term = ones;
      bool first = true;
      for (std::size_t j = 0; j < d; ++j) {
        for (int e = 0; e < m[j]; ++e) {
          term = first ? cols[j] : mul(term, cols[j]);
          first = false;
        }
      }
      terms.push_back(term);
      coeffs.push_back(c);
    }
    Var value = terms.empty() ? tape.constant(Tensor::matrix(n, 1)) : lincomb(terms, coeffs);
    out = out.valid() ? concat_cols(out, value) : value;
  }
  return out;
}

}  // namespace bpode
