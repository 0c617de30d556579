#include "bpode/gpr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>

#include "bpode/errors.hpp"

namespace bpode {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* leaf_name(KernelSpec::Kind kind) {
  switch (kind) {
    case KernelSpec::Kind::Constant: return "constant";
    case KernelSpec::Kind::Periodic: return "periodic";
    case KernelSpec::Kind::RationalQuadratic: return "rq";
    case KernelSpec::Kind::Rbf: return "rbf";
    case KernelSpec::Kind::Matern: return "matern";
    case KernelSpec::Kind::White: return "white";
    default: return "?";
  }
}

}  // namespace

KernelSpec KernelSpec::make(Kind kind, std::vector<double> params, double nu) {
  KernelSpec k;
  k.kind_ = kind;
  k.params_ = std::move(params);
  k.nu_ = nu;
  k.validate();
  return k;
}

KernelSpec KernelSpec::constant(double c2) { return make(Kind::Constant, {c2}); }
KernelSpec KernelSpec::periodic(double length, double period) { return make(Kind::Periodic, {length, period}); }
KernelSpec KernelSpec::rational_quadratic(double length, double alpha) {
  return make(Kind::RationalQuadratic, {length, alpha});
}
KernelSpec KernelSpec::rbf(double length) { return make(Kind::Rbf, {length}); }
KernelSpec KernelSpec::matern(double length, double nu) {
  if (nu != 0.5 && nu != 1.5 && nu != 2.5) throw ValidationError("matern nu must be 0.5, 1.5 or 2.5");
  return make(Kind::Matern, {length}, nu);
}
KernelSpec KernelSpec::white(double noise) { return make(Kind::White, {noise}); }

KernelSpec KernelSpec::sum(KernelSpec a, KernelSpec b) {
  KernelSpec k;
  k.kind_ = Kind::Sum;
  k.children_ = {std::move(a), std::move(b)};
  return k;
}

KernelSpec KernelSpec::product(KernelSpec a, KernelSpec b) {
  KernelSpec k;
  k.kind_ = Kind::Product;
  k.children_ = {std::move(a), std::move(b)};
  return k;
}

void KernelSpec::validate() const {
  for (double p : params_) {
    if (!std::isfinite(p) || p <= 0.0)
      throw ValidationError(std::string("kernel ") + leaf_name(kind_) + " needs positive hyperparameters, got " +
                            fmt(p));
  }
  for (const auto& c : children_) c.validate();
}

std::size_t KernelSpec::n_hyperparameters() const {
  std::size_t n = params_.size();
  for (const auto& c : children_) n += c.n_hyperparameters();
  return n;
}

void KernelSpec::collect(std::vector<double>& out) const {
  out.insert(out.end(), params_.begin(), params_.end());
  for (const auto& c : children_) c.collect(out);
}

std::vector<double> KernelSpec::hyperparameters() const {
  std::vector<double> out;
  collect(out);
  return out;
}

std::vector<KernelSpec::Role> KernelSpec::roles() const {
  std::vector<Role> out;
  switch (kind_) {
    case Kind::Constant: out = {Role::Amplitude}; break;
    case Kind::Periodic: out = {Role::Shape, Role::Length}; break;  // sin^2 / l^2: l is dimensionless
    case Kind::RationalQuadratic: out = {Role::Length, Role::Shape}; break;
    case Kind::Rbf:
    case Kind::Matern: out = {Role::Length}; break;
    case Kind::White: out = {Role::Noise}; break;
    default: break;
  }
  for (const auto& c : children_) {
    auto r = c.roles();
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

std::vector<std::string> KernelSpec::hyperparameter_names() const {
  std::vector<std::string> out;
  std::size_t counter = 0;
  std::function<void(const KernelSpec&)> walk = [&](const KernelSpec& k) {
    static const std::map<Kind, std::vector<std::string>> names = {
        {Kind::Constant, {"c2"}},         {Kind::Periodic, {"length", "period"}},
        {Kind::RationalQuadratic, {"length", "alpha"}}, {Kind::Rbf, {"length"}},
        {Kind::Matern, {"length"}},       {Kind::White, {"noise"}}};
    auto it = names.find(k.kind_);
    if (it != names.end()) {
      const std::string prefix = std::string(leaf_name(k.kind_)) + std::to_string(counter++) + ".";
      for (const auto& n : it->second) out.push_back(prefix + n);
    }
    for (const auto& c : k.children_) walk(c);
  };
  walk(*this);
  return out;
}

std::size_t KernelSpec::assign(std::span<const double> values, std::size_t at) {
  for (auto& p : params_) p = values[at++];
  for (auto& c : children_) at = c.assign(values, at);
  return at;
}

KernelSpec KernelSpec::with_hyperparameters(std::span<const double> values) const {
  if (values.size() != n_hyperparameters()) throw ValidationError("wrong number of kernel hyperparameters");
  KernelSpec k = *this;
  k.assign(values, 0);
  k.validate();
  return k;
}

std::string KernelSpec::to_string() const {
  switch (kind_) {
    case Kind::Sum: return children_[0].to_string() + "+" + children_[1].to_string();
    case Kind::Product: {
      auto wrap = [](const KernelSpec& c) {
        return c.kind_ == Kind::Sum ? "(" + c.to_string() + ")" : c.to_string();
      };
      return wrap(children_[0]) + "*" + wrap(children_[1]);
    }
    default: {
      std::string s = std::string(leaf_name(kind_)) + "(";
      for (std::size_t i = 0; i < params_.size(); ++i) s += (i ? "," : "") + fmt(params_[i]);
      if (kind_ == Kind::Matern) s += "," + fmt(nu_);
      return s + ")";
    }
  }
}

namespace {

struct KernelParser {
  const std::string& text;
  std::size_t pos = 0;

  void skip() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("kernel spec '" + text + "': " + what + " at offset " + std::to_string(pos));
  }
  bool eat(char c) {
    skip();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  KernelSpec expr() {
    KernelSpec k = term();
    while (eat('+')) k = KernelSpec::sum(std::move(k), term());
    return k;
  }
  KernelSpec term() {
    KernelSpec k = factor();
    while (eat('*')) k = KernelSpec::product(std::move(k), factor());
    return k;
  }
  KernelSpec factor() {
    if (eat('(')) {
      KernelSpec k = expr();
      if (!eat(')')) fail("expected ')'");
      return k;
    }
    skip();
    std::size_t start = pos;
    while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_')) ++pos;
    const std::string name = text.substr(start, pos - start);
    if (name.empty()) fail("expected kernel name");
    if (!eat('(')) fail("expected '('");
    std::vector<double> args;
    if (!eat(')')) {
      do {
        skip();
        const char* begin = text.c_str() + pos;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) fail("expected number");
        pos += static_cast<std::size_t>(end - begin);
        args.push_back(v);
      } while (eat(','));
      if (!eat(')')) fail("expected ')'");
    }
    auto need = [&](std::size_t n) {
      if (args.size() != n) fail(name + " takes " + std::to_string(n) + " arguments");
    };
    if (name == "constant") { need(1); return KernelSpec::constant(args[0]); }
    if (name == "periodic") { need(2); return KernelSpec::periodic(args[0], args[1]); }
    if (name == "rq" || name == "rational_quadratic") { need(2); return KernelSpec::rational_quadratic(args[0], args[1]); }
    if (name == "rbf") { need(1); return KernelSpec::rbf(args[0]); }
    if (name == "matern") { need(2); return KernelSpec::matern(args[0], args[1]); }
    if (name == "white") { need(1); return KernelSpec::white(args[0]); }
    fail("unknown kernel '" + name + "'");
  }
};

}  // namespace

KernelSpec KernelSpec::parse(const std::string& text) {
  KernelParser p{text};
  KernelSpec k = p.expr();
  p.skip();
  if (p.pos != text.size()) p.fail("trailing characters");
  return k;
}

// -- evaluation --------------------------------------------------------------

namespace {

double eval_node(const KernelSpec& k, double a, double b, bool same, double* grad) {
  using Kind = KernelSpec::Kind;
  const auto& h = k.params();
  const double d = std::abs(a - b);
  switch (k.kind()) {
    case Kind::Constant:
      if (grad) grad[0] = h[0];
      return h[0];
    case Kind::White: {
      const double v = same ? h[0] : 0.0;
      if (grad) grad[0] = v;
      return v;
    }
    case Kind::Rbf: {
      const double r2 = d * d / (h[0] * h[0]);
      const double v = std::exp(-0.5 * r2);
      if (grad) grad[0] = v * r2;
      return v;
    }
    case Kind::Periodic: {
      const double l = h[0], p = h[1];
      const double arg = std::numbers::pi * d / p;
      const double s = std::sin(arg), c = std::cos(arg);
      const double v = std::exp(-2.0 * s * s / (l * l));
      if (grad) {
        grad[0] = v * 4.0 * s * s / (l * l);
        grad[1] = v * 4.0 * s * c * arg / (l * l);
      }
      return v;
    }
    case Kind::RationalQuadratic: {
      const double l = h[0], alpha = h[1];
      const double z = d * d / (2.0 * alpha * l * l);
      const double base = 1.0 + z;
      const double v = std::pow(base, -alpha);
      if (grad) {
        grad[0] = v * 2.0 * alpha * z / base;
        grad[1] = alpha * v * (-std::log1p(z) + z / base);
      }
      return v;
    }
    case Kind::Matern: {
      const double r = d / h[0];
      double v = 0.0, dv = 0.0;  // dv = dk/dlog(l)
      if (k.nu() == 0.5) {
        v = std::exp(-r);
        dv = v * r;
      } else if (k.nu() == 1.5) {
        const double s = std::sqrt(3.0) * r, e = std::exp(-s);
        v = (1.0 + s) * e;
        dv = s * s * e;
      } else {
        const double s = std::sqrt(5.0) * r, e = std::exp(-s);
        v = (1.0 + s + s * s / 3.0) * e;
        dv = s * s * (1.0 + s) * e / 3.0;
      }
      if (grad) grad[0] = dv;
      return v;
    }
    case Kind::Sum: {
      const auto& ch = k.children();
      const std::size_t n0 = ch[0].n_hyperparameters();
      return eval_node(ch[0], a, b, same, grad) + eval_node(ch[1], a, b, same, grad ? grad + n0 : nullptr);
    }
    case Kind::Product: {
      const auto& ch = k.children();
      const std::size_t n0 = ch[0].n_hyperparameters(), n1 = ch[1].n_hyperparameters();
      const double v0 = eval_node(ch[0], a, b, same, grad);
      const double v1 = eval_node(ch[1], a, b, same, grad ? grad + n0 : nullptr);
      if (grad) {
        for (std::size_t i = 0; i < n0; ++i) grad[i] *= v1;
        for (std::size_t i = 0; i < n1; ++i) grad[n0 + i] *= v0;
      }
      return v0 * v1;
    }
  }
  return 0.0;
}

}  // namespace

double kernel_eval(const KernelSpec& spec, double a, double b, bool same_index) {
  return eval_node(spec, a, b, same_index, nullptr);
}

double kernel_eval_grad(const KernelSpec& spec, double a, double b, bool same_index, std::span<double> grad) {
  if (grad.size() != spec.n_hyperparameters()) throw ValidationError("gradient buffer has wrong size");
  return eval_node(spec, a, b, same_index, grad.data());
}

Eigen::MatrixXd gram(const KernelSpec& spec, std::span<const double> xs) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel_eval(spec, xs[i], xs[j], i == j);
  return K;
}

Eigen::MatrixXd cross_gram(const KernelSpec& spec, std::span<const double> a, std::span<const double> b) {
  Eigen::MatrixXd K(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kernel_eval(spec, a[i], b[j], false);
  return K;
}

GroupedData group_inputs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("gpr: inputs and targets differ in length");
  if (x.size() < 2) throw ValidationError("gpr: need at least 2 training points");
  std::map<double, std::vector<double>> groups;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("gpr: non-finite training data");
    groups[x[i]].push_back(y[i]);
  }
  GroupedData g;
  g.n_total = x.size();
  for (const auto& [xi, ys] : groups) {
    double m = 0.0;
    for (double v : ys) m += v;
    m /= static_cast<double>(ys.size());
    double ss = 0.0;
    for (double v : ys) ss += (v - m) * (v - m);
    g.x.push_back(xi);
    g.mean.push_back(m);
    g.count.push_back(static_cast<double>(ys.size()));
    g.within.push_back(ss);
  }
  return g;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// A = K_smooth + diag(nugget / count) over the groups, with d(A)/dlog(h) slices.
struct GroupedSystem {
  Eigen::MatrixXd A;
  std::vector<Eigen::MatrixXd> dA;
  Eigen::VectorXd nugget;
  std::vector<Eigen::VectorXd> dnugget;
};

GroupedSystem assemble(const KernelSpec& spec, const GroupedData& data, bool with_grad) {
  const auto G = static_cast<Eigen::Index>(data.x.size());
  const std::size_t H = spec.n_hyperparameters();
  GroupedSystem s;
  s.A.resize(G, G);
  s.nugget.resize(G);
  if (with_grad) {
    s.dA.assign(H, Eigen::MatrixXd(G, G));
    s.dnugget.assign(H, Eigen::VectorXd(G));
  }
  std::vector<double> g(H), g_same(H);
  for (Eigen::Index i = 0; i < G; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = eval_node(spec, data.x[i], data.x[j], false, with_grad ? g.data() : nullptr);
      s.A(i, j) = s.A(j, i) = v;
      if (with_grad)
        for (std::size_t h = 0; h < H; ++h) s.dA[h](i, j) = s.dA[h](j, i) = g[h];
    }
    const double same = eval_node(spec, data.x[i], data.x[i], true, with_grad ? g_same.data() : nullptr);
    const double smooth = s.A(i, i);
    s.nugget[i] = same - smooth;
    s.A(i, i) += s.nugget[i] / data.count[i];
    if (with_grad) {
      for (std::size_t h = 0; h < H; ++h) {
        s.dnugget[h][i] = g_same[h] - s.dA[h](i, i);
        s.dA[h](i, i) += s.dnugget[h][i] / data.count[i];
      }
    }
  }
  return s;
}

// Cholesky with jitter escalation, relative to the mean diagonal.
Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& A, double& jitter_used) {
  const double scale = std::max(A.diagonal().mean(), std::numeric_limits<double>::min());
  for (double rel : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
    Eigen::MatrixXd M = A;
    M.diagonal().array() += rel * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
      jitter_used = rel * scale;
      return llt;
    }
  }
  throw NumericError("gpr: Gram matrix not positive definite after jitter escalation to 1e-4");
}

}  // namespace

LmlResult log_marginal_likelihood(const KernelSpec& spec, const GroupedData& data, bool with_grad) {
  const GroupedSystem sys = assemble(spec, data, with_grad);
  const auto G = static_cast<Eigen::Index>(data.x.size());
  LmlResult out;
  auto llt = factor(sys.A, out.jitter);
  const Eigen::Map<const Eigen::VectorXd> ybar(data.mean.data(), G);
  const Eigen::VectorXd alpha = llt.solve(ybar);
  const Eigen::MatrixXd L = llt.matrixL();
  double value = -0.5 * ybar.dot(alpha) - L.diagonal().array().log().sum() - 0.5 * static_cast<double>(G) * kLog2Pi;

  // Within-group terms of the replicated observations.
  for (Eigen::Index i = 0; i < G; ++i) {
    const double r = data.count[i];
    if (r <= 1.0) continue;
    const double n = sys.nugget[i];
    if (n <= 0.0) throw ValidationError("gpr: replicated inputs need a white-noise kernel term");
    value += -0.5 * (r - 1.0) * (kLog2Pi + std::log(n)) - 0.5 * std::log(r) - 0.5 * data.within[i] / n;
  }
  out.value = value;
  if (!with_grad) return out;

  const std::size_t H = spec.n_hyperparameters();
  const Eigen::MatrixXd W = alpha * alpha.transpose() - llt.solve(Eigen::MatrixXd::Identity(G, G));
  out.grad.resize(static_cast<Eigen::Index>(H));
  for (std::size_t h = 0; h < H; ++h) {
    double gh = 0.5 * W.cwiseProduct(sys.dA[h]).sum();
    for (Eigen::Index i = 0; i < G; ++i) {
      const double r = data.count[i];
      if (r <= 1.0) continue;
      const double n = sys.nugget[i];
      gh += sys.dnugget[h][i] * (-0.5 * (r - 1.0) / n + 0.5 * data.within[i] / (n * n));
    }
    out.grad[static_cast<Eigen::Index>(h)] = gh;
  }
  return out;
}

double log_marginal_likelihood_dense(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
  const Eigen::MatrixXd K = gram(spec, x);
  double jitter = 0.0;
  auto llt = factor(K, jitter);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::MatrixXd L = llt.matrixL();
  return -0.5 * yv.dot(llt.solve(yv)) - L.diagonal().array().log().sum() -
         0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

// -- model -------------------------------------------------------------------

GprModel::GprModel(KernelSpec spec, GroupedData data) : spec_(std::move(spec)), data_(std::move(data)) {
  spec_.validate();
  const GroupedSystem sys = assemble(spec_, data_, false);
  chol_ = factor(sys.A, jitter_);
  const Eigen::Map<const Eigen::VectorXd> ybar(data_.mean.data(), static_cast<Eigen::Index>(data_.mean.size()));
  weights_ = chol_.solve(ybar);
  lml_ = bpode::log_marginal_likelihood(spec_, data_, false).value;
}

void GprModel::predict(std::span<const double> xq, std::vector<double>& mean, std::vector<double>& variance) const {
  const Eigen::MatrixXd Ks = cross_gram(spec_, data_.x, xq);  // G x Q
  const Eigen::VectorXd m = Ks.transpose() * weights_;
  const Eigen::MatrixXd V = chol_.matrixL().solve(Ks);
  mean.assign(m.data(), m.data() + m.size());
  variance.resize(xq.size());
  for (std::size_t q = 0; q < xq.size(); ++q) {
    const double prior = kernel_eval(spec_, xq[q], xq[q], false);
    variance[q] = std::max(0.0, prior - V.col(static_cast<Eigen::Index>(q)).squaredNorm());
  }
}

// -- fitting -----------------------------------------------------------------

namespace {

// log h = lo + (hi - lo) * sigmoid(u) keeps hyperparameters inside the box.
struct BoxTransform {
  double lo, hi;
  double to_log(double u) const { return lo + (hi - lo) / (1.0 + std::exp(-u)); }
  double dlog_du(double u) const {
    const double s = 1.0 / (1.0 + std::exp(-u));
    return (hi - lo) * s * (1.0 - s);
  }
  double from_log(double logh) const {
    const double t = std::clamp((logh - lo) / (hi - lo), 1e-12, 1.0 - 1e-12);
    return std::log(t / (1.0 - t));
  }
};

struct Objective {
  const KernelSpec& spec;
  const GroupedData& data;
  BoxTransform box;

  // Negative LML and its gradient in u; +inf when the Gram matrix fails.
  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
    std::vector<double> h(static_cast<std::size_t>(u.size()));
    for (Eigen::Index i = 0; i < u.size(); ++i) h[static_cast<std::size_t>(i)] = std::exp(box.to_log(u[i]));
    try {
      auto r = log_marginal_likelihood(spec.with_hyperparameters(h), data, grad != nullptr);
      if (!std::isfinite(r.value)) return std::numeric_limits<double>::infinity();
      if (grad) {
        grad->resize(u.size());
        for (Eigen::Index i = 0; i < u.size(); ++i) (*grad)[i] = -r.grad[i] * box.dlog_du(u[i]);
        if (!grad->allFinite()) return std::numeric_limits<double>::infinity();
      }
      return -r.value;
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  }
};

Eigen::VectorXd bfgs(const Objective& f, Eigen::VectorXd u, const GprFitOptions& opts) {
  const Eigen::Index n = u.size();
  Eigen::VectorXd g;
  double fu = f(u, &g);
  if (!std::isfinite(fu)) return u;
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() < opts.gtol) break;
    Eigen::VectorXd dir = -Hinv * g;
    if (dir.dot(g) >= 0.0) {
      Hinv.setIdentity();
      dir = -g;
    }
    // Cap the first trial step so a bad curvature estimate cannot jump across the box.
    double step = std::min(1.0, 5.0 / std::max(dir.cwiseAbs().maxCoeff(), 1e-300));
    Eigen::VectorXd u_new, g_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      u_new = u + step * dir;
      f_new = f(u_new, &g_new);
      if (std::isfinite(f_new) && f_new <= fu + 1e-4 * step * dir.dot(g)) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
    const Eigen::VectorXd s = u_new - u, y = g_new - g;
    const double sy = s.dot(y);
    const double improvement = fu - f_new;
    u = u_new;
    g = g_new;
    fu = f_new;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    if (improvement <= 1e-13 * std::max(1.0, std::abs(fu))) break;
  }
  return u;
}

}  // namespace

GprModel gpr_fit(std::span<const double> x, std::span<const double> y, const KernelSpec& spec, RngStream& rng,
                 const GprFitOptions& opts) {
  spec.validate();
  if (!(opts.lower_bound > 0.0) || !(opts.upper_bound > opts.lower_bound))
    throw ValidationError("gpr: invalid hyperparameter bounds");
  GroupedData data = group_inputs(x, y);
  const std::size_t H = spec.n_hyperparameters();
  const BoxTransform box{std::log(opts.lower_bound), std::log(opts.upper_bound)};
  const Objective objective{spec, data, box};

  // Data scales for the restart draws.
  double ym = 0.0, yv = 0.0;
  for (double v : y) ym += v;
  ym /= static_cast<double>(y.size());
  for (double v : y) yv += (v - ym) * (v - ym);
  yv /= static_cast<double>(y.size());
  if (yv <= 0.0) yv = 1.0;
  const double span = std::max(data.x.back() - data.x.front(), 1e-12);
  const auto roles = spec.roles();

  auto to_u = [&](const std::vector<double>& h) {
    Eigen::VectorXd u(static_cast<Eigen::Index>(H));
    for (std::size_t i = 0; i < H; ++i) u[static_cast<Eigen::Index>(i)] = box.from_log(std::log(h[i]));
    return u;
  };
  auto to_h = [&](const Eigen::VectorXd& u) {
    std::vector<double> h(H);
    for (std::size_t i = 0; i < H; ++i) h[i] = std::exp(box.to_log(u[static_cast<Eigen::Index>(i)]));
    return h;
  };

  std::vector<Eigen::VectorXd> starts{to_u(spec.hyperparameters())};
  for (std::size_t r = 0; r < opts.n_restarts; ++r) {
    std::vector<double> h(H);
    for (std::size_t i = 0; i < H; ++i) {
      double scale = 1.0;
      switch (roles[i]) {
        case KernelSpec::Role::Amplitude:
        case KernelSpec::Role::Noise: scale = yv; break;
        case KernelSpec::Role::Length: scale = span; break;
        case KernelSpec::Role::Shape: scale = 1.0; break;
      }
      h[i] = scale * std::exp(rng.uniform(std::log(1e-2), std::log(1e2)));
    }
    starts.push_back(to_u(h));
  }

  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_u;
  for (const auto& u0 : starts) {
    Eigen::VectorXd u = bfgs(objective, u0, opts);
    const double fu = objective(u, nullptr);
    if (fu < best) {
      best = fu;
      best_u = u;
    }
  }
  if (!std::isfinite(best)) throw NumericError("gpr: no restart produced a finite marginal likelihood");
  return GprModel(spec.with_hyperparameters(to_h(best_u)), std::move(data));
}

SmoothedSeries smooth_series(std::span<const double> times, std::span<const RowMatrix> replicates,
                             const KernelSpec& spec, RngStream& rng, const GprFitOptions& opts) {
  if (replicates.empty()) throw ValidationError("smooth_series: no replicates");
  const auto n = static_cast<Eigen::Index>(times.size());
  const Eigen::Index d = replicates[0].cols();
  for (const auto& r : replicates)
    if (r.rows() != n || r.cols() != d) throw ValidationError("smooth_series: replicate shape mismatch");
  SmoothedSeries out;
  out.mean.resize(n, d);
  out.variance.resize(n, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<double> xs, ys;
    for (const auto& r : replicates)
      for (Eigen::Index i = 0; i < n; ++i) {
        xs.push_back(times[static_cast<std::size_t>(i)]);
        ys.push_back(r(i, j));
      }
    RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
    out.models.push_back(gpr_fit(xs, ys, spec, sub, opts));
    std::vector<double> m, v;
    out.models.back().predict(times, m, v);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.mean(i, j) = m[static_cast<std::size_t>(i)];
      out.variance(i, j) = v[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

}  // namespace bpode
