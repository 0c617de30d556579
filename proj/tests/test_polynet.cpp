#include <cmath>

#include "doctest.h"

#include "bpode/polynet.hpp"
#include "bpode/symexpand.hpp"

using namespace bpode;

namespace {

std::vector<double> random_theta(const PolyNetArch& arch, RngStream& rng, double scale = 1.0) {
  std::vector<double> th(count_params(arch));
  for (auto& v : th) v = rng.uniform(-scale, scale);
  return th;
}

}  // namespace

TEST_CASE("parameter counts follow the closed form") {
  CHECK(count_params({1, 1, 1, 1}) == 3);
  CHECK(count_params({2, 2, 10, 2}) == 180);
  CHECK(count_params({1, 3, 10, 1}) == 270);
  // Lotka-Volterra network sized towards 160 parameters.
  PolyNetArch lv{2, 2, 1, 2};
  const std::size_t w = width_for_param_count(lv, 160);
  CHECK(w == 9);
  lv.width = w;
  CHECK(count_params(lv) == 153);
  CHECK_THROWS_AS(count_params({1, 0, 1, 1}), ValidationError);
  CHECK_THROWS_AS(count_params({1, 1, 0, 1}), ValidationError);
}

TEST_CASE("init_params hits the expanded coefficient range") {
  PolyNetArch cubic{1, 3, 10, 1};
  RngStream rng(989);
  const ParamVector th = init_params(cubic, rng);
  const auto form = expand(th);
  for (const auto& m : monomial_basis(1, 3)) {
    const double c = std::abs(form[0].coeff(m));
    CHECK(c >= 1e-10);
    CHECK(c <= 1e-5);
  }
  RngStream again(989);
  const ParamVector th2 = init_params(cubic, again);
  CHECK(std::equal(th.values().begin(), th.values().end(), th2.values().begin()));

  PolyNetArch two{2, 2, 8, 2};
  RngStream r2(3);
  const ParamVector small = init_params(two, r2);
  RngStream pts(4);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> x{pts.uniform(-5, 5), pts.uniform(-5, 5)};
    for (double v : forward(small, x)) worst = std::max(worst, std::abs(v));
  }
  for (double a : {-5.0, 5.0})
    for (double b : {-5.0, 5.0})
      for (double v : forward(small, std::vector<double>{a, b})) worst = std::max(worst, std::abs(v));
  CHECK(worst <= 1e-3);
}

TEST_CASE("forward of the zero network is zero and expands to nothing") {
  PolyNetArch arch{2, 3, 4, 2};
  ParamVector zero(arch);
  const auto out = forward(zero, std::vector<double>{1.3, -0.7});
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  for (const auto& p : expand(zero)) CHECK(p.empty());
  CHECK_THROWS_AS(forward(zero, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("expansion agrees with forward at random points and respects the degree bound") {
  RngStream rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    PolyNetArch arch{1 + rng.index(3), 1 + rng.index(3), 1 + rng.index(5), 1 + rng.index(3)};
    const auto th = random_theta(arch, rng);
    const auto form = expand(th, arch);
    for (const auto& p : form) CHECK(p.degree() <= static_cast<int>(arch.degree));
    for (int k = 0; k < 100; ++k) {
      std::vector<double> x(arch.n_inputs);
      for (auto& v : x) v = rng.uniform(-2.0, 2.0);
      const auto y = forward(th, arch, x);
      for (std::size_t o = 0; o < y.size(); ++o) CHECK(std::abs(y[o] - form[o](x)) <= 1e-10);
    }
  }
}

TEST_CASE("hand-built network (2x)(3x) expands to 6x^2") {
  PolyNetArch arch{1, 2, 1, 1};
  const auto layout = param_layout(arch);
  std::vector<double> th(layout.total, 0.0);
  th[layout.first.offset + 1] = 2.0;     // h1 = 2x
  th[layout.input[0].offset + 1] = 3.0;  // u = 3x
  th[layout.hidden[0].offset] = 1.0;     // v = h1
  th[layout.output.offset] = 1.0;
  const auto form = expand(th, arch);
  CHECK(form[0].terms().size() == 1);
  CHECK(form[0].coeff({2}) == doctest::Approx(6.0));
}

TEST_CASE("expansion matches a Vandermonde interpolation of forward") {
  RngStream rng(5);
  PolyNetArch arch{2, 3, 4, 1};
  const auto th = random_theta(arch, rng);
  const auto basis = monomial_basis(2, 3);
  const auto n = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd V(n, n);
  Eigen::VectorXd f(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (Eigen::Index j = 0; j < n; ++j) V(i, j) = eval_monomial(basis[static_cast<std::size_t>(j)], x);
    f[i] = forward(th, arch, x)[0];
  }
  const Eigen::VectorXd c = V.fullPivLu().solve(f);
  const auto form = expand(th, arch);
  for (Eigen::Index j = 0; j < n; ++j) CHECK(std::abs(c[j] - form[0].coeff(basis[static_cast<std::size_t>(j)])) <= 1e-8);

  SUBCASE("univariate cubic: four evaluations determine the network") {
    PolyNetArch a1{1, 3, 3, 1};
    const auto t1 = random_theta(a1, rng);
    Eigen::Matrix4d V4;
    Eigen::Vector4d y4;
    const double xs[4] = {-1.0, -0.3, 0.4, 1.1};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) V4(i, j) = std::pow(xs[i], j);
      y4[i] = forward(t1, a1, std::vector<double>{xs[i]})[0];
    }
    const Eigen::Vector4d c4 = V4.lu().solve(y4);
    for (double x : {-2.0, 0.05, 0.77, 3.0}) {
      const double interp = c4[0] + c4[1] * x + c4[2] * x * x + c4[3] * x * x * x;
      CHECK(std::abs(forward(t1, a1, std::vector<double>{x})[0] - interp) <= 1e-9 * std::max(1.0, std::abs(interp)));
    }
  }
}

TEST_CASE("monomial naming and basis order") {
  const auto basis = monomial_basis(2, 2);
  std::vector<std::string> names;
  for (const auto& m : basis) names.push_back(monomial_name(m));
  CHECK(names == std::vector<std::string>{"1", "x0", "x1", "x0^2", "x0*x1", "x1^2"});
  for (const auto& m : monomial_basis(3, 3)) CHECK(parse_monomial(monomial_name(m), 3) == m);
  CHECK_THROWS_AS(parse_monomial("y0", 2), ValidationError);
}

TEST_CASE("tape evaluation of a polynomial form") {
  Polynomial p(2);
  p.add_term({1, 0}, 1.5);
  p.add_term({1, 1}, -1.0);
  Polynomial q(2);
  q.add_term({0, 1}, -3.0);
  q.add_term({1, 1}, 1.0);
  Tape tape;
  Var y = tape.constant(Tensor({2, 2}, {1.0, 1.0, 2.0, 0.5}));
  Var out = evaluate({p, q}, y);
  CHECK(out.value()(0, 0) == doctest::Approx(0.5));
  CHECK(out.value()(0, 1) == doctest::Approx(-2.0));
  CHECK(out.value()(1, 0) == doctest::Approx(2.0));
  CHECK(out.value()(1, 1) == doctest::Approx(-0.5));
}
