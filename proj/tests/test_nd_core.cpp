#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"

#include "bpode/autodiff.hpp"
#include "bpode/polynet.hpp"
#include "bpode/rng.hpp"

using namespace bpode;

namespace {

double value_of(const TapeFunction& f, const Eigen::VectorXd& x) {
  Tape tape;
  Var th = tape.variable(Tensor::vector(std::vector<double>(x.data(), x.data() + x.size())));
  return f(tape, th).value().item();
}

void check_against_fd(const TapeFunction& f, const Eigen::VectorXd& x, double tol = 1e-5) {
  const auto vg = value_and_grad(f, x);
  const auto fd = oracle::central_gradient([&](const Eigen::VectorXd& p) { return value_of(f, p); }, x);
  CHECK(oracle::scaled_error(vg.grad, fd) <= tol);
}

}  // namespace

TEST_CASE("value_and_grad on analytic functions") {
  auto sq = value_and_grad([](Tape&, Var th) { return sum_squares(slice(th, 0, 1, 1)); }, Eigen::VectorXd::Constant(1, 3.0));
  CHECK(sq.value == doctest::Approx(9.0));
  CHECK(sq.grad[0] == doctest::Approx(6.0));

  Eigen::VectorXd x(3);
  x << 1, 2, 3;
  auto s = value_and_grad([](Tape&, Var th) { return sum(th); }, x);
  CHECK(s.value == 6.0);
  CHECK(s.grad == Eigen::VectorXd::Ones(3));
}

TEST_CASE("negative log-likelihood of a two-parameter polynomial model matches finite differences") {
  // y = a x + a b x^2 on 10 synthetic points
  std::vector<double> xs, ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(-1.0 + 0.2 * i);
    ys.push_back(0.7 * xs.back() - 0.3 * xs.back() * xs.back() + 0.05 * std::sin(7.0 * i));
  }
  TapeFunction nll = [&](Tape& tape, Var th) {
    Var a = slice(th, 0, 1, 1), b = slice(th, 1, 1, 1);
    Var x = tape.constant(Tensor({10, 1}, xs));
    Var y = tape.constant(Tensor({10, 1}, ys));
    Var pred = add(scale_by(x, a), scale_by(mul(x, x), mul(a, b)));
    return scale(sum_squares(sub(pred, y)), 0.5);
  };
  Eigen::VectorXd th(2);
  th << 0.4, -1.3;
  check_against_fd(nll, th);
}

TEST_CASE("per_sample_grads") {
  std::function<Var(Tape&, Var, const double&)> gauss = [](Tape& tape, Var th, const double& y) {
    return scale(sum_squares(sub(tape.constant(Tensor::vector({y})), th)), -0.5);
  };
  const std::vector<double> ys{1.0, -1.0};
  const std::vector<double> theta{0.0};
  RowMatrix g = per_sample_grads<double>(gauss, theta, ys);
  CHECK(g.rows() == 2);
  CHECK(g(0, 0) == doctest::Approx(1.0));
  CHECK(g(1, 0) == doctest::Approx(-1.0));

  SUBCASE("single datum equals value_and_grad") {
    const std::vector<double> one{2.5};
    const std::vector<double> th{0.3};
    RowMatrix g1 = per_sample_grads<double>(gauss, th, one);
    auto vg = value_and_grad([&](Tape& t, Var v) { return gauss(t, v, 2.5); }, std::span<const double>(th));
    CHECK(g1(0, 0) == vg.grad[0]);
  }

  SUBCASE("quadratic model rows match per-datum finite differences") {
    struct Datum {
      double x, y;
    };
    std::vector<Datum> data{{-1.0, 2.0}, {-0.5, 0.3}, {0.0, 1.1}, {0.5, 0.9}, {1.2, 4.0}};
    std::function<Var(Tape&, Var, const Datum&)> term = [](Tape& tape, Var th, const Datum& d) {
      Var feats = tape.constant(Tensor::vector({1.0, d.x, d.x * d.x}));
      Var pred = dot(th, feats);
      return scale(square(add_scalar(pred, -d.y)), -0.5);
    };
    const std::vector<double> th{0.2, -0.4, 1.1};
    RowMatrix g5 = per_sample_grads<Datum>(term, th, data);
    Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(th.data(), 3);
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto fd = oracle::central_gradient(
          [&](const Eigen::VectorXd& p) {
            return value_of([&](Tape& t, Var v) { return term(t, v, data[i]); }, p);
          },
          x0);
      CHECK(oracle::scaled_error(g5.row(static_cast<Eigen::Index>(i)).transpose(), fd) <= 1e-5);
    }
  }
}

TEST_CASE("every primitive's reverse rule matches finite differences") {
  RngStream rng(11);
  Eigen::VectorXd x(24);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  TapeFunction f = [](Tape& tape, Var th) {
    Var a = slice(th, 0, 2, 3);   // 2x3
    Var b = slice(th, 6, 3, 2);   // 3x2
    Var c = slice(th, 12, 2, 3);  // 2x3
    Var s = slice(th, 18, 1, 1);
    Var ab = matmul(a, b);                      // 2x2
    Var act = matmul_nt(a, c);                  // 2x2
    Var p = prepend_ones(ab);                   // 2x3
    Var q = concat_cols(column(act, 1), ab);    // 2x3
    std::vector<Var> terms{p, q, c};
    std::vector<double> coeffs{0.5, -2.0, 1.5};
    Var lc = lincomb(terms, coeffs);
    Var z = mul(square(lc), scale_by(sub(q, neg(p)), s));
    Var extra = dot(add_scalar(slice(th, 19, 5, 1), 0.3), slice(th, 19, 5, 1));
    (void)tape;
    return add(sum(z), scale(extra, 0.25));
  };
  check_against_fd(f, x);
}

TEST_CASE("gradient of random polynomial networks matches finite differences") {
  RngStream rng(2024);
  for (int trial = 0; trial < 15; ++trial) {
    PolyNetArch arch{1 + rng.index(2), 1 + rng.index(3), 1 + rng.index(3), 1 + rng.index(2)};
    const std::size_t n = count_params(arch);
    Eigen::VectorXd th(static_cast<Eigen::Index>(n));
    for (auto& v : th) v = rng.uniform(-1.0, 1.0);
    RowMatrix xs(4, static_cast<Eigen::Index>(arch.n_inputs));
    for (auto& v : xs.reshaped()) v = rng.uniform(-1.5, 1.5);
    TapeFunction loss = [&](Tape& tape, Var t) {
      Var out = forward(t, arch, tape.constant(Tensor::from_matrix(xs)));
      return sum_squares(add_scalar(out, -0.3));
    };
    check_against_fd(loss, th);
  }
}

TEST_CASE("gradient is linear in the function") {
  Eigen::VectorXd x(3);
  x << 0.3, -1.2, 2.0;
  TapeFunction f = [](Tape&, Var th) { return sum_squares(th); };
  TapeFunction g = [](Tape&, Var th) { return sum(mul(th, th)); };
  TapeFunction h = [](Tape&, Var th) { return dot(th, th); };
  TapeFunction combo = [&](Tape& t, Var th) { return add(scale(f(t, th), 2.0), scale(h(t, th), -3.0)); };
  const auto gf = value_and_grad(f, x).grad;
  const auto gh = value_and_grad(h, x).grad;
  const auto gc = value_and_grad(combo, x).grad;
  CHECK((gc - (2.0 * gf - 3.0 * gh)).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((value_and_grad(g, x).grad - gf).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-finite intermediates raise NumericError naming the node") {
  Eigen::VectorXd x(1);
  x << 1e200;
  TapeFunction f = [](Tape&, Var th) { return sum(square(th)); };
  CHECK_THROWS_AS(value_and_grad(f, x), NumericError);
  try {
    value_and_grad(f, x);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("square") != std::string::npos);
  }
}

TEST_CASE("tape supports repeated sweeps with different seeds") {
  Tape tape;
  Var th = tape.variable(Tensor::vector({1.0, 2.0}));
  Var m = tape.constant(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var y = matmul(m, th);  // 2x1
  tape.backward(y, Tensor({2, 1}, {1.0, 0.0}));
  Tensor g0 = tape.grad(th);
  tape.backward(y, Tensor({2, 1}, {0.0, 1.0}));
  Tensor g1 = tape.grad(th);
  CHECK(g0[0] == 1.0);
  CHECK(g0[1] == 2.0);
  CHECK(g1[0] == 3.0);
  CHECK(g1[1] == 4.0);
}

TEST_CASE("RngStream determinism and splitting") {
  RngStream a(989), b(989);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(989);
  auto s1 = c.substream(3), s2 = c.substream(3), s3 = c.substream(4);
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(s1.next_u64() != s3.next_u64());

  RngStream n(5);
  double mean = 0.0, m2 = 0.0;
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) {
    const double z = n.normal();
    mean += z;
    m2 += z * z;
  }
  mean /= draws;
  m2 /= draws;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(m2 - 1.0) < 0.02);
  RngStream u(6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    CHECK((v > 0.0 && v < 1.0));
  }
}
