#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"

#include "bpode/odeint.hpp"

using namespace bpode;

namespace {

OdeSystem linear_system(double rate) {
  Polynomial p(1);
  p.add_term({1}, rate);
  return polynomial_system({p});
}

PolynomialForm lotka_form() {
  Polynomial dx(2), dy(2);
  dx.add_term({1, 0}, 1.5);
  dx.add_term({1, 1}, -1.0);
  dy.add_term({0, 1}, -3.0);
  dy.add_term({1, 1}, 1.0);
  return {dx, dy};
}

Eigen::VectorXd lotka(const Eigen::VectorXd& y) {
  Eigen::VectorXd d(2);
  d << 1.5 * y[0] - y[0] * y[1], -3.0 * y[1] + y[0] * y[1];
  return d;
}

std::vector<double> grid(double t0, double t1, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

double exp_error(double h) {
  const auto n = static_cast<std::size_t>(std::llround(1.0 / h)) + 1;
  const auto traj = integrate(linear_system(1.0), std::vector<double>{1.0}, 0.0, grid(0, 1, n));
  return std::abs(traj(traj.rows() - 1, 0) - std::numbers::e);
}

}  // namespace

TEST_CASE("constant solution stays constant") {
  Polynomial zero(2);
  const auto traj = integrate(polynomial_system({zero, zero}), std::vector<double>{0.3, -2.0}, 0.0, grid(0, 5, 11));
  for (Eigen::Index k = 0; k < traj.rows(); ++k) {
    CHECK(traj(k, 0) == 0.3);
    CHECK(traj(k, 1) == -2.0);
  }
}

TEST_CASE("exponential growth reaches e at t=1") {
  CHECK(exp_error(0.01) <= 1e-8);
}

TEST_CASE("fourth-order convergence under step halving") {
  double prev = exp_error(0.2);
  for (double h : {0.1, 0.05, 0.025}) {
    const double e = exp_error(h);
    const double ratio = prev / e;
    CHECK(ratio >= 12.0);
    CHECK(ratio <= 20.0);
    prev = e;
  }
}

TEST_CASE("Lotka-Volterra matches an adaptive reference solve") {
  const auto ts = grid(0, 10, 101);
  IntegrateOptions opts;
  opts.substeps = 10;
  const auto traj = integrate(polynomial_system(lotka_form()), std::vector<double>{1.0, 1.0}, 0.0, ts, opts);
  Eigen::VectorXd y0(2);
  y0 << 1.0, 1.0;
  const auto ref = oracle::dopri5(lotka, y0, ts);
  double worst = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k)
    worst = std::max(worst, (traj.row(static_cast<Eigen::Index>(k)).transpose() - ref[k]).cwiseAbs().maxCoeff());
  CHECK(worst <= 1e-5);
}

TEST_CASE("integration from an earlier start time") {
  const auto traj = integrate(linear_system(1.0), std::vector<double>{1.0}, 0.0, grid(0.5, 1.0, 51));
  CHECK(traj(0, 0) == doctest::Approx(std::exp(0.5)).epsilon(1e-8));
  CHECK(traj(50, 0) == doctest::Approx(std::numbers::e).epsilon(1e-8));
}

TEST_CASE("blow-up is reported with the failing time") {
  Polynomial p(1);
  p.add_term({2}, 1.0);  // y' = y^2 explodes at t = 1
  CHECK_THROWS_AS(integrate(polynomial_system({p}), std::vector<double>{1.0}, 0.0, grid(0, 3, 31)), NumericError);
  try {
    integrate(polynomial_system({p}), std::vector<double>{1.0}, 0.0, grid(0, 3, 31));
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("t=") != std::string::npos);
  }
  CHECK_THROWS_AS(integrate(polynomial_system({p}), std::vector<double>{1.0}, 0.0, std::vector<double>{0.0, 0.0}),
                  ValidationError);
}

TEST_CASE("embedded error estimate shrinks with the step") {
  const auto sys = polynomial_system(lotka_form());
  const std::vector<double> y{1.0, 1.0};
  const double e1 = rkf_error_estimate(sys, y, 0.0, 0.1);
  const double e2 = rkf_error_estimate(sys, y, 0.0, 0.05);
  CHECK(e1 > 0.0);
  CHECK(e2 < e1 / 16.0);
}

TEST_CASE("sliding-window batching") {
  auto series = [](std::size_t n) {
    RowMatrix obs(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) obs.row(static_cast<Eigen::Index>(i)) << double(i), -double(i);
    return obs;
  };
  const auto t100 = grid(0, 10, 100);
  const auto b = make_batches(t100, series(100), 12);
  CHECK(b.n_windows() == 89);
  CHECK(b.target(5, 3, 0) == 8.0);
  CHECK(b.initial_states(5, 1) == -5.0);
  const auto w = b.window_times();
  for (std::size_t k = 1; k < w.size(); ++k) CHECK(w[k] > w[k - 1]);

  CHECK(make_batches(grid(0, 1, 5), series(5), 5).n_windows() == 1);
  CHECK(make_batches(grid(0, 30, 900), series(900), 2).n_windows() == 899);

  RowMatrix smooth = series(100) * 0.5;
  const auto bo = make_batches(t100, series(100), 12, smooth);
  CHECK(bo.initial_states(7, 0) == 3.5);
  CHECK(bo.target(7, 0, 0) == 7.0);

  CHECK_THROWS_AS(make_batches(t100, series(100), 1), ValidationError);
  CHECK_THROWS_AS(make_batches(grid(0, 1, 5), series(5), 6), ValidationError);
  auto uneven = t100;
  uneven[50] += 1e-3;
  CHECK_THROWS_AS(make_batches(uneven, series(100), 12), ValidationError);
}

TEST_CASE("batched integration equals serial integration bit for bit") {
  const auto sys = polynomial_system(lotka_form());
  const auto ts = grid(0, 10, 100);
  IntegrateOptions fine;
  fine.substeps = 20;
  const RowMatrix truth = integrate(sys, std::vector<double>{1.0, 1.0}, 0.0, ts, fine);
  const auto batch = make_batches(ts, truth, 12);
  const Tensor pred = integrate_batch(sys, batch);
  const auto wt = batch.window_times();
  for (std::size_t i = 0; i < batch.n_windows(); ++i) {
    RowMatrix y0 = batch.initial_states.row(static_cast<Eigen::Index>(i));
    const RowMatrix serial = integrate(sys, std::span<const double>(y0.data(), 2), 0.0, wt);
    for (std::size_t k = 0; k < 12; ++k)
      for (std::size_t j = 0; j < 2; ++j) CHECK(pred[(i * 12 + k) * 2 + j] == serial(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
  }

  SUBCASE("every window matches the reference solve") {
    const Tensor fine_pred = integrate_batch(sys, batch, fine);
    double worst = 0.0;
    for (std::size_t i = 0; i < batch.n_windows(); ++i) {
      std::vector<double> wt(12);
      for (std::size_t k = 0; k < 12; ++k) wt[k] = ts[i + k];
      Eigen::VectorXd y0 = batch.initial_states.row(static_cast<Eigen::Index>(i)).transpose();
      const auto ref = oracle::dopri5(lotka, y0, wt);
      for (std::size_t k = 0; k < 12; ++k)
        for (std::size_t j = 0; j < 2; ++j) worst = std::max(worst, std::abs(fine_pred[(i * 12 + k) * 2 + j] - ref[k][static_cast<Eigen::Index>(j)]));
    }
    CHECK(worst <= 1e-5);
  }

  SUBCASE("identical initial states give identical rows") {
    RowMatrix same(3, 2);
    same << 1.0, 2.0, 1.0, 2.0, 1.0, 2.0;
    const auto b3 = make_batches(grid(0, 1, 6), RowMatrix(RowMatrix::Ones(6, 2)), 4, same.topRows(3));
    const Tensor p3 = integrate_batch(sys, b3);
    for (std::size_t k = 0; k < 4 * 2; ++k) {
      CHECK(p3[k] == p3[8 + k]);
      CHECK(p3[k] == p3[16 + k]);
    }
  }
}

TEST_CASE("gradient through two integration steps matches the analytic derivative") {
  // dy/dt = a*y: one step multiplies y by R(a h), R the stability polynomial of the 4th-order weights.
  double coeff[6] = {1.0, 0, 0, 0, 0, 0};  // R(z) = sum_k coeff[k] z^k, coeff[k] = b^T A^{k-1} 1
  {
    Eigen::Matrix<double, 5, 5> A = Eigen::Matrix<double, 5, 5>::Zero();
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) A(i, j) = rkf45::a[i][j];
    Eigen::Matrix<double, 5, 1> b, v = Eigen::Matrix<double, 5, 1>::Ones();
    for (int i = 0; i < 5; ++i) b[i] = rkf45::b4[i];
    for (int k = 1; k <= 5; ++k) {
      coeff[k] = b.dot(v);
      v = A * v;
    }
  }
  auto R = [&](double z) {
    double s = 0.0;
    for (int k = 5; k >= 0; --k) s = s * z + coeff[k];
    return s;
  };
  auto dR = [&](double z) {
    double s = 0.0;
    for (int k = 5; k >= 1; --k) s = s * z + k * coeff[k];
    return s;
  };
  const double a = 0.7, h = 0.3, y0 = 1.4;
  CHECK(coeff[1] == doctest::Approx(1.0));
  CHECK(coeff[4] == doctest::Approx(1.0 / 24.0));

  auto loss = [&](Tape& tape, Var th) {
    OdeSystem sys;
    sys.dim = 1;
    sys.rhs = [th](Var y, double) { return scale_by(y, th); };
    const auto states = integrate_tape(sys, tape.constant(Tensor({1, 1}, {y0})), 0.0, h, 2);
    return sum(states.back());
  };
  const auto vg = value_and_grad(loss, Eigen::VectorXd::Constant(1, a));
  CHECK(vg.value == doctest::Approx(y0 * R(a * h) * R(a * h)).epsilon(1e-14));
  CHECK(std::abs(vg.grad[0] - y0 * 2.0 * R(a * h) * dR(a * h) * h) <= 1e-8);
}
