#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"

#include "bpode/benchmarks.hpp"
#include "bpode/gpr.hpp"

using namespace bpode;

namespace {

std::vector<KernelSpec> sample_kernels() {
  return {
      KernelSpec::parse("constant(2.5)*periodic(0.8,1.7)+white(0.3)"),
      KernelSpec::parse("constant(1.3)*rq(0.6,2.2)+white(0.05)"),
      KernelSpec::parse("rbf(0.7)*constant(3)+matern(1.1,0.5)"),
      KernelSpec::parse("matern(0.9,1.5)+matern(0.4,2.5)*constant(0.7)+white(0.2)"),
      KernelSpec::parse("(rbf(1.2)+white(0.1))*(constant(2)+periodic(1.5,2.5))"),
  };
}

}  // namespace

TEST_CASE("kernel closed-form values") {
  const double c2 = 2.5;
  auto per = KernelSpec::constant(c2) * KernelSpec::periodic(0.7, 1.3);
  CHECK(kernel_eval(per, 0.4, 0.4) == doctest::Approx(c2));
  CHECK(kernel_eval(per, 0.4, 0.4 + 1.3) == doctest::Approx(c2).epsilon(1e-12));

  const double l = 0.9, alpha = 1.0;
  auto rq = KernelSpec::constant(c2) * KernelSpec::rational_quadratic(l, alpha);
  const double d = std::sqrt(2.0 * alpha) * l;
  CHECK(kernel_eval(rq, 0.0, d) == doctest::Approx(c2 / 2.0));
  auto rq3 = KernelSpec::rational_quadratic(l, 3.0);
  CHECK(kernel_eval(rq3, 1.0, 1.0 + std::sqrt(6.0) * l) == doctest::Approx(std::pow(2.0, -3.0)));

  auto w = KernelSpec::white(0.4);
  CHECK(kernel_eval(w, 1.0, 1.0, true) == 0.4);
  CHECK(kernel_eval(w, 1.0, 1.0, false) == 0.0);

  CHECK(kernel_eval(KernelSpec::matern(2.0, 0.5), 0.0, 1.0) == doctest::Approx(std::exp(-0.5)));
  CHECK(kernel_eval(KernelSpec::rbf(2.0), 0.0, 1.0) == doctest::Approx(std::exp(-0.125)));
}

TEST_CASE("kernel validation and parsing") {
  CHECK_THROWS_AS(KernelSpec::rbf(0.0), ValidationError);
  CHECK_THROWS_AS(KernelSpec::periodic(1.0, -1.0), ValidationError);
  CHECK_THROWS_AS(KernelSpec::matern(1.0, 1.0), ValidationError);
  CHECK_THROWS_AS(KernelSpec::parse("rbf(1"), ValidationError);
  CHECK_THROWS_AS(KernelSpec::parse("cosine(1)"), ValidationError);
  auto k = KernelSpec::parse("(constant(2)+white(0.5))*rbf(3)");
  CHECK(KernelSpec::parse(k.to_string()).to_string() == k.to_string());
  CHECK(k.n_hyperparameters() == 3);
  CHECK(k.hyperparameters() == std::vector<double>{2.0, 0.5, 3.0});
  auto k2 = k.with_hyperparameters(std::vector<double>{1.0, 2.0, 4.0});
  CHECK(k2.hyperparameters() == std::vector<double>{1.0, 2.0, 4.0});
  CHECK_THROWS_AS(k.with_hyperparameters(std::vector<double>{1.0, -2.0, 4.0}), ValidationError);
}

TEST_CASE("kernel gradients match finite differences in log space") {
  for (const auto& spec : sample_kernels()) {
    const auto h0 = spec.hyperparameters();
    Eigen::VectorXd logh(static_cast<Eigen::Index>(h0.size()));
    for (std::size_t i = 0; i < h0.size(); ++i) logh[static_cast<Eigen::Index>(i)] = std::log(h0[i]);
    for (auto [a, b, same] : {std::tuple{0.3, 1.1, false}, std::tuple{0.5, 0.5, true}, std::tuple{-2.0, 0.7, false}}) {
      std::vector<double> g(h0.size());
      kernel_eval_grad(spec, a, b, same, g);
      auto f = [&](const Eigen::VectorXd& lh) {
        std::vector<double> h(h0.size());
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::exp(lh[static_cast<Eigen::Index>(i)]);
        return kernel_eval(spec.with_hyperparameters(h), a, b, same);
      };
      auto want = oracle::central_gradient(f, logh);
      CHECK(oracle::scaled_error(Eigen::Map<Eigen::VectorXd>(g.data(), want.size()), want) < 1e-7);
    }
  }
}

TEST_CASE("Gram matrices are symmetric positive semidefinite") {
  RngStream rng(17);
  for (const auto& spec : sample_kernels()) {
    std::vector<double> xs(40);
    for (auto& x : xs) x = rng.uniform(-3.0, 3.0);
    const Eigen::MatrixXd K = gram(spec, xs);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * K.norm());
  }
}

TEST_CASE("grouped marginal likelihood equals the dense one, gradient matches FD") {
  RngStream rng(4);
  std::vector<double> x, y;
  for (int r = 0; r < 4; ++r)
    for (int i = 0; i < 15; ++i) {
      x.push_back(0.3 * i);
      y.push_back(std::sin(0.3 * i) + 0.3 * rng.normal());
    }
  x.push_back(5.17);  // singleton group
  y.push_back(0.2);
  auto data = group_inputs(x, y);
  CHECK(data.x.size() == 16);
  for (const auto& spec : sample_kernels()) {
    bool has_noise = false;
    for (auto role : spec.roles()) has_noise |= role == KernelSpec::Role::Noise;
    if (!has_noise) {
      CHECK_THROWS_AS(log_marginal_likelihood(spec, data), ValidationError);
      continue;
    }
    auto r = log_marginal_likelihood(spec, data);
    CHECK(r.value == doctest::Approx(log_marginal_likelihood_dense(spec, x, y)).epsilon(1e-10));

    const auto h0 = spec.hyperparameters();
    Eigen::VectorXd logh(static_cast<Eigen::Index>(h0.size()));
    for (std::size_t i = 0; i < h0.size(); ++i) logh[static_cast<Eigen::Index>(i)] = std::log(h0[i]);
    auto f = [&](const Eigen::VectorXd& lh) {
      std::vector<double> h(h0.size());
      for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::exp(lh[static_cast<Eigen::Index>(i)]);
      return log_marginal_likelihood(spec.with_hyperparameters(h), data, false).value;
    };
    CHECK(oracle::scaled_error(r.grad, oracle::central_gradient(f, logh, 1e-5)) < 1e-5);
  }
}

TEST_CASE("constant data drives the noise to its floor") {
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(0.1 * i);
    y.push_back(3.0);
  }
  RngStream rng(1);
  auto model = gpr_fit(x, y, KernelSpec::parse("rbf(1)+white(1)"), rng);
  const double noise = model.kernel().hyperparameters()[1];
  CHECK(noise < 1e-6);
  std::vector<double> m, v;
  model.predict(x, m, v);
  for (double mi : m) CHECK(std::abs(mi - 3.0) < 1e-6);
}

TEST_CASE("periodic kernel recovers the generating period") {
  RngStream data_rng(21);
  std::vector<double> x = uniform_grid(0.0, 4.0, 200), y;
  for (double t : x) y.push_back(std::sin(2.0 * std::numbers::pi * t) + 0.1 * data_rng.normal());
  RngStream rng(2);
  const auto init = KernelSpec::parse("constant(1)*periodic(1,2.3)+white(0.1)");
  auto model = gpr_fit(x, y, init, rng);
  const double period = model.kernel().hyperparameters()[2];
  CHECK(std::abs(period - 1.0) < 0.1);
  CHECK(model.log_marginal_likelihood() >= log_marginal_likelihood(init, group_inputs(x, y), false).value);
}

TEST_CASE("interpolation, zero variance at training points and prior reversion") {
  std::vector<double> x{0.0, 0.5, 1.1, 1.9, 3.0}, y{1.0, -0.4, 0.3, 2.0, 0.7};
  const auto spec = KernelSpec::parse("constant(2)*rbf(0.8)");
  GprModel model(spec, group_inputs(x, y));
  std::vector<double> m, v;
  model.predict(x, m, v);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(m[i] - y[i]) < 1e-8);
    CHECK(v[i] <= 1e-10);
    CHECK(v[i] >= 0.0);
  }
  std::vector<double> far{500.0};
  model.predict(far, m, v);
  CHECK(std::abs(m[0]) < 1e-12);
  CHECK(v[0] == doctest::Approx(2.0));
}

TEST_CASE("noisy cubic posterior covers the truth") {
  auto data = cubic_static_data(100, {-1.25, 1.25}, 1.0, 7);
  RngStream rng(8);
  auto model = gpr_fit(data.x, data.y, KernelSpec::parse("constant(10)*rbf(1)+white(1)"), rng);
  std::vector<double> m, v;
  model.predict(data.x, m, v);
  int covered = 0;
  for (std::size_t i = 0; i < m.size(); ++i) covered += std::abs(m[i] - data.clean[i]) <= 3.0 * std::sqrt(v[i]);
  CHECK(covered >= 95);
}

TEST_CASE("Lotka-Volterra smoothing is closer to the truth than the noise") {
  const auto lv = benchmark(ModelId::LotkaVolterra);
  auto ds = generate_dataset(lv, 100, 0.0, 10.0, 2.0, 10, 989);
  RngStream rng(989);
  auto smooth = smooth_series(ds.times, ds.replicates, KernelSpec::parse("constant(1)*periodic(1,5)+white(1)"), rng);
  const RowMatrix& truth = ds.truth.reveal_for_evaluation();
  const double rmse = std::sqrt((smooth.mean - truth).squaredNorm() / static_cast<double>(truth.size()));
  MESSAGE("GPR RMSE " << rmse);
  CHECK(rmse < 1.0);
  CHECK(smooth.variance.minCoeff() >= 0.0);
}
