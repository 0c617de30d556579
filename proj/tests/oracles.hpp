#pragma once

// Test-only reference computations, independent of the code paths under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Central finite-difference gradient of f at x.
inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                        double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(1, |b_i|)
inline double scaled_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return e;
}

/// Classical RK45 Dormand-Prince with adaptive steps, used as an independent reference solver.
inline std::vector<Eigen::VectorXd> dopri5(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                           Eigen::VectorXd y, const std::vector<double>& ts, double rtol = 1e-12,
                                           double atol = 1e-12) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45, a42 = -56.0 / 15,
                      a43 = 32.0 / 9, a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                      a54 = -212.0 / 729, a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                      a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84, e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  (void)c2;
  (void)c3;
  (void)c4;
  (void)c5;
  std::vector<Eigen::VectorXd> out;
  double t = ts.front();
  out.push_back(y);
  double h = 1e-3;
  for (std::size_t k = 1; k < ts.size(); ++k) {
    while (t < ts[k]) {
      if (t + h > ts[k]) h = ts[k] - t;
      const Eigen::VectorXd k1 = f(y);
      const Eigen::VectorXd k2 = f(y + h * a21 * k1);
      const Eigen::VectorXd k3 = f(y + h * (a31 * k1 + a32 * k2));
      const Eigen::VectorXd k4 = f(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
      const Eigen::VectorXd k5 = f(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const Eigen::VectorXd k6 = f(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const Eigen::VectorXd yn = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Eigen::VectorXd k7 = f(yn);
      const Eigen::VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double en = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(yn[i]));
        en = std::max(en, std::abs(err[i]) / sc);
      }
      if (en <= 1.0) {
        t += h;
        y = yn;
      }
      h *= std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(en, 1e-10), -0.2)));
    }
    out.push_back(y);
  }
  return out;
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }


/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

// Conjugate model y_i ~ N(theta, beta2), theta ~ N(0, alpha^2).
struct GaussianMeanPosterior {
  double mean;
  double var;
  double log_evidence;
};

inline GaussianMeanPosterior gaussian_mean_posterior(const std::vector<double>& y, double beta2, double alpha) {
  const double n = static_cast<double>(y.size());
  double s = 0.0;
  for (double v : y) s += v;
  const double precision = n / beta2 + 1.0 / (alpha * alpha);
  // Evidence: y ~ N(0, beta2 I + alpha^2 11^T).
  const Eigen::Index m = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd C = beta2 * Eigen::MatrixXd::Identity(m, m) + alpha * alpha * Eigen::MatrixXd::Ones(m, m);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), m);
  const Eigen::MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const double ev = -0.5 * yv.dot(llt.solve(yv)) - 0.5 * logdet - 0.5 * n * std::log(2.0 * 3.14159265358979323846);
  return {s / beta2 / precision, 1.0 / precision, ev};
}

/// Minimum-norm pseudo-inverse from a two-sided Jacobi SVD.
inline Eigen::MatrixXd jacobi_pinv(const Eigen::MatrixXd& A, double rcond) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(A.cols(), A.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > rcond * s[0]) S(i, i) = 1.0 / s[i];
  return svd.matrixV() * S * svd.matrixU().transpose();
}

}  // namespace oracle
