#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bpode/errors.hpp"
#include "bpode/inference.hpp"

namespace bpode {

Eigen::MatrixXd vandermonde(std::span<const double> x, std::size_t degree) {
  Eigen::MatrixXd V(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(degree + 1));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = 1.0;
    for (std::size_t k = 0; k <= degree; ++k) {
      V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
      v *= x[i];
    }
  }
  return V;
}

BlrResult bayesian_linear_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw ValidationError("blr: design and targets differ in length");
  if (X.rows() < X.cols()) throw ValidationError("blr: fewer rows than columns, X^T X is singular");
  const Eigen::MatrixXd XtX = X.transpose() * X;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(XtX);
  qr.setThreshold(1e-12);
  if (qr.rank() < XtX.cols()) throw NumericError("blr: X^T X is singular");
  BlrResult out;
  out.posterior.mean = qr.solve(X.transpose() * y);
  out.beta2 = residual_variance(X * out.posterior.mean - y);
  out.degenerate = out.beta2 <= 0.0;
  const Eigen::MatrixXd inv = qr.inverse();
  out.posterior.covariance = out.beta2 * 0.5 * (inv + inv.transpose());
  out.posterior.source = CovarianceSource::Closed;
  return out;
}

bool BoxPrior::contains(const Eigen::VectorXd& theta) const {
  return theta.size() == lo.size() && (theta.array() >= lo.array()).all() && (theta.array() <= hi.array()).all();
}

Eigen::VectorXd BoxPrior::sample(RngStream& rng) const {
  Eigen::VectorXd t(lo.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo[i], hi[i]);
  return t;
}

namespace {

double abc_distance(const Simulator& simulate, const Eigen::VectorXd& theta, std::span<const RowMatrix> observed) {
  RowMatrix sim;
  try {
    sim = simulate(theta);
  } catch (const NumericError&) {
    return std::numeric_limits<double>::infinity();
  }
  double ss = 0.0, count = 0.0;
  for (const auto& obs : observed) {
    if (sim.rows() != obs.rows() || sim.cols() != obs.cols()) throw ValidationError("abc: simulation shape mismatch");
    ss += (sim - obs).squaredNorm();
    count += static_cast<double>(obs.size());
  }
  const double d = std::sqrt(ss / count);
  return std::isfinite(d) ? d : std::numeric_limits<double>::infinity();
}

}  // namespace

SampleSet abc_smc(const Simulator& simulate, const BoxPrior& prior, std::span<const RowMatrix> observed,
                  const AbcOptions& opts, RngStream& rng) {
  const Eigen::Index p = prior.lo.size();
  if (p == 0 || prior.hi.size() != p || (prior.hi.array() <= prior.lo.array()).any())
    throw ValidationError("abc: prior box must have hi > lo in every dimension");
  if (observed.empty()) throw ValidationError("abc: no observed data");
  if (opts.n_particles < 2) throw ValidationError("abc: need at least 2 particles");
  if (!(opts.quantile > 0.0 && opts.quantile < 1.0)) throw ValidationError("abc: quantile must be in (0,1)");
  const std::size_t budget = opts.max_simulations_per_round ? opts.max_simulations_per_round : 100 * opts.n_particles;

  SampleSet pop;
  pop.method = SampleMethod::Abc;
  pop.draws.resize(static_cast<Eigen::Index>(opts.n_particles), p);
  pop.weights.assign(opts.n_particles, 1.0 / static_cast<double>(opts.n_particles));
  for (std::size_t i = 0; i < opts.n_particles; ++i) {
    const Eigen::VectorXd t = prior.sample(rng);
    pop.draws.row(static_cast<Eigen::Index>(i)) = t.transpose();
    pop.log_joint.push_back(abc_distance(simulate, t, observed));
  }
  pop.acceptance_rate = 1.0;

  for (std::size_t round = 1; round < opts.n_rounds; ++round) {
    std::vector<double> finite;
    for (double dist : pop.log_joint)
      if (std::isfinite(dist)) finite.push_back(dist);
    if (finite.empty()) {
      pop.warnings.push_back("abc: every simulation failed; stopping");
      break;
    }
    const double tolerance = quantile(finite, opts.quantile);

    // Perturbation kernel: twice the weighted particle covariance.
    Eigen::MatrixXd cov = 2.0 * pop.covariance();
    cov.diagonal().array() += 1e-12 * (prior.hi - prior.lo).array().square();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("abc: perturbation covariance is not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    const double log_norm = -0.5 * static_cast<double>(p) * std::log(2.0 * std::numbers::pi) -
                            L.diagonal().array().log().sum();

    std::vector<double> cdf(pop.n_samples());
    double acc = 0.0;
    for (std::size_t i = 0; i < pop.n_samples(); ++i) cdf[i] = (acc += pop.weight(i));

    RowMatrix draws(static_cast<Eigen::Index>(opts.n_particles), p);
    std::vector<double> distances, log_w;
    std::size_t proposals = 0;
    Eigen::VectorXd z(p);
    while (distances.size() < opts.n_particles && proposals < budget) {
      ++proposals;
      const double u = rng.uniform() * acc;
      const std::size_t j = std::min<std::size_t>(
          static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin()), pop.n_samples() - 1);
      for (Eigen::Index k = 0; k < p; ++k) z[k] = rng.normal();
      const Eigen::VectorXd theta = pop.draws.row(static_cast<Eigen::Index>(j)).transpose() + L * z;
      if (!prior.contains(theta)) continue;
      const double dist = abc_distance(simulate, theta, observed);
      if (!(dist <= tolerance)) continue;
      // Uniform prior: weight is 1 / sum_j w_j K(theta | theta_j).
      double mix = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < pop.n_samples(); ++k) {
        const Eigen::VectorXd diff = theta - pop.draws.row(static_cast<Eigen::Index>(k)).transpose();
        const double lk = std::log(pop.weight(k)) + log_norm - 0.5 * llt.matrixL().solve(diff).squaredNorm();
        const double m = std::max(mix, lk);
        mix = m == -std::numeric_limits<double>::infinity() ? m : m + std::log(std::exp(mix - m) + std::exp(lk - m));
      }
      draws.row(static_cast<Eigen::Index>(distances.size())) = theta.transpose();
      distances.push_back(dist);
      log_w.push_back(-mix);
    }
    if (distances.empty()) {
      pop.warnings.push_back("abc: no particle accepted in round " + std::to_string(round) + "; stopping");
      break;
    }
    const double top = *std::max_element(log_w.begin(), log_w.end());
    std::vector<double> w(log_w.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(log_w[i] - top));
    for (double& wi : w) wi /= total;

    SampleSet next;
    next.method = SampleMethod::Abc;
    next.draws = draws.topRows(static_cast<Eigen::Index>(distances.size()));
    next.log_joint = distances;
    next.weights = w;
    next.acceptance_rate = static_cast<double>(distances.size()) / static_cast<double>(proposals);
    next.warnings = pop.warnings;
    pop = std::move(next);
    if (pop.n_samples() < opts.n_particles) {
      pop.warnings.push_back("abc: round " + std::to_string(round) + " filled only " +
                             std::to_string(pop.n_samples()) + " particles within its budget; stopping");
      break;
    }
  }
  return pop;
}

}  // namespace bpode
