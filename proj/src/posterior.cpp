#include "bpode/posterior.hpp"

#include <algorithm>
#include <cmath>

#include "bpode/errors.hpp"

namespace bpode {

std::string to_string(CovarianceSource s) {
  switch (s) {
    case CovarianceSource::LaplacePinv: return "laplace_pinv";
    case CovarianceSource::LaplaceDiag: return "laplace_diag";
    case CovarianceSource::Variational: return "variational";
    case CovarianceSource::Closed: return "closed_form";
  }
  return "unknown";
}

std::string to_string(SampleMethod m) {
  switch (m) {
    case SampleMethod::Hmc: return "hmc";
    case SampleMethod::Nuts: return "nuts";
    case SampleMethod::Abc: return "abc";
  }
  return "unknown";
}

void GaussianPosterior::validate() const {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
    throw ValidationError("posterior covariance has wrong shape");
  if (!mean.allFinite() || !covariance.allFinite()) throw NumericError("posterior has non-finite entries");
  const double norm = covariance.norm();
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(norm, 1e-300))
    throw NumericError("posterior covariance is not symmetric");
  if (mean.size() > 0 && norm > 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8 * norm) throw NumericError("posterior covariance is not PSD");
  }
}

double SampleSet::weight(std::size_t i) const {
  return weights.empty() ? 1.0 / static_cast<double>(n_samples()) : weights[i];
}

Eigen::VectorXd SampleSet::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(draws.cols());
  for (std::size_t i = 0; i < n_samples(); ++i) m += weight(i) * draws.row(static_cast<Eigen::Index>(i)).transpose();
  return m;
}

Eigen::MatrixXd SampleSet::covariance() const {
  const Eigen::VectorXd m = mean();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(draws.cols(), draws.cols());
  double w2 = 0.0;
  for (std::size_t i = 0; i < n_samples(); ++i) {
    const Eigen::VectorXd d = draws.row(static_cast<Eigen::Index>(i)).transpose() - m;
    c += weight(i) * d * d.transpose();
    w2 += weight(i) * weight(i);
  }
  // Unbiased weighted estimate; reduces to 1/(n-1) for uniform weights.
  return w2 < 1.0 ? Eigen::MatrixXd(c / (1.0 - w2)) : c;
}

VariationalFamily VariationalFamily::isotropic(Eigen::VectorXd mean, double sd) {
  if (!(sd > 0.0)) throw ValidationError("variational scale must be positive");
  VariationalFamily q;
  q.scale = sd * Eigen::MatrixXd::Identity(mean.size(), mean.size());
  q.mean = std::move(mean);
  return q;
}

Eigen::VectorXd VariationalFamily::sample(RngStream& rng) const {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + scale.triangularView<Eigen::Lower>() * z;
}

void VariationalFamily::validate() const {
  if (scale.rows() != mean.size() || scale.cols() != mean.size())
    throw ValidationError("variational scale has wrong shape");
  if (!mean.allFinite() || !scale.allFinite()) throw ValidationError("variational family has non-finite entries");
  if ((scale.diagonal().array() <= 0.0).any()) throw ValidationError("variational scale diagonal must be positive");
  if (scale.rows() > 1 && scale.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff() != 0.0)
    throw ValidationError("variational scale must be lower triangular");
}

GaussianPosterior VariationalFamily::to_gaussian() const {
  GaussianPosterior g;
  g.mean = mean;
  g.covariance = covariance();
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
  g.source = CovarianceSource::Variational;
  return g;
}

}  // namespace bpode

namespace bpode {

RowMatrix sample_gaussian(const GaussianPosterior& post, std::size_t n, RngStream& rng, bool* clipped) {
  const Eigen::Index p = post.mean.size();
  if (post.covariance.rows() != p || post.covariance.cols() != p)
    throw ValidationError("posterior covariance has wrong shape");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (post.covariance + post.covariance.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  // Round-off negatives of a PSD matrix are not worth a warning.
  const double tol = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  const bool any_negative = (ev.array() < -tol).any();
  if (clipped) *clipped = any_negative;
  ev = ev.cwiseMax(0.0);
  const Eigen::MatrixXd root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
  RowMatrix out(static_cast<Eigen::Index>(n), p);
  Eigen::VectorXd z(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) z[j] = rng.normal();
    out.row(static_cast<Eigen::Index>(i)) = (post.mean + root * z).transpose();
  }
  return out;
}

RowMatrix resample_draws(const SampleSet& set, std::size_t n, RngStream& rng) {
  const std::size_t m = set.n_samples();
  if (m == 0) throw ValidationError("sample set is empty");
  RowMatrix out(static_cast<Eigen::Index>(n), set.draws.cols());
  if (!set.weights.empty()) {
    std::vector<double> cdf(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) cdf[i] = (acc += set.weights[i]);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform() * acc;
      const std::size_t k = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      out.row(static_cast<Eigen::Index>(i)) = set.draws.row(static_cast<Eigen::Index>(std::min(k, m - 1)));
    }
    return out;
  }
  if (n <= m) {
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(m - i)]);
    for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = set.draws.row(static_cast<Eigen::Index>(idx[i]));
  } else {
    for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = set.draws.row(static_cast<Eigen::Index>(rng.index(m)));
  }
  return out;
}

}  // namespace bpode
