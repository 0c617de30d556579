#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bpode/rng.hpp"
#include "bpode/tensor.hpp"

namespace bpode {

enum class CovarianceSource { LaplacePinv, LaplaceDiag, Variational, Closed };

std::string to_string(CovarianceSource s);

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  CovarianceSource source = CovarianceSource::LaplacePinv;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  Eigen::VectorXd sd() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  /// Symmetry and PSD check (min eigenvalue >= -1e-8 * ||Sigma||).
  void validate() const;
};

enum class SampleMethod { Hmc, Nuts, Abc };

std::string to_string(SampleMethod m);

struct SampleSet {
  SampleMethod method = SampleMethod::Hmc;
  RowMatrix draws;                 // n_samples x n_params
  std::vector<double> log_joint;   // per draw (ABC: distance)
  std::vector<double> weights;     // normalized; empty means uniform
  double acceptance_rate = 0.0;
  double step_size = 0.0;
  std::size_t n_divergent = 0;
  double depth_saturation = 0.0;   // fraction of NUTS iterations at max depth
  std::vector<std::string> warnings;

  std::size_t n_samples() const { return static_cast<std::size_t>(draws.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(draws.cols()); }
  double weight(std::size_t i) const;
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
};

// q(theta) = N(mean, scale scale^T) with lower-triangular scale, positive diagonal.
struct VariationalFamily {
  Eigen::VectorXd mean;
  Eigen::MatrixXd scale;

  static VariationalFamily isotropic(Eigen::VectorXd mean, double sd);
  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  Eigen::MatrixXd covariance() const { return scale * scale.transpose(); }
  Eigen::VectorXd sample(RngStream& rng) const;
  void validate() const;
  GaussianPosterior to_gaussian() const;
};

}  // namespace bpode

namespace bpode {

/// n draws from N(mean, Sigma) via the symmetric square root; negative
/// eigenvalues are clipped to zero and reported through `clipped`.
RowMatrix sample_gaussian(const GaussianPosterior& post, std::size_t n, RngStream& rng, bool* clipped = nullptr);

/// n rows of the sample set: uniform without replacement when n <= available,
/// else with replacement. Weighted sets are resampled by weight.
RowMatrix resample_draws(const SampleSet& set, std::size_t n, RngStream& rng);

}  // namespace bpode
