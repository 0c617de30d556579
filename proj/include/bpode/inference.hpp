#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bpode/models.hpp"
#include "bpode/odeint.hpp"
#include "bpode/posterior.hpp"
#include "bpode/rng.hpp"

namespace bpode {

// -- MAP training ---------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  std::size_t epochs = 3000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t reestimate_every = 0;  // 0: noise variance estimated once, at the end
  double rel_tol = 1e-8;             // stop when the loss changes less than this over `patience` epochs
  std::size_t patience = 100;
};

struct MapResult {
  Eigen::VectorXd theta;
  double beta2 = 0.0;
  std::vector<double> loss_trace;
  std::size_t epochs_run = 0;
  bool converged = false;
};

/// Adam on mean squared residuals + (beta2 / (n alpha^2)) |theta|^2. With
/// spec.estimate_beta2 the returned beta2 is the residual variance at the result.
MapResult train_map(const LogJointSpec& spec, std::span<const double> theta0, const AdamOptions& opts = {});

/// Population variance of the residuals.
double residual_variance(const Eigen::VectorXd& r);

// -- Laplace ----------------------------------------------------------------------

enum class FisherMethod { Gradient, Hessian };
enum class InverseMethod { MoorePenrose, Diagonal };

FisherMethod parse_fisher_method(const std::string& s);
InverseMethod parse_inverse_method(const std::string& s);

/// Row i: gradient of the i-th residual's log-likelihood term, -r_i grad(r_i) / beta2.
Eigen::MatrixXd per_residual_gradients(const LogJointSpec& spec, std::span<const double> theta);

/// Gradient: sum_i g_i g_i^T. Hessian: -(H + H^T)/2 of the log joint, by central
/// differences of exact gradients; refused above `hessian_cap` parameters.
Eigen::MatrixXd fisher_information(const LogJointSpec& spec, std::span<const double> theta, FisherMethod method,
                                   std::size_t hessian_cap = 1000);

/// SVD pseudo-inverse with singular values below rcond * s_max treated as zero.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& A, double rcond = 1e-10);

struct LaplaceOptions {
  FisherMethod fisher = FisherMethod::Gradient;
  InverseMethod invert = InverseMethod::MoorePenrose;
  double rcond = 1e-10;
  std::size_t hessian_cap = 1000;
  std::size_t newton_steps = 0;  // Newton refinements of theta* before the covariance
};

struct LaplaceResult {
  GaussianPosterior posterior;
  Eigen::MatrixXd fisher;
  std::size_t rank = 0;
  std::vector<std::string> warnings;
};

/// Covariance from a Fisher matrix. Negative eigenvalues are clipped (with a warning).
LaplaceResult laplace_from_fisher(const Eigen::MatrixXd& fisher, Eigen::VectorXd mean, InverseMethod invert,
                                  double rcond = 1e-10);
LaplaceResult laplace_posterior(const LogJointSpec& spec, std::span<const double> theta_star,
                                const LaplaceOptions& opts = {});

/// Newton steps on the log joint with the pseudo-inverted Hessian Fisher.
Eigen::VectorXd newton_refine(const LogJointSpec& spec, std::span<const double> theta, std::size_t steps,
                              std::size_t hessian_cap = 1000);

// -- MCMC ---------------------------------------------------------------------------

struct HmcOptions {
  double step_size = 0.1;
  std::size_t n_leapfrog = 10;
  std::size_t n_warmup = 500;
  std::size_t n_samples = 1000;
  double jitter = 0.0;  // step size drawn uniformly from step_size * [1 - jitter, 1 + jitter]
};

SampleSet hmc_sample(const LogDensity& target, std::span<const double> theta0, const HmcOptions& opts, RngStream& rng);

struct NutsOptions {
  std::size_t n_warmup = 500;
  std::size_t n_samples = 500;
  std::size_t max_depth = 10;
  double target_accept = 0.8;
  double initial_step_size = 0.0;  // 0: heuristic search
  bool adapt_mass = true;          // windowed mass-matrix adaptation
  bool dense_metric = false;       // adapt a full covariance instead of its diagonal
};

SampleSet nuts_sample(const LogDensity& target, std::span<const double> theta0, const NutsOptions& opts,
                      RngStream& rng);

// -- variational ----------------------------------------------------------------------

struct ViOptions {
  std::size_t n_steps = 2000;
  std::size_t n_mc = 8;
  double lr = 1e-2;
  double final_lr_fraction = 0.01;  // exponential decay to lr * fraction at the last step
  std::size_t n_eval = 64;          // common draws for the initial/final ELBO comparison
};

struct ViResult {
  VariationalFamily q;
  std::vector<double> elbo_trace;
  double initial_elbo = 0.0;
  double final_elbo = 0.0;
  bool kept_initial = false;
};

/// KL(N(m, L L^T) || N(0, alpha^2 I)).
double kl_to_prior(const VariationalFamily& q, double alpha);
/// Monte-Carlo ELBO with the given standard-normal draws (columns of z).
double elbo_estimate(const LogDensity& log_likelihood, double alpha, const VariationalFamily& q,
                     const Eigen::MatrixXd& z);

ViResult vi_fit(const LogDensity& log_likelihood, double alpha, const VariationalFamily& init, const ViOptions& opts,
                RngStream& rng);
inline ViResult vi_fit(const LogJointSpec& spec, const VariationalFamily& init, const ViOptions& opts,
                       RngStream& rng) {
  return vi_fit(spec.log_likelihood_density(), spec.alpha, init, opts, rng);
}

// -- closed form and likelihood-free baselines -------------------------------------------

struct BlrResult {
  GaussianPosterior posterior;
  double beta2 = 0.0;
  bool degenerate = false;  // zero residual variance
};

/// Least squares with covariance beta2 (X^T X)^{-1}, beta2 the residual variance.
BlrResult bayesian_linear_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

/// Columns 1, x, ..., x^degree.
Eigen::MatrixXd vandermonde(std::span<const double> x, std::size_t degree);

struct BoxPrior {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  bool contains(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd sample(RngStream& rng) const;
};

struct AbcOptions {
  std::size_t n_particles = 500;
  std::size_t n_rounds = 8;
  double quantile = 0.5;
  std::size_t max_simulations_per_round = 0;  // 0: 100 * n_particles
};

using Simulator = std::function<RowMatrix(const Eigen::VectorXd& theta)>;

/// Distance is the RMSE between the simulation and every observed replicate.
/// Failed simulations count as infinitely far.
SampleSet abc_smc(const Simulator& simulate, const BoxPrior& prior, std::span<const RowMatrix> observed,
                  const AbcOptions& opts, RngStream& rng);

// -- predictive ---------------------------------------------------------------------------

struct PredictiveBands {
  std::vector<double> times;
  RowMatrix mean;     // times x d
  RowMatrix lo95, hi95;
  RowMatrix lo9975, hi9975;
  std::size_t n_used = 0;
  std::size_t n_failed = 0;  // draws whose integration blew up
};

/// Integrates one ODE per parameter draw from y0 and takes per-time quantiles.
PredictiveBands predictive_bands(const std::function<OdeSystem(const Eigen::VectorXd&)>& make_system,
                                 const RowMatrix& draws, std::span<const double> y0, std::span<const double> times,
                                 const IntegrateOptions& opts = {});

/// Linear-interpolated empirical quantile of unsorted values.
double quantile(std::vector<double> values, double q);

}  // namespace bpode
