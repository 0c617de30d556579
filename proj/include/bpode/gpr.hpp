#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bpode/rng.hpp"
#include "bpode/tensor.hpp"

namespace bpode {

// Kernel expression tree over scalar inputs. Hyperparameters are stored in
// natural (positive) units; their flattened order is a preorder walk.
class KernelSpec {
 public:
  enum class Kind { Constant, Periodic, RationalQuadratic, Rbf, Matern, White, Sum, Product };
  // Scale class of a hyperparameter, used to draw restart values.
  enum class Role { Amplitude, Length, Shape, Noise };

  static KernelSpec constant(double c2);
  static KernelSpec periodic(double length, double period);
  static KernelSpec rational_quadratic(double length, double alpha);
  static KernelSpec rbf(double length);
  /// nu in {0.5, 1.5, 2.5}; nu is fixed, not fitted.
  static KernelSpec matern(double length, double nu);
  static KernelSpec white(double noise);
  static KernelSpec sum(KernelSpec a, KernelSpec b);
  static KernelSpec product(KernelSpec a, KernelSpec b);

  /// Parses e.g. "constant(1)*periodic(1,6)+white(1)"; '*' binds tighter than '+'.
  static KernelSpec parse(const std::string& text);
  std::string to_string() const;

  Kind kind() const { return kind_; }
  const std::vector<KernelSpec>& children() const { return children_; }
  double nu() const { return nu_; }
  /// This node's own hyperparameters (empty for sum and product).
  const std::vector<double>& params() const { return params_; }

  std::size_t n_hyperparameters() const;
  std::vector<double> hyperparameters() const;
  std::vector<Role> roles() const;
  std::vector<std::string> hyperparameter_names() const;
  KernelSpec with_hyperparameters(std::span<const double> values) const;

  /// Throws ValidationError unless every hyperparameter is finite and > 0.
  void validate() const;

 private:
  static KernelSpec make(Kind kind, std::vector<double> params, double nu = 0.0);
  void collect(std::vector<double>& out) const;
  std::size_t assign(std::span<const double> values, std::size_t at);

  Kind kind_ = Kind::Constant;
  std::vector<double> params_;
  std::vector<KernelSpec> children_;
  double nu_ = 0.0;
};

inline KernelSpec operator+(KernelSpec a, KernelSpec b) { return KernelSpec::sum(std::move(a), std::move(b)); }
inline KernelSpec operator*(KernelSpec a, KernelSpec b) { return KernelSpec::product(std::move(a), std::move(b)); }

/// k(a, b). White terms contribute only when same_index is true.
double kernel_eval(const KernelSpec& spec, double a, double b, bool same_index = false);
/// As kernel_eval, also writing dk/dlog(h) for every hyperparameter into grad.
double kernel_eval_grad(const KernelSpec& spec, double a, double b, bool same_index, std::span<double> grad);

/// Gram matrix over xs, treating entry (i, i) as the same training index.
Eigen::MatrixXd gram(const KernelSpec& spec, std::span<const double> xs);
/// Cross-covariance k(a_i, b_j) with no white contribution.
Eigen::MatrixXd cross_gram(const KernelSpec& spec, std::span<const double> a, std::span<const double> b);

// Training data with repeated inputs collapsed into groups.
struct GroupedData {
  std::vector<double> x;        // distinct inputs
  std::vector<double> mean;     // group means
  std::vector<double> count;    // group sizes
  std::vector<double> within;   // within-group sums of squares
  std::size_t n_total = 0;
};

GroupedData group_inputs(std::span<const double> x, std::span<const double> y);

struct LmlResult {
  double value = 0.0;
  Eigen::VectorXd grad;  // with respect to log hyperparameters
  double jitter = 0.0;
};

/// Exact log marginal likelihood of the ungrouped data, evaluated on the groups.
LmlResult log_marginal_likelihood(const KernelSpec& spec, const GroupedData& data, bool with_grad = true);
/// Reference form on the full data (O(n^3)); used for checks.
double log_marginal_likelihood_dense(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

struct GprFitOptions {
  std::size_t n_restarts = 8;
  std::size_t max_iter = 200;
  double lower_bound = 1e-8;  // hyperparameter box
  double upper_bound = 1e8;
  double gtol = 1e-7;
};

class GprModel {
 public:
  GprModel() = default;
  GprModel(KernelSpec spec, GroupedData data);

  const KernelSpec& kernel() const { return spec_; }
  const GroupedData& data() const { return data_; }
  double log_marginal_likelihood() const { return lml_; }
  double jitter() const { return jitter_; }

  /// Posterior mean and variance of the latent function (white noise excluded).
  void predict(std::span<const double> xq, std::vector<double>& mean, std::vector<double>& variance) const;

 private:
  KernelSpec spec_;
  GroupedData data_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd weights_;
  double lml_ = 0.0;
  double jitter_ = 0.0;
};

/// Maximum-likelihood hyperparameters: the initial spec plus n_restarts
/// log-uniform restarts, each refined by BFGS in bounded log space.
GprModel gpr_fit(std::span<const double> x, std::span<const double> y, const KernelSpec& spec, RngStream& rng,
                 const GprFitOptions& opts = {});

// Independent per-dimension smoothing of pooled replicate series.
struct SmoothedSeries {
  std::vector<GprModel> models;  // one per state dimension
  RowMatrix mean;                // n_points x d at the series times
  RowMatrix variance;
};

SmoothedSeries smooth_series(std::span<const double> times, std::span<const RowMatrix> replicates,
                             const KernelSpec& spec, RngStream& rng, const GprFitOptions& opts = {});

}  // namespace bpode
