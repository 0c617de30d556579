#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bpode/autodiff.hpp"
#include "bpode/odeint.hpp"
#include "bpode/polynet.hpp"
#include "bpode/symexpand.hpp"

namespace bpode {

// A model whose likelihood is iid Gaussian in its residuals (prediction - target).
// Residuals may be split into groups that can be evaluated on separate tapes,
// which keeps per-residual Jacobians cheap.
class ResidualModel {
 public:
  virtual ~ResidualModel() = default;
  virtual std::size_t n_params() const = 0;
  virtual std::size_t n_residuals() const = 0;
  /// All residuals as one tape node (any shape, n_residuals entries).
  virtual Var residuals(Tape& tape, Var theta) const = 0;

  virtual std::size_t n_groups() const { return 1; }
  /// Residuals of one group; groups partition the residuals in order.
  virtual Var group_residuals(Tape& tape, Var theta, std::size_t group) const;

  /// Residual values without gradients.
  Eigen::VectorXd residual_values(std::span<const double> theta) const;
  /// d residual / d theta, n_residuals x n_params.
  Eigen::MatrixXd jacobian(std::span<const double> theta) const;
};

/// r = X theta - y.
class LinearResidualModel : public ResidualModel {
 public:
  LinearResidualModel(Eigen::MatrixXd X, Eigen::VectorXd y);
  std::size_t n_params() const override { return static_cast<std::size_t>(X_.cols()); }
  std::size_t n_residuals() const override { return static_cast<std::size_t>(X_.rows()); }
  Var residuals(Tape& tape, Var theta) const override;
  const Eigen::MatrixXd& design() const { return X_; }
  const Eigen::VectorXd& targets() const { return y_; }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
};

/// r = net(x_i) - y_i for a static regression (N x d inputs, N x n_outputs targets).
class PolyNetRegressionModel : public ResidualModel {
 public:
  PolyNetRegressionModel(PolyNetArch arch, RowMatrix inputs, RowMatrix targets);
  std::size_t n_params() const override { return count_params(arch_); }
  std::size_t n_residuals() const override { return static_cast<std::size_t>(targets_.size()); }
  Var residuals(Tape& tape, Var theta) const override;
  const PolyNetArch& arch() const { return arch_; }

 private:
  PolyNetArch arch_;
  RowMatrix inputs_;
  RowMatrix targets_;
};

/// Windowed neural-ODE fit: each window is integrated from its initial state and
/// compared with the observed points after the first. dy/dt = known(y) + net(y).
class NeuralOdeModel : public ResidualModel {
 public:
  NeuralOdeModel(PolyNetArch arch, TrajectoryBatchSet batch, std::optional<PolynomialForm> known = std::nullopt,
                 IntegrateOptions integrate_opts = {});
  std::size_t n_params() const override { return count_params(arch_); }
  std::size_t n_residuals() const override;
  Var residuals(Tape& tape, Var theta) const override;
  std::size_t n_groups() const override { return batch_.n_windows(); }
  Var group_residuals(Tape& tape, Var theta, std::size_t group) const override;

  const PolyNetArch& arch() const { return arch_; }
  const TrajectoryBatchSet& batch() const { return batch_; }
  const std::optional<PolynomialForm>& known() const { return known_; }
  /// Right-hand side with fixed parameters (for prediction).
  OdeSystem system(std::vector<double> theta) const;

 private:
  Var window_residuals(Tape& tape, Var theta, const RowMatrix& y0, std::size_t first, std::size_t count) const;

  PolyNetArch arch_;
  TrajectoryBatchSet batch_;
  std::optional<PolynomialForm> known_;
  IntegrateOptions opts_;
};

// Unnormalized log density with gradient; used by the samplers.
struct LogDensity {
  std::size_t dim = 0;
  /// Returns log p(theta); writes the gradient when grad is non-null.
  std::function<double(const Eigen::VectorXd& theta, Eigen::VectorXd* grad)> eval;
};

// log f(D, theta) = sum_i log N(r_i | 0, beta2) + sum_j log N(theta_j | 0, alpha^2).
struct LogJointSpec {
  std::shared_ptr<const ResidualModel> model;
  double alpha = 100.0;
  double beta2 = 1.0;
  bool estimate_beta2 = true;  // train_map replaces beta2 with the residual variance

  void validate() const;
  std::size_t dim() const { return model->n_params(); }
  double log_likelihood(std::span<const double> theta) const;
  double log_prior(std::span<const double> theta) const;
  double log_joint(std::span<const double> theta) const;
  /// log joint and its gradient.
  ValueAndGrad log_joint_grad(std::span<const double> theta) const;
  ValueAndGrad log_likelihood_grad(std::span<const double> theta) const;

  LogDensity log_joint_density() const;
  LogDensity log_likelihood_density() const;
};

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace bpode
