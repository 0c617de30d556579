#include "bpode/models.hpp"

#include <cmath>
#include <numbers>

#include "bpode/errors.hpp"

namespace bpode {

namespace {

Var flat_theta(Tape& tape, std::span<const double> theta) {
  return tape.variable(Tensor::vector(std::vector<double>(theta.begin(), theta.end())));
}

Tensor rowmatrix_tensor(const RowMatrix& m) { return Tensor::from_matrix(m); }

}  // namespace

Var ResidualModel::group_residuals(Tape& tape, Var theta, std::size_t group) const {
  if (group != 0) throw ValidationError("residual model has a single group");
  return residuals(tape, theta);
}

Eigen::VectorXd ResidualModel::residual_values(std::span<const double> theta) const {
  if (theta.size() != n_params()) throw ValidationError("parameter vector has wrong length");
  Tape tape;
  Var r = residuals(tape, tape.constant(Tensor::vector(std::vector<double>(theta.begin(), theta.end()))));
  tape.check_finite();
  const auto& v = r.value().values();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd ResidualModel::jacobian(std::span<const double> theta) const {
  if (theta.size() != n_params()) throw ValidationError("parameter vector has wrong length");
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n_residuals()), static_cast<Eigen::Index>(n_params()));
  Eigen::Index row = 0;
  for (std::size_t g = 0; g < n_groups(); ++g) {
    Tape tape;
    Var th = flat_theta(tape, theta);
    Var r = group_residuals(tape, th, g);
    tape.check_finite();
    const Tensor& rv = r.value();
    Tensor seed = rv;
    for (std::size_t i = 0; i < rv.values().size(); ++i) {
      seed.fill(0.0);
      seed[i] = 1.0;
      tape.backward(r, seed);
      const Tensor g_th = tape.grad(th);
      J.row(row++) = Eigen::Map<const Eigen::RowVectorXd>(g_th.values().data(), J.cols());
    }
  }
  if (row != J.rows()) throw NumericError("residual groups do not cover all residuals");
  return J;
}

// -- linear --------------------------------------------------------------------

LinearResidualModel::LinearResidualModel(Eigen::MatrixXd X, Eigen::VectorXd y) : X_(std::move(X)), y_(std::move(y)) {
  if (X_.rows() != y_.size()) throw ValidationError("design and targets differ in length");
  if (X_.cols() < 1) throw ValidationError("design needs at least one column");
}

Var LinearResidualModel::residuals(Tape& tape, Var theta) const {
  if (X_.rows() == 0) return tape.constant(Tensor::vector({}));
  Var X = tape.constant(Tensor::from_matrix(RowMatrix(X_)));
  Var col = slice(theta, 0, static_cast<std::size_t>(X_.cols()), 1);
  Var pred = matmul(X, col);
  Var y = tape.constant(Tensor::from_matrix(RowMatrix(y_)));
  return sub(pred, y);
}

// -- static polynomial regression ------------------------------------------------

PolyNetRegressionModel::PolyNetRegressionModel(PolyNetArch arch, RowMatrix inputs, RowMatrix targets)
    : arch_(arch), inputs_(std::move(inputs)), targets_(std::move(targets)) {
  arch_.validate();
  if (inputs_.rows() != targets_.rows()) throw ValidationError("inputs and targets differ in length");
  if (static_cast<std::size_t>(inputs_.cols()) != arch_.n_inputs) throw ValidationError("input width mismatch");
  if (static_cast<std::size_t>(targets_.cols()) != arch_.n_outputs) throw ValidationError("target width mismatch");
}

Var PolyNetRegressionModel::residuals(Tape& tape, Var theta) const {
  Var out = forward(theta, arch_, tape.constant(rowmatrix_tensor(inputs_)));
  return sub(out, tape.constant(rowmatrix_tensor(targets_)));
}

// -- neural ODE --------------------------------------------------------------------

NeuralOdeModel::NeuralOdeModel(PolyNetArch arch, TrajectoryBatchSet batch, std::optional<PolynomialForm> known,
                               IntegrateOptions integrate_opts)
    : arch_(arch), batch_(std::move(batch)), known_(std::move(known)), opts_(integrate_opts) {
  arch_.validate();
  if (arch_.n_inputs != batch_.dim() || arch_.n_outputs != batch_.dim())
    throw ValidationError("network must map the state dimension to itself");
  if (batch_.window_length < 2) throw ValidationError("window_length must be >= 2");
  if (known_ && known_->size() != batch_.dim()) throw ValidationError("known form has wrong number of equations");
  if (opts_.substeps < 1) throw ValidationError("substeps must be >= 1");
}

std::size_t NeuralOdeModel::n_residuals() const {
  return batch_.n_windows() * (batch_.window_length - 1) * batch_.dim();
}

OdeSystem NeuralOdeModel::system(std::vector<double> theta) const {
  OdeSystem net = polynet_system(arch_, std::move(theta));
  return known_ ? hybrid_system(*known_, net) : net;
}

Var NeuralOdeModel::window_residuals(Tape& tape, Var theta, const RowMatrix& y0, std::size_t first,
                                     std::size_t count) const {
  OdeSystem net = polynet_system(arch_, theta);
  OdeSystem sys = known_ ? hybrid_system(*known_, net) : net;
  const std::size_t L = batch_.window_length, d = batch_.dim();
  auto states = integrate_tape(sys, tape.constant(Tensor::from_matrix(y0)), 0.0, batch_.dt, L - 1, opts_);
  // Residual layout: window-major, then step, then state (matches the target tensor).
  RowMatrix target(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>((L - 1) * d));
  for (std::size_t w = 0; w < count; ++w)
    for (std::size_t k = 1; k < L; ++k)
      for (std::size_t j = 0; j < d; ++j)
        target(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>((k - 1) * d + j)) =
            batch_.target(first + w, k, j);
  Var pred = states[1];
  for (std::size_t k = 2; k < L; ++k) pred = concat_cols(pred, states[k]);
  return sub(pred, tape.constant(Tensor::from_matrix(target)));
}

Var NeuralOdeModel::residuals(Tape& tape, Var theta) const {
  return window_residuals(tape, theta, batch_.initial_states, 0, batch_.n_windows());
}

Var NeuralOdeModel::group_residuals(Tape& tape, Var theta, std::size_t group) const {
  if (group >= batch_.n_windows()) throw ValidationError("window index out of range");
  RowMatrix y0 = batch_.initial_states.row(static_cast<Eigen::Index>(group));
  return window_residuals(tape, theta, y0, group, 1);
}

// -- log joint -------------------------------------------------------------------

void LogJointSpec::validate() const {
  if (!model) throw ValidationError("log joint has no model");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("prior sd alpha must be positive");
  if (!(beta2 > 0.0) || !std::isfinite(beta2)) throw ValidationError("noise variance beta2 must be positive");
}

double LogJointSpec::log_likelihood(std::span<const double> theta) const {
  const Eigen::VectorXd r = model->residual_values(theta);
  const double n = static_cast<double>(r.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi * beta2) - 0.5 * r.squaredNorm() / beta2;
}

double LogJointSpec::log_prior(std::span<const double> theta) const {
  const double p = static_cast<double>(theta.size());
  double ss = 0.0;
  for (double t : theta) ss += t * t;
  return -0.5 * p * std::log(2.0 * std::numbers::pi * alpha * alpha) - 0.5 * ss / (alpha * alpha);
}

double LogJointSpec::log_joint(std::span<const double> theta) const {
  return log_likelihood(theta) + log_prior(theta);
}

ValueAndGrad LogJointSpec::log_likelihood_grad(std::span<const double> theta) const {
  const double n = static_cast<double>(model->n_residuals());
  const double c = -0.5 * n * std::log(2.0 * std::numbers::pi * beta2);
  if (model->n_residuals() == 0) return {c, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(theta.size()))};
  return value_and_grad(
      [&](Tape& tape, Var th) { return add_scalar(scale(sum_squares(model->residuals(tape, th)), -0.5 / beta2), c); },
      theta);
}

ValueAndGrad LogJointSpec::log_joint_grad(std::span<const double> theta) const {
  ValueAndGrad out = log_likelihood_grad(theta);
  const Eigen::Map<const Eigen::VectorXd> th(theta.data(), static_cast<Eigen::Index>(theta.size()));
  out.value += log_prior(theta);
  out.grad -= th / (alpha * alpha);
  return out;
}

LogDensity LogJointSpec::log_joint_density() const {
  validate();
  LogJointSpec self = *this;
  return {dim(), [self](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
            if (!grad) return self.log_joint(as_span(theta));
            auto vg = self.log_joint_grad(as_span(theta));
            *grad = vg.grad;
            return vg.value;
          }};
}

LogDensity LogJointSpec::log_likelihood_density() const {
  validate();
  LogJointSpec self = *this;
  return {dim(), [self](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
            if (!grad) return self.log_likelihood(as_span(theta));
            auto vg = self.log_likelihood_grad(as_span(theta));
            *grad = vg.grad;
            return vg.value;
          }};
}

}  // namespace bpode
