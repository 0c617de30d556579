#include <cmath>
#include <sstream>

#include "bpode/errors.hpp"
#include "bpode/inference.hpp"

namespace bpode {

double residual_variance(const Eigen::VectorXd& r) {
  if (r.size() == 0) return 0.0;
  const double m = r.mean();
  return (r.array() - m).square().mean();
}

MapResult train_map(const LogJointSpec& spec, std::span<const double> theta0, const AdamOptions& opts) {
  spec.validate();
  if (theta0.size() != spec.dim()) throw ValidationError("train_map: theta0 has wrong length");
  if (!(opts.lr > 0.0)) throw ValidationError("training.lr must be positive");
  const auto& model = *spec.model;
  const double n = static_cast<double>(model.n_residuals());
  if (n == 0) throw ValidationError("train_map: model has no residuals");

  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(theta0.data(), static_cast<Eigen::Index>(theta0.size()));
  double beta2 = spec.estimate_beta2 ? residual_variance(model.residual_values(as_span(theta))) : spec.beta2;
  if (!(beta2 > 0.0)) beta2 = spec.beta2;
  const double inv_alpha2 = 1.0 / (spec.alpha * spec.alpha);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size()), v = Eigen::VectorXd::Zero(theta.size());
  MapResult out;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const double prior_weight = beta2 * inv_alpha2 / n;
    ValueAndGrad vg;
    try {
      vg = value_and_grad(
          [&](Tape& tape, Var th) {
            return add(scale(sum_squares(model.residuals(tape, th)), 1.0 / n), scale(sum_squares(th), prior_weight));
          },
          as_span(theta));
    } catch (const NumericError& e) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << ": " << e.what();
      throw NumericError(msg.str());
    }
    out.loss_trace.push_back(vg.value);
    const double b1t = 1.0 - std::pow(opts.beta1, static_cast<double>(epoch));
    const double b2t = 1.0 - std::pow(opts.beta2, static_cast<double>(epoch));
    m = opts.beta1 * m + (1.0 - opts.beta1) * vg.grad;
    v = opts.beta2 * v + (1.0 - opts.beta2) * vg.grad.cwiseAbs2();
    theta.array() -= opts.lr * (m.array() / b1t) / ((v.array() / b2t).sqrt() + opts.eps);
    out.epochs_run = epoch;

    if (opts.reestimate_every > 0 && epoch % opts.reestimate_every == 0 && spec.estimate_beta2) {
      const double est = residual_variance(model.residual_values(as_span(theta)));
      if (est > 0.0) beta2 = est;
    }
    if (opts.patience > 0 && out.loss_trace.size() > opts.patience) {
      const double before = out.loss_trace[out.loss_trace.size() - 1 - opts.patience];
      if (std::abs(before - vg.value) <= opts.rel_tol * std::max(std::abs(vg.value), 1e-300)) {
        out.converged = true;
        break;
      }
    }
  }
  if (!theta.allFinite()) throw NumericError("training produced non-finite parameters");
  out.theta = theta;
  out.beta2 = spec.estimate_beta2 ? residual_variance(model.residual_values(as_span(theta))) : spec.beta2;
  return out;
}

}  // namespace bpode
