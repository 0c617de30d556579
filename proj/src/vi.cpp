#include <cmath>
#include <limits>
#include <sstream>

#include "bpode/errors.hpp"
#include "bpode/inference.hpp"

namespace bpode {

double kl_to_prior(const VariationalFamily& q, double alpha) {
  const double p = static_cast<double>(q.dim());
  const double a2 = alpha * alpha;
  const double trace = q.scale.squaredNorm();
  const double logdet = 2.0 * q.scale.diagonal().array().log().sum();
  return 0.5 * ((trace + q.mean.squaredNorm()) / a2 - p + p * std::log(a2) - logdet);
}

double elbo_estimate(const LogDensity& log_likelihood, double alpha, const VariationalFamily& q,
                     const Eigen::MatrixXd& z) {
  double acc = 0.0;
  for (Eigen::Index s = 0; s < z.cols(); ++s) {
    const Eigen::VectorXd theta = q.mean + q.scale.triangularView<Eigen::Lower>() * z.col(s);
    double ll = -std::numeric_limits<double>::infinity();
    try {
      ll = log_likelihood.eval(theta, nullptr);
    } catch (const NumericError&) {
    }
    if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
    acc += ll;
  }
  return acc / static_cast<double>(z.cols()) - kl_to_prior(q, alpha);
}

ViResult vi_fit(const LogDensity& log_likelihood, double alpha, const VariationalFamily& init, const ViOptions& opts,
                RngStream& rng) {
  init.validate();
  if (init.dim() != log_likelihood.dim) throw ValidationError("vi: initial family has wrong dimension");
  if (!(alpha > 0.0)) throw ValidationError("vi: prior sd must be positive");
  if (opts.n_mc < 1 || opts.n_steps < 1) throw ValidationError("vi: need n_mc >= 1 and n_steps >= 1");
  if (!(opts.lr > 0.0) || !(opts.final_lr_fraction > 0.0)) throw ValidationError("vi: learning rates must be positive");
  const Eigen::Index p = static_cast<Eigen::Index>(init.dim());
  const double a2 = alpha * alpha;

  // Unconstrained parameters: mean, strictly-lower scale entries, log diagonal.
  Eigen::VectorXd mean = init.mean;
  Eigen::MatrixXd lower = init.scale.triangularView<Eigen::StrictlyLower>();
  Eigen::VectorXd log_diag = init.scale.diagonal().array().log();
  auto current = [&] {
    VariationalFamily q;
    q.mean = mean;
    q.scale = lower;
    q.scale.diagonal() = log_diag.array().exp();
    return q;
  };

  Eigen::MatrixXd z_eval(p, static_cast<Eigen::Index>(opts.n_eval));
  RngStream eval_rng = rng.split();
  for (Eigen::Index s = 0; s < z_eval.cols(); ++s)
    for (Eigen::Index j = 0; j < p; ++j) z_eval(j, s) = eval_rng.normal();

  ViResult out;
  out.initial_elbo = elbo_estimate(log_likelihood, alpha, init, z_eval);

  // Adam state per parameter block.
  Eigen::VectorXd m_mean = Eigen::VectorXd::Zero(p), v_mean = m_mean, m_diag = m_mean, v_diag = m_mean;
  Eigen::MatrixXd m_low = Eigen::MatrixXd::Zero(p, p), v_low = m_low;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  Eigen::VectorXd grad(p), z(p);
  for (std::size_t step = 0; step < opts.n_steps; ++step) {
    const VariationalFamily q = current();
    Eigen::VectorXd g_mean = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd g_scale = Eigen::MatrixXd::Zero(p, p);
    double ll_sum = 0.0;
    for (std::size_t s = 0; s < opts.n_mc; ++s) {
      for (Eigen::Index j = 0; j < p; ++j) z[j] = rng.normal();
      const Eigen::VectorXd theta = q.mean + q.scale.triangularView<Eigen::Lower>() * z;
      double ll = std::numeric_limits<double>::quiet_NaN();
      try {
        ll = log_likelihood.eval(theta, &grad);
      } catch (const NumericError&) {
      }
      if (!std::isfinite(ll) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "vi: non-finite ELBO at step " << step;
        if (!out.elbo_trace.empty()) msg << " (last ELBO " << out.elbo_trace.back() << ")";
        throw NumericError(msg.str());
      }
      ll_sum += ll;
      g_mean += grad;
      g_scale.noalias() += grad * z.transpose();
    }
    const double inv_n = 1.0 / static_cast<double>(opts.n_mc);
    out.elbo_trace.push_back(ll_sum * inv_n - kl_to_prior(q, alpha));

    g_mean = g_mean * inv_n - q.mean / a2;
    g_scale = g_scale * inv_n - q.scale / a2;
    Eigen::VectorXd g_diag = g_scale.diagonal().cwiseProduct(q.scale.diagonal()).array() + 1.0;
    Eigen::MatrixXd g_low = g_scale.triangularView<Eigen::StrictlyLower>();

    const double t = static_cast<double>(step + 1);
    const double lr = opts.lr * std::pow(opts.final_lr_fraction,
                                         opts.n_steps > 1 ? static_cast<double>(step) / static_cast<double>(opts.n_steps - 1) : 0.0);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    auto adam = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
      param.array() += lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    adam(mean, m_mean, v_mean, g_mean);
    adam(lower, m_low, v_low, g_low);
    adam(log_diag, m_diag, v_diag, g_diag);
    lower = lower.triangularView<Eigen::StrictlyLower>();
  }

  out.q = current();
  out.final_elbo = elbo_estimate(log_likelihood, alpha, out.q, z_eval);
  if (!(out.final_elbo >= out.initial_elbo)) {
    out.q = init;
    out.final_elbo = out.initial_elbo;
    out.kept_initial = true;
  }
  return out;
}

}  // namespace bpode
