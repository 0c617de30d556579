#include <cmath>

#include "bpode/errors.hpp"
#include "bpode/inference.hpp"

namespace bpode {

FisherMethod parse_fisher_method(const std::string& s) {
  if (s == "gradient") return FisherMethod::Gradient;
  if (s == "hessian") return FisherMethod::Hessian;
  throw ValidationError("unknown Fisher method '" + s + "' (gradient|hessian)");
}

InverseMethod parse_inverse_method(const std::string& s) {
  if (s == "moore_penrose") return InverseMethod::MoorePenrose;
  if (s == "diagonal") return InverseMethod::Diagonal;
  throw ValidationError("unknown inverse method '" + s + "' (moore_penrose|diagonal)");
}

Eigen::MatrixXd per_residual_gradients(const LogJointSpec& spec, std::span<const double> theta) {
  spec.validate();
  const Eigen::VectorXd r = spec.model->residual_values(theta);
  Eigen::MatrixXd J = spec.model->jacobian(theta);
  for (Eigen::Index i = 0; i < J.rows(); ++i) J.row(i) *= -r[i] / spec.beta2;
  return J;
}

Eigen::MatrixXd fisher_information(const LogJointSpec& spec, std::span<const double> theta, FisherMethod method,
                                   std::size_t hessian_cap) {
  spec.validate();
  if (theta.size() != spec.dim()) throw ValidationError("fisher_information: theta has wrong length");
  if (method == FisherMethod::Gradient) {
    const Eigen::MatrixXd G = per_residual_gradients(spec, theta);
    Eigen::MatrixXd F = G.transpose() * G;
    return 0.5 * (F + F.transpose());
  }
  if (theta.size() > hessian_cap)
    throw ValidationError("Hessian Fisher refused: " + std::to_string(theta.size()) +
                          " parameters exceed the cap of " + std::to_string(hessian_cap));
  const Eigen::Index p = static_cast<Eigen::Index>(theta.size());
  Eigen::VectorXd th = Eigen::Map<const Eigen::VectorXd>(theta.data(), p);
  Eigen::MatrixXd H(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(th[j]));
    const double orig = th[j];
    th[j] = orig + h;
    const Eigen::VectorXd gp = spec.log_joint_grad(as_span(th)).grad;
    th[j] = orig - h;
    const Eigen::VectorXd gm = spec.log_joint_grad(as_span(th)).grad;
    th[j] = orig;
    H.col(j) = (gp - gm) / (2.0 * h);
  }
  return -0.5 * (H + H.transpose());
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& A, double rcond) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0) return Eigen::MatrixXd::Zero(A.cols(), A.rows());
  const double cutoff = rcond * s.maxCoeff();
  Eigen::VectorXd inv(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) inv[i] = s[i] > cutoff && s[i] > 0.0 ? 1.0 / s[i] : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

LaplaceResult laplace_from_fisher(const Eigen::MatrixXd& fisher, Eigen::VectorXd mean, InverseMethod invert,
                                  double rcond) {
  const Eigen::Index p = mean.size();
  if (fisher.rows() != p || fisher.cols() != p) throw ValidationError("Fisher matrix has wrong shape");
  if (!fisher.allFinite()) throw NumericError("Fisher matrix has non-finite entries");
  if (fisher.cwiseAbs().maxCoeff() == 0.0) throw NumericError("Fisher information is zero: the data carry no information");
  LaplaceResult out;
  out.fisher = fisher;
  out.posterior.mean = std::move(mean);
  const Eigen::MatrixXd sym = 0.5 * (fisher + fisher.transpose());
  if (invert == InverseMethod::Diagonal) {
    out.posterior.source = CovarianceSource::LaplaceDiag;
    out.posterior.covariance = Eigen::MatrixXd::Zero(p, p);
    std::size_t skipped = 0;
    for (Eigen::Index i = 0; i < p; ++i) {
      if (sym(i, i) > 0.0) {
        out.posterior.covariance(i, i) = 1.0 / sym(i, i);
        ++out.rank;
      } else {
        ++skipped;
      }
    }
    if (skipped)
      out.warnings.push_back(std::to_string(skipped) + " non-positive Fisher diagonal entries given zero variance");
    return out;
  }
  out.posterior.source = CovarianceSource::LaplacePinv;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if ((ev.array() < -rcond * top).any()) out.warnings.push_back("indefinite Fisher matrix: negative eigenvalues clipped to zero");
  const double cutoff = rcond * top;
  Eigen::VectorXd inv(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    if (ev[i] > cutoff) {
      inv[i] = 1.0 / ev[i];
      ++out.rank;
    } else {
      inv[i] = 0.0;
    }
  }
  Eigen::MatrixXd cov = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  out.posterior.covariance = 0.5 * (cov + cov.transpose());
  if (out.rank < static_cast<std::size_t>(p))
    out.warnings.push_back("singular Fisher matrix: rank " + std::to_string(out.rank) + " of " + std::to_string(p));
  return out;
}

Eigen::VectorXd newton_refine(const LogJointSpec& spec, std::span<const double> theta, std::size_t steps,
                              std::size_t hessian_cap) {
  Eigen::VectorXd th = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  for (std::size_t s = 0; s < steps; ++s) {
    const Eigen::MatrixXd F = fisher_information(spec, as_span(th), FisherMethod::Hessian, hessian_cap);
    const Eigen::VectorXd g = spec.log_joint_grad(as_span(th)).grad;
    th += pseudo_inverse(F, 1e-12) * g;
  }
  return th;
}

LaplaceResult laplace_posterior(const LogJointSpec& spec, std::span<const double> theta_star,
                                const LaplaceOptions& opts) {
  spec.validate();
  Eigen::VectorXd mean =
      Eigen::Map<const Eigen::VectorXd>(theta_star.data(), static_cast<Eigen::Index>(theta_star.size()));
  if (opts.newton_steps > 0) mean = newton_refine(spec, theta_star, opts.newton_steps, opts.hessian_cap);
  const Eigen::MatrixXd F = fisher_information(spec, as_span(mean), opts.fisher, opts.hessian_cap);
  return laplace_from_fisher(F, std::move(mean), opts.invert, opts.rcond);
}

}  // namespace bpode
