#include <cmath>
#include <limits>
#include <sstream>

#include "bpode/errors.hpp"
#include "bpode/inference.hpp"

namespace bpode {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Phase-space point with cached density and gradient.
struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double logp = kNegInf;
};

// Target evaluation where numeric failure means zero density.
double evaluate(const LogDensity& target, const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
  try {
    const double lp = target.eval(q, &grad);
    if (!std::isfinite(lp) || !grad.allFinite()) return kNegInf;
    return lp;
  } catch (const NumericError&) {
    return kNegInf;
  }
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Eigen::VectorXd to_vector(std::span<const double> x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace

SampleSet hmc_sample(const LogDensity& target, std::span<const double> theta0, const HmcOptions& opts,
                     RngStream& rng) {
  if (theta0.size() != target.dim) throw ValidationError("hmc: theta0 has wrong length");
  if (!(opts.step_size > 0.0) || opts.n_leapfrog < 1) throw ValidationError("hmc: need step_size > 0 and L >= 1");
  if (opts.n_samples < 1) throw ValidationError("hmc: n_samples must be >= 1");
  if (opts.jitter < 0.0 || opts.jitter >= 1.0) throw ValidationError("hmc: jitter must be in [0, 1)");
  const Eigen::Index d = static_cast<Eigen::Index>(target.dim);

  PhasePoint cur;
  cur.q = to_vector(theta0);
  cur.logp = evaluate(target, cur.q, cur.grad);
  if (cur.logp == kNegInf) throw NumericError("hmc: log density is not finite at the initial point");

  SampleSet out;
  out.method = SampleMethod::Hmc;
  out.step_size = opts.step_size;
  out.draws.resize(static_cast<Eigen::Index>(opts.n_samples), d);
  std::size_t accepted = 0, divergent = 0;
  const std::size_t total = opts.n_warmup + opts.n_samples;
  for (std::size_t it = 0; it < total; ++it) {
    const double eps = opts.step_size * (1.0 + opts.jitter * (2.0 * rng.uniform() - 1.0));
    PhasePoint prop = cur;
    prop.p.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) prop.p[j] = rng.normal();
    const double h0 = -cur.logp + 0.5 * prop.p.squaredNorm();
    bool failed = false;
    for (std::size_t s = 0; s < opts.n_leapfrog && !failed; ++s) {
      prop.p += 0.5 * eps * prop.grad;
      prop.q += eps * prop.p;
      prop.logp = evaluate(target, prop.q, prop.grad);
      if (prop.logp == kNegInf) {
        failed = true;
        break;
      }
      prop.p += 0.5 * eps * prop.grad;
    }
    const double h1 = failed ? std::numeric_limits<double>::infinity() : -prop.logp + 0.5 * prop.p.squaredNorm();
    const bool is_divergent = !std::isfinite(h1) || h1 - h0 > 1000.0;
    const bool accept = !is_divergent && std::log(rng.uniform()) < h0 - h1;
    if (accept) cur = prop;
    if (it >= opts.n_warmup) {
      accepted += accept;
      divergent += is_divergent;
      const auto row = static_cast<Eigen::Index>(it - opts.n_warmup);
      out.draws.row(row) = cur.q.transpose();
      out.log_joint.push_back(cur.logp);
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(opts.n_samples);
  out.n_divergent = divergent;
  if (static_cast<double>(divergent) > 0.99 * static_cast<double>(opts.n_samples))
    out.warnings.push_back("more than 99% of HMC trajectories diverged: step size too large");
  if (out.acceptance_rate < 0.01)
    out.warnings.push_back("HMC acceptance below 1%: the chain repeats its starting point");
  return out;
}

namespace {

// Multinomial no-U-turn sampler with a diagonal metric.
class Nuts {
 public:
  Nuts(const LogDensity& target, RngStream& rng, std::size_t max_depth)
      : target_(target), rng_(rng), max_depth_(max_depth),
        inv_metric_(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(target.dim))) {}

  double eps = 1.0;
  void set_diag_metric(const Eigen::VectorXd& inv) {
    inv_metric_ = inv;
    dense_ = false;
  }
  // Stan's dense_e: inverse metric M^-1 = U^T U, momentum p = U^-1 u.
  void set_dense_metric(const Eigen::MatrixXd& inv) {
    Eigen::LLT<Eigen::MatrixXd> llt(inv);
    if (llt.info() != Eigen::Success) return;  // keep the previous metric
    inv_dense_ = inv;
    chol_upper_ = llt.matrixU();
    dense_ = true;
  }

  struct Stats {
    double accept_stat = 0.0;
    std::size_t depth = 0;
    bool divergent = false;
  };

  void sample_momentum(PhasePoint& z) {
    z.p.resize(z.q.size());
    if (dense_) {
      for (Eigen::Index j = 0; j < z.q.size(); ++j) z.p[j] = rng_.normal();
      z.p = chol_upper_.triangularView<Eigen::Upper>().solve(z.p);
      return;
    }
    for (Eigen::Index j = 0; j < z.q.size(); ++j) z.p[j] = rng_.normal() / std::sqrt(inv_metric_[j]);
  }
  Eigen::VectorXd apply_inv(const Eigen::VectorXd& p) const {
    return dense_ ? Eigen::VectorXd(inv_dense_ * p) : Eigen::VectorXd(inv_metric_.cwiseProduct(p));
  }
  double hamiltonian(const PhasePoint& z) const { return -z.logp + 0.5 * z.p.dot(apply_inv(z.p)); }
  Eigen::VectorXd p_sharp(const PhasePoint& z) const { return apply_inv(z.p); }

  void leapfrog(PhasePoint& z, double step) {
    z.p += 0.5 * step * z.grad;
    z.q += step * apply_inv(z.p);
    z.logp = evaluate(target_, z.q, z.grad);
    if (z.logp != kNegInf) z.p += 0.5 * step * z.grad;
  }

  /// Step size by repeated doubling/halving until one-step acceptance crosses 0.8.
  void init_step_size(const PhasePoint& start) {
    PhasePoint z = start;
    sample_momentum(z);
    double h0 = hamiltonian(z);
    leapfrog(z, eps);
    double h = z.logp == kNegInf ? std::numeric_limits<double>::infinity() : hamiltonian(z);
    const double log08 = std::log(0.8);
    const int direction = h0 - h > log08 ? 1 : -1;
    for (int iter = 0; iter < 100; ++iter) {
      z = start;
      sample_momentum(z);
      h0 = hamiltonian(z);
      leapfrog(z, eps);
      h = z.logp == kNegInf ? std::numeric_limits<double>::infinity() : hamiltonian(z);
      const double delta = h0 - h;
      if (direction == 1 && !(delta > log08)) break;
      if (direction == -1 && !(delta < log08)) break;
      eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
      if (eps > 1e7 || eps < 1e-12) break;
    }
  }

  Stats transition(PhasePoint& z0) {
    Stats stats;
    sample_momentum(z0);
    const double H0 = hamiltonian(z0);
    PhasePoint z_fwd = z0, z_bck = z0, z_sample = z0, z_propose = z0;
    Eigen::VectorXd p_sharp_fwd_fwd = p_sharp(z0), p_sharp_fwd_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_sharp_bck_fwd = p_sharp_fwd_fwd, p_sharp_bck_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_fwd_fwd = z0.p, p_fwd_bck = z0.p, p_bck_fwd = z0.p, p_bck_bck = z0.p;
    Eigen::VectorXd rho = z0.p;
    double log_sum_weight = 0.0;
    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;
    divergent_ = false;
    const Eigen::Index d = z0.q.size();

    while (stats.depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(d), rho_bck = Eigen::VectorXd::Zero(d);
      bool valid = false;
      double log_sum_weight_subtree = kNegInf;
      if (rng_.uniform() > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        z_ = z_fwd;
        valid = build_tree(stats.depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, H0,
                           1.0, log_sum_weight_subtree);
        z_fwd = z_;
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        z_ = z_bck;
        valid = build_tree(stats.depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, H0,
                           -1.0, log_sum_weight_subtree);
        z_bck = z_;
      }
      if (!valid) break;
      ++stats.depth;
      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Eigen::VectorXd rho_extended = rho_bck + p_fwd_bck;
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_extended);
      rho_extended = rho_fwd + p_bck_fwd;
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_extended);
      if (!persist) break;
    }
    z0 = z_sample;
    stats.accept_stat = n_leapfrog_ > 0 ? sum_metro_prob_ / static_cast<double>(n_leapfrog_) : 0.0;
    stats.divergent = divergent_;
    return stats;
  }

 private:
  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(std::size_t depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg, Eigen::VectorXd& p_sharp_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double H0, double sign,
                  double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(z_, sign * eps);
      ++n_leapfrog_;
      double h = z_.logp == kNegInf ? std::numeric_limits<double>::infinity() : hamiltonian(z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - H0 > 1000.0) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, H0 - h);
      sum_metro_prob_ += H0 - h > 0.0 ? 1.0 : std::exp(H0 - h);
      z_propose = z_;
      p_sharp_beg = p_sharp(z_);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }
    const Eigen::Index d = z_.q.size();
    Eigen::VectorXd p_sharp_init_end(d), p_init_end(d), rho_init = Eigen::VectorXd::Zero(d);
    double log_sum_weight_init = kNegInf;
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, H0, sign,
                    log_sum_weight_init))
      return false;

    PhasePoint z_propose_final = z_;
    Eigen::VectorXd p_sharp_final_beg(d), p_final_beg(d), rho_final = Eigen::VectorXd::Zero(d);
    double log_sum_weight_final = kNegInf;
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, H0, sign,
                    log_sum_weight_final))
      return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }
    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    Eigen::VectorXd rho_extended = rho_init + p_final_beg;
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_extended);
    rho_extended = rho_final + p_init_end;
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_extended);
    return persist;
  }

  const LogDensity& target_;
  RngStream& rng_;
  std::size_t max_depth_;
  Eigen::VectorXd inv_metric_;
  bool dense_ = false;
  Eigen::MatrixXd inv_dense_, chol_upper_;
  PhasePoint z_;
  std::size_t n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
  bool divergent_ = false;
};

// Step-size dual averaging toward a target acceptance statistic.
struct DualAveraging {
  double mu = 0.0, h_bar = 0.0, log_eps_bar = 0.0, target = 0.8;
  double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double counter = 0.0;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    h_bar = 0.0;
    log_eps_bar = 0.0;
    counter = 0.0;
  }
  double update(double accept_stat) {
    counter += 1.0;
    const double eta = 1.0 / (counter + t0);
    h_bar = (1.0 - eta) * h_bar + eta * (target - std::min(1.0, accept_stat));
    const double log_eps = mu - std::sqrt(counter) / gamma * h_bar;
    const double w = std::pow(counter, -kappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
    return std::exp(log_eps);
  }
  double final_step() const { return std::exp(log_eps_bar); }
};

// Slow warmup windows [start, end) for metric adaptation; each doubles the last.
std::vector<std::pair<std::size_t, std::size_t>> metric_windows(std::size_t n_warmup) {
  std::size_t init = 75, term = 50, base = 25;
  if (n_warmup < 20) return {};
  if (init + term + base > n_warmup) {
    init = static_cast<std::size_t>(0.15 * static_cast<double>(n_warmup));
    term = static_cast<std::size_t>(0.1 * static_cast<double>(n_warmup));
    base = n_warmup - init - term;
  }
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  std::size_t start = init, size = base;
  const std::size_t last = n_warmup - term;
  while (start < last) {
    std::size_t end = start + size;
    if (end + 2 * size > last) end = last;  // stretch the final window
    windows.emplace_back(start, end);
    start = end;
    size *= 2;
  }
  return windows;
}

}  // namespace

SampleSet nuts_sample(const LogDensity& target, std::span<const double> theta0, const NutsOptions& opts,
                      RngStream& rng) {
  if (theta0.size() != target.dim) throw ValidationError("nuts: theta0 has wrong length");
  if (opts.n_samples < 1) throw ValidationError("nuts: n_samples must be >= 1");
  if (opts.max_depth < 1) throw ValidationError("nuts: max_depth must be >= 1");
  if (!(opts.target_accept > 0.0 && opts.target_accept < 1.0)) throw ValidationError("nuts: target_accept in (0,1)");
  const Eigen::Index d = static_cast<Eigen::Index>(target.dim);

  Nuts nuts(target, rng, opts.max_depth);
  PhasePoint z;
  z.q = to_vector(theta0);
  z.logp = evaluate(target, z.q, z.grad);
  if (z.logp == kNegInf) throw NumericError("nuts: log density is not finite at the initial point");

  nuts.eps = opts.initial_step_size > 0.0 ? opts.initial_step_size : 1.0;
  if (opts.initial_step_size <= 0.0) nuts.init_step_size(z);
  DualAveraging da;
  da.target = opts.target_accept;
  da.restart(nuts.eps);

  const auto windows = opts.adapt_mass ? metric_windows(opts.n_warmup)
                                       : std::vector<std::pair<std::size_t, std::size_t>>{};
  std::size_t next_window = 0;
  Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd w_m2 = Eigen::MatrixXd::Zero(d, opts.dense_metric ? d : 1);
  double w_count = 0.0;

  for (std::size_t it = 0; it < opts.n_warmup; ++it) {
    const auto st = nuts.transition(z);
    nuts.eps = da.update(st.accept_stat);
    if (next_window < windows.size()) {
      if (it >= windows[next_window].first) {
        w_count += 1.0;
        const Eigen::VectorXd delta = z.q - w_mean;
        w_mean += delta / w_count;
        if (opts.dense_metric) w_m2 += delta * (z.q - w_mean).transpose();
        else w_m2.col(0) += delta.cwiseProduct(z.q - w_mean);
      }
      if (it + 1 == windows[next_window].second) {
        if (w_count > 2.0) {
          // Shrink toward a small multiple of the identity, as Stan does.
          const double keep = w_count / (w_count + 5.0), ridge = 1e-3 * (5.0 / (w_count + 5.0));
          const Eigen::MatrixXd cov = w_m2 / (w_count - 1.0);
          if (opts.dense_metric)
            nuts.set_dense_metric(keep * cov + ridge * Eigen::MatrixXd::Identity(d, d));
          else
            nuts.set_diag_metric((keep * cov.col(0).array() + ridge).matrix());
        }
        w_mean.setZero();
        w_m2.setZero();
        w_count = 0.0;
        ++next_window;
        nuts.init_step_size(z);
        da.restart(nuts.eps);
      }
    }
  }
  if (opts.n_warmup > 0) nuts.eps = da.final_step();

  SampleSet out;
  out.method = SampleMethod::Nuts;
  out.step_size = nuts.eps;
  out.draws.resize(static_cast<Eigen::Index>(opts.n_samples), d);
  double accept_sum = 0.0;
  std::size_t saturated = 0;
  for (std::size_t it = 0; it < opts.n_samples; ++it) {
    const auto st = nuts.transition(z);
    accept_sum += st.accept_stat;
    saturated += st.depth >= opts.max_depth;
    out.n_divergent += st.divergent;
    out.draws.row(static_cast<Eigen::Index>(it)) = z.q.transpose();
    out.log_joint.push_back(z.logp);
  }
  out.acceptance_rate = accept_sum / static_cast<double>(opts.n_samples);
  out.depth_saturation = static_cast<double>(saturated) / static_cast<double>(opts.n_samples);
  if (out.depth_saturation > 0.25) {
    std::ostringstream msg;
    msg << "NUTS hit the maximum tree depth in " << 100.0 * out.depth_saturation << "% of iterations";
    out.warnings.push_back(msg.str());
  }
  if (out.n_divergent > 0) out.warnings.push_back(std::to_string(out.n_divergent) + " divergent NUTS transitions");
  return out;
}

}  // namespace bpode
