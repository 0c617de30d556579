#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bpode/experiment.hpp"

namespace bpode::pipeline {

namespace {

// Substream keys of the stages that draw random numbers.
constexpr std::uint64_t kSmoothStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kInferStream = 3;
constexpr std::uint64_t kExpandStream = 4;

RngStream stage_rng(const ExperimentConfig& cfg, std::uint64_t key) { return RngStream(cfg.seed).substream(key); }

// (eq, monomial) pairs of every nonzero term, equation-major in basis order.
std::vector<std::pair<std::size_t, Monomial>> form_terms(const PolynomialForm& form) {
  std::vector<std::pair<std::size_t, Monomial>> out;
  for (std::size_t eq = 0; eq < form.size(); ++eq)
    for (const auto& m : monomial_basis(form[eq].n_vars(), static_cast<std::size_t>(std::max(form[eq].degree(), 0))))
      if (form[eq].coeff(m) != 0.0) out.emplace_back(eq, m);
  return out;
}

PolynomialForm form_from_terms(const std::vector<std::pair<std::size_t, Monomial>>& terms, std::span<const double> c,
                               std::size_t dim) {
  PolynomialForm out(dim, Polynomial(dim));
  for (std::size_t k = 0; k < terms.size(); ++k) out[terms[k].first].add_term(terms[k].second, c[k]);
  return out;
}

// Coefficient posterior whose parameters already are coefficients (BLR, ABC).
CoefficientPosterior direct_coefficients(const ExperimentConfig& cfg, const PosteriorRecord& post, RngStream& rng) {
  RowMatrix draws;
  bool clipped = false;
  if (post.gaussian) draws = sample_gaussian(*post.gaussian, cfg.n_mc, rng, &clipped);
  else if (post.samples) draws = resample_draws(*post.samples, cfg.n_mc, rng);
  else throw ValidationError("posterior record has neither a covariance nor samples");
  if (static_cast<std::size_t>(draws.cols()) != post.terms.size())
    throw ValidationError("posterior dimension does not match its term list");
  CoefficientPosterior out;
  out.arch = cfg.arch();
  out.keys = post.terms;
  out.samples = draws;
  out.thetas = draws;
  out.from_network = false;
  out.provenance.source = post.method;
  out.provenance.n_mc = cfg.n_mc;
  out.provenance.seed = cfg.seed;
  if (clipped) out.provenance.warnings.push_back("covariance was not PSD; negative eigenvalues clipped to 0");
  return out;
}

std::vector<double> prediction_times(const ExperimentConfig& cfg) {
  if (!cfg.is_ode()) return uniform_grid(cfg.t_start, cfg.t_end, cfg.n_points);
  const double span = cfg.t_end - cfg.t_start;
  const double dt = span / static_cast<double>(cfg.n_points - 1);
  const auto n = static_cast<std::size_t>(std::llround(cfg.horizon * span / dt)) + 1;
  return uniform_grid(cfg.t_start, cfg.t_start + dt * static_cast<double>(n - 1), n);
}

}  // namespace

NoisyDataset generate(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.is_ode())
    return generate_dataset(benchmark(cfg.model), cfg.n_points, cfg.t_start, cfg.t_end, cfg.noise_sd, cfg.replicates,
                            cfg.seed);
  const CubicData cubic =
      cubic_static_data(cfg.n_points, {cfg.t_start, cfg.t_end}, cfg.noise_sd * cfg.noise_sd, cfg.seed);
  NoisyDataset out;
  out.model = cfg.model;
  out.times = cubic.x;
  out.replicates.push_back(Eigen::Map<const RowMatrix>(cubic.y.data(), static_cast<Eigen::Index>(cubic.y.size()), 1));
  out.noise_sd = cfg.noise_sd;
  out.seed = cfg.seed;
  out.truth = EvaluationOnly<RowMatrix>(
      Eigen::Map<const RowMatrix>(cubic.clean.data(), static_cast<Eigen::Index>(cubic.clean.size()), 1));
  return out;
}

std::optional<RowMatrix> smooth(const ExperimentConfig& cfg, const NoisyDataset& data) {
  if (!cfg.is_ode() || !cfg.smoothing) return std::nullopt;
  RngStream rng = stage_rng(cfg, kSmoothStream);
  GprFitOptions opts;
  opts.n_restarts = cfg.gpr_restarts;
  return smooth_series(data.times, data.replicates, KernelSpec::parse(cfg.kernel), rng, opts).mean;
}

std::shared_ptr<ResidualModel> build_model(const ExperimentConfig& cfg, const NoisyDataset& data,
                                           const std::optional<RowMatrix>& smoothed) {
  if (data.n_points() != cfg.n_points || data.n_replicates() != cfg.replicates)
    throw ValidationError("dataset shape does not match the config");
  if (!cfg.is_ode()) {
    const RowMatrix x = Eigen::Map<const RowMatrix>(data.times.data(), static_cast<Eigen::Index>(data.times.size()), 1);
    return std::make_shared<PolyNetRegressionModel>(cfg.arch(), x, data.replicates[0]);
  }
  if (cfg.smoothing && !smoothed) throw ValidationError("smoothing is enabled but no smoothed series was given");
  std::vector<TrajectoryBatchSet> sets;
  for (std::size_t r = 0; r < data.n_replicates(); ++r)
    sets.push_back(make_batches(data.times, data.replicates[r], cfg.window,
                                cfg.smoothing ? smoothed : std::nullopt, r));
  return std::make_shared<NeuralOdeModel>(cfg.arch(), concat_batches(sets), cfg.known_form(),
                                          IntegrateOptions{cfg.substeps});
}

MapResult train(const ExperimentConfig& cfg, const std::shared_ptr<ResidualModel>& model) {
  RngStream rng = stage_rng(cfg, kInitStream);
  const ParamVector theta0 = init_params(cfg.arch(), rng);
  LogJointSpec spec{model, cfg.alpha, 1.0, true};
  AdamOptions opts;
  opts.lr = cfg.lr;
  opts.epochs = cfg.epochs;
  opts.rel_tol = cfg.rel_tol;
  opts.patience = cfg.patience;
  return train_map(spec, theta0.values(), opts);
}

PosteriorRecord infer(const ExperimentConfig& cfg, const NoisyDataset& data,
                      const std::shared_ptr<ResidualModel>& model, const MapResult& map) {
  PosteriorRecord rec;
  rec.method = cfg.method;
  rec.alpha = cfg.alpha;
  RngStream rng = stage_rng(cfg, kInferStream);

  if (cfg.method == "blr") {
    const RowMatrix& y = data.replicates.at(0);
    const BlrResult blr = bayesian_linear_regression(vandermonde(data.times, cfg.degree), y.col(0));
    rec.theta_star = blr.posterior.mean;
    rec.gaussian = blr.posterior;
    rec.beta2 = blr.beta2;
    for (std::size_t k = 0; k <= cfg.degree; ++k) {
      Monomial m(1, static_cast<int>(k));
      rec.terms.emplace_back(0, m);
    }
    if (blr.degenerate) rec.warnings.push_back("residual variance is zero; posterior collapsed to a point");
    return rec;
  }

  if (cfg.method == "abc") {
    const BenchmarkModel bm = benchmark(cfg.model);
    rec.terms = form_terms(bm.truth);
    const std::size_t dim = bm.dim;
    const auto terms = rec.terms;
    const std::vector<double> times = data.times;
    const std::vector<double> y0 = bm.initial_state;
    const IntegrateOptions opts{cfg.substeps};
    Simulator sim = [terms, times, y0, dim, opts](const Eigen::VectorXd& c) {
      const PolynomialForm f = form_from_terms(terms, std::span<const double>(c.data(), terms.size()), dim);
      return integrate(polynomial_system(f), y0, times.front(), times, opts);
    };
    const auto p = static_cast<Eigen::Index>(terms.size());
    BoxPrior prior{Eigen::VectorXd::Constant(p, cfg.abc_prior_lo), Eigen::VectorXd::Constant(p, cfg.abc_prior_hi)};
    AbcOptions abc;
    abc.n_particles = cfg.abc_particles;
    abc.n_rounds = cfg.abc_rounds;
    abc.quantile = cfg.abc_quantile;
    abc.max_simulations_per_round = cfg.abc_max_simulations;
    SampleSet set = abc_smc(sim, prior, data.replicates, abc, rng);
    rec.theta_star = set.mean();
    rec.warnings = set.warnings;
    rec.samples = std::move(set);
    rec.beta2 = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }

  LogJointSpec spec{model, cfg.alpha, map.beta2, false};
  rec.theta_star = map.theta;
  rec.beta2 = map.beta2;
  const std::span<const double> theta(map.theta.data(), static_cast<std::size_t>(map.theta.size()));

  if (cfg.method == "laplace") {
    LaplaceOptions opts;
    opts.fisher = parse_fisher_method(cfg.laplace_fisher);
    opts.invert = parse_inverse_method(cfg.laplace_inverse);
    opts.rcond = cfg.laplace_rcond;
    opts.newton_steps = cfg.laplace_newton_steps;
    LaplaceResult lap = laplace_posterior(spec, theta, opts);
    rec.theta_star = lap.posterior.mean;
    rec.gaussian = std::move(lap.posterior);
    rec.warnings = std::move(lap.warnings);
  } else if (cfg.method == "hmc") {
    HmcOptions opts;
    opts.step_size = cfg.hmc_step_size;
    opts.n_leapfrog = cfg.hmc_leapfrog;
    opts.n_warmup = cfg.hmc_warmup;
    opts.n_samples = cfg.hmc_samples;
    opts.jitter = cfg.hmc_jitter;
    SampleSet set = hmc_sample(spec.log_joint_density(), theta, opts, rng);
    rec.warnings = set.warnings;
    rec.samples = std::move(set);
  } else if (cfg.method == "nuts") {
    NutsOptions opts;
    opts.n_warmup = cfg.nuts_warmup;
    opts.n_samples = cfg.nuts_samples;
    opts.max_depth = cfg.nuts_max_depth;
    opts.target_accept = cfg.nuts_target_accept;
    opts.dense_metric = cfg.nuts_dense_metric;
    SampleSet set = nuts_sample(spec.log_joint_density(), theta, opts, rng);
    rec.warnings = set.warnings;
    rec.samples = std::move(set);
  } else if (cfg.method == "vi") {
    ViOptions opts;
    opts.n_steps = cfg.vi_steps;
    opts.n_mc = cfg.vi_mc;
    opts.lr = cfg.vi_lr;
    opts.final_lr_fraction = cfg.vi_final_lr_fraction;
    opts.n_eval = cfg.vi_eval;
    ViResult vi = vi_fit(spec, VariationalFamily::isotropic(map.theta, cfg.vi_init_sd), opts, rng);
    if (vi.kept_initial) rec.warnings.push_back("ELBO did not improve; the initial variational family was kept");
    rec.gaussian = vi.q.to_gaussian();
  } else {
    throw ValidationError("unknown inference method '" + cfg.method + "'");
  }
  return rec;
}

CoefficientPosterior expand(const ExperimentConfig& cfg, const PosteriorRecord& post) {
  RngStream rng = stage_rng(cfg, kExpandStream);
  if (!post.terms.empty()) return direct_coefficients(cfg, post, rng);
  CoefficientPosterior out = post.gaussian ? coefficient_posterior(*post.gaussian, cfg.arch(), cfg.n_mc, rng)
                                           : coefficient_posterior(post.samples.value(), cfg.arch(), cfg.n_mc, rng);
  out.provenance.source = post.method + (post.gaussian ? "/" + to_string(post.gaussian->source) : std::string());
  out.provenance.seed = cfg.seed;
  return out;
}

PredictiveBands predict(const ExperimentConfig& cfg, const CoefficientPosterior& coeffs) {
  const std::vector<double> times = prediction_times(cfg);
  const std::size_t n = std::min(cfg.n_pred, coeffs.n_mc());
  const RowMatrix draws = coeffs.samples.topRows(static_cast<Eigen::Index>(n));
  const auto keys = coeffs.keys;
  const BenchmarkModel bm = benchmark(cfg.model);

  if (!cfg.is_ode()) {
    // Static regression: quantiles of the fitted polynomial at each input.
    PredictiveBands out;
    out.times = times;
    const auto T = static_cast<Eigen::Index>(times.size());
    for (RowMatrix* m : {&out.mean, &out.lo95, &out.hi95, &out.lo9975, &out.hi9975}) m->resize(T, 1);
    std::vector<double> col(n);
    for (Eigen::Index k = 0; k < T; ++k) {
      const double x = times[static_cast<std::size_t>(k)];
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < keys.size(); ++j)
          v += draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * std::pow(x, keys[j].second[0]);
        s += (col[i] = v);
      }
      out.mean(k, 0) = s / static_cast<double>(n);
      out.lo95(k, 0) = quantile(col, 0.025);
      out.hi95(k, 0) = quantile(col, 0.975);
      out.lo9975(k, 0) = quantile(col, 0.00125);
      out.hi9975(k, 0) = quantile(col, 0.99875);
    }
    out.n_used = n;
    return out;
  }

  // Network draws add to the fixed known part; ABC draws are the full model.
  const PolynomialForm base = (coeffs.from_network && cfg.known_form()) ? *cfg.known_form()
                                                            : PolynomialForm(bm.dim, Polynomial(bm.dim));
  auto make = [&](const Eigen::VectorXd& c) {
    PolynomialForm f = base;
    for (std::size_t j = 0; j < keys.size(); ++j) f[keys[j].first].add_term(keys[j].second, c[static_cast<Eigen::Index>(j)]);
    return polynomial_system(f);
  };
  return predictive_bands(make, draws, bm.initial_state, times, IntegrateOptions{cfg.predict_substeps});
}

RowMatrix truth_at(const ExperimentConfig& cfg, std::span<const double> times) {
  const BenchmarkModel bm = benchmark(cfg.model);
  if (!cfg.is_ode()) {
    RowMatrix out(static_cast<Eigen::Index>(times.size()), 1);
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double x = times[k];
      out(static_cast<Eigen::Index>(k), 0) = bm.truth[0](std::span<const double>(&x, 1));
    }
    return out;
  }
  return reference_trajectory(polynomial_system(bm.truth), bm.initial_state, times).trajectory;
}

std::vector<CoefficientSummary> summarize(const ExperimentConfig& cfg, const CoefficientPosterior& coeffs) {
  // ABC and BLR estimate the full model; the network only the target remainder.
  const PolynomialForm truth = coeffs.from_network ? cfg.target_form() : benchmark(cfg.model).truth;
  std::vector<CoefficientSummary> out;
  for (const auto& [eq, m] : coeffs.keys) {
    const std::vector<double> s = coeffs.coefficient_samples(eq, m);
    CoefficientSummary row;
    row.output = eq;
    row.monomial = m;
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(s.size());
    double ss = 0.0;
    for (double v : s) ss += (v - mean) * (v - mean);
    row.mean = mean;
    row.sd = s.size() > 1 ? std::sqrt(ss / static_cast<double>(s.size() - 1)) : 0.0;
    row.lo997 = quantile(s, 0.0015);
    row.hi997 = quantile(s, 0.9985);
    row.truth = eq < truth.size() ? truth[eq].coeff(m) : 0.0;
    out.push_back(std::move(row));
  }
  return out;
}

std::string report(const ExperimentConfig& cfg, const PosteriorRecord& post, const CoefficientPosterior& coeffs,
                   const PredictiveBands& bands) {
  std::ostringstream os;
  char line[256];
  os << "model: " << to_string(cfg.model) << "\n";
  os << "method: " << post.method << "\n";
  os << "seed: " << cfg.seed << "\n";
  std::snprintf(line, sizeof line, "noise variance (beta^2): %.6g\n", post.beta2);
  os << line;
  os << "coefficient draws: " << coeffs.n_mc() << "\n";
  if (!cfg.missing_terms.empty()) os << "known part fixed; learned terms are compared with: " << cfg.missing_terms << "\n";
  for (const auto& w : post.warnings) os << "warning: " << w << "\n";
  for (const auto& w : coeffs.provenance.warnings) os << "warning: " << w << "\n";
  os << "\n";
  std::snprintf(line, sizeof line, "%-3s %-12s %12s %12s %26s %10s %s\n", "eq", "monomial", "mean", "sd",
                "99.7% interval", "truth", "covered");
  os << line;
  for (const auto& r : summarize(cfg, coeffs)) {
    char interval[64];
    std::snprintf(interval, sizeof interval, "[%.5g, %.5g]", r.lo997, r.hi997);
    std::snprintf(line, sizeof line, "%-3zu %-12s %12.5g %12.5g %26s %10.5g %s\n", r.output,
                  monomial_name(r.monomial).c_str(), r.mean, r.sd, interval, r.truth,
                  r.lo997 <= r.truth && r.truth <= r.hi997 ? "yes" : "no");
    os << line;
  }
  if (!bands.times.empty()) {
    const RowMatrix truth = truth_at(cfg, bands.times);
    std::size_t inside_train = 0, total_train = 0, inside_all = 0;
    for (Eigen::Index k = 0; k < truth.rows(); ++k)
      for (Eigen::Index j = 0; j < truth.cols(); ++j) {
        const bool in = bands.lo95(k, j) <= truth(k, j) && truth(k, j) <= bands.hi95(k, j);
        inside_all += in;
        if (bands.times[static_cast<std::size_t>(k)] <= cfg.t_end + 1e-12) {
          inside_train += in;
          ++total_train;
        }
      }
    os << "\npredictive draws used: " << bands.n_used << ", blown up: " << bands.n_failed << "\n";
    std::snprintf(line, sizeof line, "truth inside 95%% band: %.1f%% over the training span, %.1f%% over t <= %.6g\n",
                  100.0 * static_cast<double>(inside_train) / static_cast<double>(std::max<std::size_t>(total_train, 1)),
                  100.0 * static_cast<double>(inside_all) / static_cast<double>(truth.size()), bands.times.back());
    os << line;
  }
  return os.str();
}

}  // namespace bpode::pipeline
