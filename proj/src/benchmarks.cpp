#include "bpode/benchmarks.hpp"

#include <cmath>
#include <sstream>

#include "bpode/rng.hpp"

namespace bpode {

std::string to_string(ModelId id) {
  switch (id) {
    case ModelId::CubicStatic: return "cubic_static";
    case ModelId::LotkaVolterra: return "lotka_volterra";
    case ModelId::DampedOscillator: return "damped_oscillator";
    case ModelId::Lorenz: return "lorenz";
  }
  return "unknown";
}

ModelId parse_model_id(const std::string& name) {
  for (ModelId id : {ModelId::CubicStatic, ModelId::LotkaVolterra, ModelId::DampedOscillator, ModelId::Lorenz}) {
    if (to_string(id) == name) return id;
  }
  throw ValidationError("unknown model id '" + name + "'");
}

namespace {

Polynomial poly(std::size_t d, std::initializer_list<std::pair<Monomial, double>> terms) {
  Polynomial p(d);
  for (const auto& [m, c] : terms) p.add_term(m, c);
  return p;
}

}  // namespace

BenchmarkModel benchmark(ModelId id) {
  BenchmarkModel m;
  m.id = id;
  switch (id) {
    case ModelId::CubicStatic:
      m.dim = 1;
      m.truth = {poly(1, {{{0}, 1.0}, {{1}, 1.0}, {{2}, 2.0}, {{3}, 4.0}})};
      m.n_points = 200;
      m.t_start = -1.25;
      m.t_end = 1.25;
      m.noise_sd = 3.0;
      m.n_replicates = 1;
      m.degree = 3;
      break;
    case ModelId::LotkaVolterra:
      m.dim = 2;
      m.truth = {poly(2, {{{1, 0}, 1.5}, {{1, 1}, -1.0}}), poly(2, {{{0, 1}, -3.0}, {{1, 1}, 1.0}})};
      m.initial_state = {1.0, 1.0};
      m.n_points = 100;
      m.t_end = 10.0;
      m.noise_sd = 2.0;
      m.n_replicates = 10;
      m.window_length = 12;
      m.degree = 2;
      break;
    case ModelId::DampedOscillator:
      m.dim = 2;
      m.truth = {poly(2, {{{3, 0}, -0.1}, {{0, 3}, -2.0}}), poly(2, {{{3, 0}, 2.0}, {{0, 3}, -0.1}})};
      m.initial_state = {1.0, 1.0};
      m.n_points = 500;
      m.t_end = 25.0;
      m.noise_sd = 0.6;
      m.n_replicates = 10;
      m.window_length = 13;
      m.degree = 3;
      break;
    case ModelId::Lorenz: {
      const double sigma = 10.0, r = 28.0, b = 8.0 / 3.0;
      m.dim = 3;
      m.truth = {poly(3, {{{0, 1, 0}, sigma}, {{1, 0, 0}, -sigma}}),
                 poly(3, {{{1, 0, 0}, r}, {{0, 1, 0}, -1.0}, {{1, 0, 1}, -1.0}}),
                 poly(3, {{{1, 1, 0}, 1.0}, {{0, 0, 1}, -b}})};
      m.initial_state = {1.0, 1.0, 1.0};
      m.n_points = 900;
      m.t_end = 30.0;
      m.noise_sd = 2.0;
      m.n_replicates = 10;
      m.window_length = 2;
      m.degree = 2;
      break;
    }
  }
  return m;
}

std::vector<double> eval_rhs(const BenchmarkModel& model, std::span<const double> y) {
  if (y.size() != model.dim) throw ValidationError("eval_rhs: state has wrong dimension");
  std::vector<double> out;
  for (const auto& p : model.truth) out.push_back(p(y));
  return out;
}

std::vector<double> uniform_grid(double start, double end, std::size_t n) {
  if (n < 2) throw ValidationError("grid needs at least 2 points");
  std::vector<double> t(n);
  const double step = (end - start) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) t[i] = start + step * static_cast<double>(i);
  return t;
}

ReferenceSolve reference_trajectory(const OdeSystem& sys, std::span<const double> y0, std::span<const double> times,
                                    std::size_t substeps) {
  IntegrateOptions coarse{substeps / 2}, mid{substeps}, fine{substeps * 2};
  if (coarse.substeps < 1) throw ValidationError("reference_trajectory: substeps must be >= 2");
  const RowMatrix a = integrate(sys, y0, times[0], times, coarse);
  const RowMatrix b = integrate(sys, y0, times[0], times, mid);
  const RowMatrix c = integrate(sys, y0, times[0], times, fine);
  const double e_coarse = (a - b).cwiseAbs().maxCoeff();
  const double e_fine = (b - c).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  ReferenceSolve out;
  out.trajectory = b;
  out.convergence_ratio = e_fine > 0.0 ? e_coarse / e_fine : INFINITY;
  // Below ~1e-10 relative the differences are rounding noise and the ratio is meaningless.
  const bool at_rounding_level = e_coarse <= 1e-10 * scale;
  if (!at_rounding_level && out.convergence_ratio < 12.0) {
    std::ostringstream msg;
    msg << "reference solve failed the step-halving check (ratio " << out.convergence_ratio << ")";
    throw NumericError(msg.str());
  }
  return out;
}

NoisyDataset generate_dataset(const BenchmarkModel& model, std::size_t n_points, double t_start, double t_end,
                              double noise_sd, std::size_t n_replicates, std::uint64_t seed) {
  if (model.id == ModelId::CubicStatic) throw ValidationError("cubic_static has no ODE; use cubic_static_data");
  if (n_points < 2) throw ValidationError("n_points must be >= 2");
  if (n_replicates < 1) throw ValidationError("n_replicates must be >= 1");
  if (noise_sd < 0.0) throw ValidationError("noise_sd must be >= 0");
  NoisyDataset ds;
  ds.model = model.id;
  ds.times = uniform_grid(t_start, t_end, n_points);
  ds.noise_sd = noise_sd;
  ds.seed = seed;
  const RowMatrix truth =
      reference_trajectory(polynomial_system(model.truth), model.initial_state, ds.times).trajectory;
  RngStream root(seed);
  for (std::size_t r = 0; r < n_replicates; ++r) {
    RngStream rng = root.substream(r);
    RowMatrix obs = truth;
    if (noise_sd > 0.0) {
      for (Eigen::Index i = 0; i < obs.rows(); ++i)
        for (Eigen::Index j = 0; j < obs.cols(); ++j) obs(i, j) += noise_sd * rng.normal();
    }
    ds.replicates.push_back(std::move(obs));
  }
  ds.truth = EvaluationOnly<RowMatrix>(truth);
  return ds;
}

CubicData cubic_static_data(std::size_t n_points, std::pair<double, double> x_range, double noise_var,
                            std::uint64_t seed) {
  if (n_points < 2) throw ValidationError("n_points must be >= 2");
  if (noise_var < 0.0) throw ValidationError("noise_var must be >= 0");
  CubicData d;
  d.x = uniform_grid(x_range.first, x_range.second, n_points);
  const Polynomial f = benchmark(ModelId::CubicStatic).truth[0];
  RngStream rng(seed);
  const double sd = std::sqrt(noise_var);
  for (double x : d.x) {
    const double clean = f(std::span<const double>(&x, 1));
    d.clean.push_back(clean);
    d.y.push_back(noise_var > 0.0 ? clean + sd * rng.normal() : clean);
  }
  return d;
}

PolynomialForm remove_terms(const PolynomialForm& form, const std::vector<std::pair<std::size_t, Monomial>>& terms) {
  PolynomialForm out = form;
  for (const auto& [eq, m] : terms) {
    if (eq >= out.size()) throw ValidationError("remove_terms: equation index out of range");
    out[eq].add_term(m, -out[eq].coeff(m));
  }
  return out;
}

OdeSystem hybrid_rhs(const PolynomialForm& known, const OdeSystem& net) { return hybrid_system(known, net); }

}  // namespace bpode
