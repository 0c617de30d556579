#include "bpode/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bpode/errors.hpp"

namespace bpode {

std::optional<std::size_t> CoefficientPosterior::column(std::size_t output, const Monomial& m) const {
  for (std::size_t k = 0; k < keys.size(); ++k)
    if (keys[k].first == output && keys[k].second == m) return k;
  return std::nullopt;
}

std::vector<double> CoefficientPosterior::coefficient_samples(std::size_t output, const Monomial& m) const {
  const auto k = column(output, m);
  if (!k) throw ValidationError("no coefficient " + monomial_name(m) + " for output " + std::to_string(output));
  std::vector<double> out(n_mc());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(*k));
  return out;
}

PolynomialForm CoefficientPosterior::form(std::size_t i) const {
  PolynomialForm out(arch.n_outputs, Polynomial(arch.n_inputs));
  for (std::size_t k = 0; k < keys.size(); ++k)
    out[keys[k].first].add_term(keys[k].second, samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
  return out;
}

CoefficientPosterior expand_draws(const RowMatrix& thetas, const PolyNetArch& arch) {
  arch.validate();
  if (static_cast<std::size_t>(thetas.cols()) != count_params(arch))
    throw ValidationError("posterior dimension " + std::to_string(thetas.cols()) + " does not match " +
                          std::to_string(count_params(arch)) + " network parameters");
  CoefficientPosterior out;
  out.arch = arch;
  for (std::size_t o = 0; o < arch.n_outputs; ++o)
    for (auto& m : monomial_basis(arch.n_inputs, arch.degree)) out.keys.emplace_back(o, std::move(m));
  out.thetas = thetas;
  out.samples.setZero(thetas.rows(), static_cast<Eigen::Index>(out.keys.size()));
  const std::size_t per_output = out.keys.size() / arch.n_outputs;
  const auto basis = monomial_basis(arch.n_inputs, arch.degree);
  for (Eigen::Index i = 0; i < thetas.rows(); ++i) {
    const PolynomialForm form = expand(std::span<const double>(thetas.row(i).data(), static_cast<std::size_t>(thetas.cols())), arch);
    for (std::size_t o = 0; o < arch.n_outputs; ++o)
      for (std::size_t b = 0; b < basis.size(); ++b)
        out.samples(i, static_cast<Eigen::Index>(o * per_output + b)) = form[o].coeff(basis[b]);
  }
  out.provenance.n_mc = static_cast<std::size_t>(thetas.rows());
  return out;
}

CoefficientPosterior coefficient_posterior(const GaussianPosterior& post, const PolyNetArch& arch, std::size_t n_mc,
                                           RngStream& rng) {
  if (n_mc == 0) throw ValidationError("n_mc must be positive");
  if (post.dim() != count_params(arch)) throw ValidationError("posterior dimension does not match the network");
  const std::uint64_t seed = rng.seed();
  bool clipped = false;
  const RowMatrix draws = sample_gaussian(post, n_mc, rng, &clipped);
  auto out = expand_draws(draws, arch);
  out.provenance.source = to_string(post.source);
  out.provenance.seed = seed;
  if (clipped) out.provenance.warnings.push_back("covariance was not PSD; negative eigenvalues clipped to 0");
  return out;
}

CoefficientPosterior coefficient_posterior(const SampleSet& set, const PolyNetArch& arch, std::size_t n_mc,
                                           RngStream& rng) {
  if (n_mc == 0) throw ValidationError("n_mc must be positive");
  if (set.dim() != count_params(arch)) throw ValidationError("sample dimension does not match the network");
  const std::uint64_t seed = rng.seed();
  auto out = expand_draws(resample_draws(set, n_mc, rng), arch);
  out.provenance.source = to_string(set.method);
  out.provenance.seed = seed;
  return out;
}

double silverman_bandwidth(std::span<const double> samples) {
  const auto n = static_cast<double>(samples.size());
  if (samples.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  return 1.06 * std::sqrt(ss / (n - 1.0)) * std::pow(n, -0.2);
}

Kde kde(std::span<const double> samples, std::span<const double> grid) {
  if (samples.empty()) throw ValidationError("kde: no samples");
  Kde out;
  out.grid.assign(grid.begin(), grid.end());
  out.bandwidth = silverman_bandwidth(samples);
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(samples.size());
  if (!(out.bandwidth > 0.0) || !std::isfinite(out.bandwidth)) {
    out.spike = true;
    out.spike_location = mean;
    out.bandwidth = 0.0;
    return out;
  }
  const double h = out.bandwidth;
  const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  out.density.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (double v : samples) {
      const double u = (grid[g] - v) / h;
      s += std::exp(-0.5 * u * u);
    }
    out.density[g] = s * norm;
  }
  return out;
}

std::vector<double> kde_grid(std::span<const double> samples, std::size_t n, double pad) {
  if (samples.empty() || n < 2) throw ValidationError("kde_grid: need samples and at least 2 points");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  double h = silverman_bandwidth(samples);
  if (!(h > 0.0)) h = std::max(1e-12, 1e-6 * std::abs(*lo_it));
  const double lo = *lo_it - pad * h, hi = *hi_it + pad * h;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return grid;
}

}  // namespace bpode
