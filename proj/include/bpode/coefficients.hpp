#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bpode/posterior.hpp"
#include "bpode/symexpand.hpp"

namespace bpode {

struct CoefficientProvenance {
  std::string source;  // laplace_pinv, laplace_diag, variational, closed, hmc, nuts, abc
  std::size_t n_mc = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Monte-Carlo posterior over polynomial coefficients. Row i of `samples` and of
// `thetas` come from the same parameter draw, so coefficients within a row are
// jointly consistent.
struct CoefficientPosterior {
  PolyNetArch arch;
  std::vector<std::pair<std::size_t, Monomial>> keys;  // (output, monomial), one per column
  RowMatrix samples;                                    // n_mc x keys.size()
  RowMatrix thetas;                                     // n_mc x n_params
  CoefficientProvenance provenance;
  bool from_network = true;  // false when the draws are full-model coefficients (BLR, ABC)

  std::size_t n_mc() const { return static_cast<std::size_t>(samples.rows()); }
  std::optional<std::size_t> column(std::size_t output, const Monomial& m) const;
  std::vector<double> coefficient_samples(std::size_t output, const Monomial& m) const;
  /// The expanded form of draw i.
  PolynomialForm form(std::size_t i) const;
};

CoefficientPosterior coefficient_posterior(const GaussianPosterior& post, const PolyNetArch& arch, std::size_t n_mc,
                                           RngStream& rng);
/// Weighted sets (ABC) are resampled by weight; unweighted ones uniformly.
CoefficientPosterior coefficient_posterior(const SampleSet& set, const PolyNetArch& arch, std::size_t n_mc,
                                           RngStream& rng);
/// Columns from a fixed set of parameter draws.
CoefficientPosterior expand_draws(const RowMatrix& thetas, const PolyNetArch& arch);

struct Kde {
  std::vector<double> grid;
  std::vector<double> density;  // empty when spike
  double bandwidth = 0.0;
  bool spike = false;
  double spike_location = 0.0;
};

/// Silverman bandwidth 1.06 * sd * n^(-1/5).
double silverman_bandwidth(std::span<const double> samples);
/// Gaussian-kernel density on the given grid. Fewer than two samples or zero
/// spread give a spike at the sample mean instead.
Kde kde(std::span<const double> samples, std::span<const double> grid);
/// Evenly spaced grid covering the samples padded by `pad` bandwidths.
std::vector<double> kde_grid(std::span<const double> samples, std::size_t n = 512, double pad = 6.0);

}  // namespace bpode
