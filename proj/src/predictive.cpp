#include <algorithm>
#include <cmath>

#include "bpode/errors.hpp"
#include "bpode/inference.hpp"

namespace bpode {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

PredictiveBands predictive_bands(const std::function<OdeSystem(const Eigen::VectorXd&)>& make_system,
                                 const RowMatrix& draws, std::span<const double> y0, std::span<const double> times,
                                 const IntegrateOptions& opts) {
  if (times.empty()) throw ValidationError("predictive: empty time grid");
  const auto T = static_cast<Eigen::Index>(times.size());
  const auto d = static_cast<Eigen::Index>(y0.size());
  std::vector<RowMatrix> runs;
  PredictiveBands out;
  out.times.assign(times.begin(), times.end());
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    const Eigen::VectorXd theta = draws.row(i).transpose();
    try {
      RowMatrix traj = integrate(make_system(theta), y0, times[0], times, opts);
      if (!traj.allFinite()) throw NumericError("non-finite trajectory");
      runs.push_back(std::move(traj));
    } catch (const NumericError&) {
      ++out.n_failed;
    }
  }
  if (runs.empty()) throw NumericError("predictive: every posterior draw blew up");
  out.n_used = runs.size();
  for (RowMatrix* m : {&out.mean, &out.lo95, &out.hi95, &out.lo9975, &out.hi9975}) m->resize(T, d);
  std::vector<double> column(runs.size());
  for (Eigen::Index k = 0; k < T; ++k)
    for (Eigen::Index j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < runs.size(); ++r) s += (column[r] = runs[r](k, j));
      out.mean(k, j) = s / static_cast<double>(runs.size());
      out.lo95(k, j) = quantile(column, 0.025);
      out.hi95(k, j) = quantile(column, 0.975);
      out.lo9975(k, j) = quantile(column, 0.00125);
      out.hi9975(k, j) = quantile(column, 0.99875);
    }
  return out;
}

}  // namespace bpode
