#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bpode/autodiff.hpp"
#include "bpode/polynet.hpp"
#include "bpode/symexpand.hpp"

namespace bpode {

// Right-hand side dy/dt = f(t, y), evaluated row-wise on an N x d batch of
// states. Systems built from polynomials are autonomous and ignore t.
struct OdeSystem {
  std::size_t dim = 0;
  bool autonomous = true;
  std::function<Var(Var states, double t)> rhs;
};

/// Polynomial right-hand side with fixed coefficients.
OdeSystem polynomial_system(PolynomialForm form);
/// Network right-hand side with fixed parameter values.
OdeSystem polynet_system(const PolyNetArch& arch, std::vector<double> theta);
/// Network right-hand side differentiable in `theta` (usable only on theta's tape).
OdeSystem polynet_system(const PolyNetArch& arch, Var theta);
/// f_known + f_net; known has one polynomial per state equation.
OdeSystem hybrid_system(PolynomialForm known, OdeSystem net);

// Fehlberg 4(5) coefficients. The 4th-order weights propagate the state; the
// 5th-order weights only feed the error estimate.
namespace rkf45 {
inline constexpr double c[6] = {0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0};
inline constexpr double a[6][5] = {
    {0, 0, 0, 0, 0},
    {1.0 / 4.0, 0, 0, 0, 0},
    {3.0 / 32.0, 9.0 / 32.0, 0, 0, 0},
    {1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0, 0},
    {439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0},
    {-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0}};
inline constexpr double b4[6] = {25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0};
inline constexpr double b5[6] = {16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0};
}  // namespace rkf45

/// One 4th-order Fehlberg step on a tape.
Var rkf4_step(const OdeSystem& sys, Var states, double t, double h);

/// Max-norm difference between the embedded 5th- and 4th-order solutions for one step.
double rkf_error_estimate(const OdeSystem& sys, std::span<const double> y, double t, double h);

struct IntegrateOptions {
  std::size_t substeps = 1;  // internal steps per grid interval
};

/// Fixed-step integration; row k approximates y(ts[k]). Throws NumericError on blow-up.
RowMatrix integrate(const OdeSystem& sys, std::span<const double> y0, double t0, std::span<const double> ts,
                    const IntegrateOptions& opts = {});

/// Differentiable integration of a batch of initial states over a uniform grid.
/// Entry k of the result holds the N x d states after k intervals (entry 0 is y0).
std::vector<Var> integrate_tape(const OdeSystem& sys, Var y0, double t0, double dt, std::size_t n_intervals,
                                const IntegrateOptions& opts = {});

// Stride-1 sliding windows over uniformly spaced series.
struct TrajectoryBatchSet {
  RowMatrix initial_states;              // N_t x d
  Tensor targets;                        // N_t x L x d, observed values
  std::vector<double> start_times;       // N_t
  std::vector<std::size_t> series_index; // which input series each window came from
  double dt = 0.0;
  std::size_t window_length = 0;

  std::size_t n_windows() const { return static_cast<std::size_t>(initial_states.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(initial_states.cols()); }
  double target(std::size_t window, std::size_t step, std::size_t j) const {
    return targets[(window * window_length + step) * dim() + j];
  }
  /// Observed values at step k of every window, N_t x d.
  RowMatrix step_targets(std::size_t k) const;
  /// Window-relative time grid (L points starting at 0).
  std::vector<double> window_times() const;
};

/// Windows of `window_length` consecutive points. Initial states come from
/// `init_overrides` when given: one row per window, or one row per series point
/// (a smoothed series), of which the first N_t rows are used.
TrajectoryBatchSet make_batches(std::span<const double> times, const RowMatrix& observations,
                                std::size_t window_length, const std::optional<RowMatrix>& init_overrides = std::nullopt,
                                std::size_t series_index = 0);

/// Windows of several batch sets concatenated in order.
TrajectoryBatchSet concat_batches(std::span<const TrajectoryBatchSet> sets);

/// Predictions (N_t x L x d) for every window. For autonomous systems row i is
/// bit-identical to integrate(sys, initial_states[i], 0, window_times()).
Tensor integrate_batch(const OdeSystem& sys, const TrajectoryBatchSet& batch, const IntegrateOptions& opts = {});

}  // namespace bpode
