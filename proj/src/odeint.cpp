#include "bpode/odeint.hpp"

#include <cmath>
#include <sstream>

namespace bpode {

OdeSystem polynomial_system(PolynomialForm form) {
  OdeSystem sys;
  sys.dim = form.size();
  sys.rhs = [form = std::move(form)](Var states, double) { return evaluate(form, states); };
  return sys;
}

OdeSystem polynet_system(const PolyNetArch& arch, std::vector<double> theta) {
  if (arch.n_inputs != arch.n_outputs) throw ValidationError("ODE network needs n_inputs == n_outputs");
  if (theta.size() != count_params(arch)) throw ValidationError("ODE network: wrong parameter count");
  OdeSystem sys;
  sys.dim = arch.n_inputs;
  sys.rhs = [arch, theta = Tensor::vector(std::move(theta))](Var states, double) {
    return forward(states.tape().constant(theta), arch, states);
  };
  return sys;
}

OdeSystem polynet_system(const PolyNetArch& arch, Var theta) {
  if (arch.n_inputs != arch.n_outputs) throw ValidationError("ODE network needs n_inputs == n_outputs");
  OdeSystem sys;
  sys.dim = arch.n_inputs;
  sys.rhs = [arch, theta](Var states, double) {
    if (&states.tape() != &theta.tape()) throw ValidationError("network parameters live on another tape");
    return forward(theta, arch, states);
  };
  return sys;
}

OdeSystem hybrid_system(PolynomialForm known, OdeSystem net) {
  if (known.size() != net.dim) throw ValidationError("hybrid: known form and network dimensions differ");
  OdeSystem sys;
  sys.dim = net.dim;
  sys.autonomous = net.autonomous;
  sys.rhs = [known = std::move(known), net = std::move(net)](Var states, double t) {
    return add(evaluate(known, states), net.rhs(states, t));
  };
  return sys;
}

namespace {

Var stage_input(Var y, const std::vector<Var>& k, std::size_t stage, double h) {
  std::vector<Var> terms{y};
  std::vector<double> coeffs{1.0};
  for (std::size_t j = 0; j < stage; ++j) {
    terms.push_back(k[j]);
    coeffs.push_back(h * rkf45::a[stage][j]);
  }
  return lincomb(terms, coeffs);
}

std::vector<Var> rkf_stages(const OdeSystem& sys, Var y, double t, double h, std::size_t n_stages) {
  std::vector<Var> k;
  k.push_back(sys.rhs(y, t));
  for (std::size_t s = 1; s < n_stages; ++s) {
    k.push_back(sys.rhs(stage_input(y, k, s, h), t + rkf45::c[s] * h));
  }
  return k;
}

}  // namespace

Var rkf4_step(const OdeSystem& sys, Var states, double t, double h) {
  const auto k = rkf_stages(sys, states, t, h, 5);
  std::vector<Var> terms{states};
  std::vector<double> coeffs{1.0};
  for (std::size_t j = 0; j < 5; ++j) {
    if (rkf45::b4[j] == 0.0) continue;
    terms.push_back(k[j]);
    coeffs.push_back(h * rkf45::b4[j]);
  }
  return lincomb(terms, coeffs);
}

double rkf_error_estimate(const OdeSystem& sys, std::span<const double> y, double t, double h) {
  Tape tape;
  Var y0 = tape.constant(Tensor({1, y.size()}, std::vector<double>(y.begin(), y.end())));
  const auto k = rkf_stages(sys, y0, t, h, 6);
  double err = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double diff = 0.0;
    for (std::size_t j = 0; j < 6; ++j) diff += (rkf45::b5[j] - rkf45::b4[j]) * k[j].value()[i];
    err = std::max(err, std::abs(h * diff));
  }
  return err;
}

namespace {

void check_increasing(std::span<const double> ts) {
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i] > ts[i - 1])) throw ValidationError("integrate: time grid must be strictly increasing");
  }
}

[[noreturn]] void blow_up(double t) {
  std::ostringstream msg;
  msg << "integration blow-up: non-finite state at t=" << t;
  throw NumericError(msg.str());
}

// Advances a batch of states across one interval of length `span` using
// value-only tapes. Stops at the first non-finite state and reports its time.
Tensor advance(const OdeSystem& sys, const Tensor& states, double t, double span, std::size_t steps,
               std::optional<double>& failed_at) {
  Tensor cur = states;
  const double h = span / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    Tape tape;
    Var y = tape.constant(cur);
    const double ts = t + static_cast<double>(s) * h;
    cur = rkf4_step(sys, y, ts, h).value();
    if (!cur.all_finite()) {
      failed_at = ts + h;
      break;
    }
  }
  return cur;
}

Tensor advance(const OdeSystem& sys, const Tensor& states, double t, double span, std::size_t steps) {
  std::optional<double> failed_at;
  Tensor out = advance(sys, states, t, span, steps, failed_at);
  if (failed_at) blow_up(*failed_at);
  return out;
}

}  // namespace

RowMatrix integrate(const OdeSystem& sys, std::span<const double> y0, double t0, std::span<const double> ts,
                    const IntegrateOptions& opts) {
  if (y0.size() != sys.dim) throw ValidationError("integrate: initial state has wrong dimension");
  if (ts.empty()) throw ValidationError("integrate: empty time grid");
  if (opts.substeps < 1) throw ValidationError("integrate: substeps must be >= 1");
  if (t0 > ts[0]) throw ValidationError("integrate: t0 after first grid point");
  check_increasing(ts);
  for (double v : y0) {
    if (!std::isfinite(v)) throw ValidationError("integrate: non-finite initial state");
  }
  const std::size_t d = sys.dim;
  RowMatrix out(static_cast<Eigen::Index>(ts.size()), static_cast<Eigen::Index>(d));
  Tensor cur({1, d}, std::vector<double>(y0.begin(), y0.end()));
  if (ts[0] > t0) {
    const double lead = ts[0] - t0;
    std::size_t intervals = 1;
    if (ts.size() > 1) intervals = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(lead / (ts[1] - ts[0]) - 1e-9)));
    cur = advance(sys, cur, t0, lead, intervals * opts.substeps);
  }
  out.row(0) = cur.mat();
  for (std::size_t k = 1; k < ts.size(); ++k) {
    cur = advance(sys, cur, ts[k - 1], ts[k] - ts[k - 1], opts.substeps);
    out.row(static_cast<Eigen::Index>(k)) = cur.mat();
  }
  return out;
}

std::vector<Var> integrate_tape(const OdeSystem& sys, Var y0, double t0, double dt, std::size_t n_intervals,
                                const IntegrateOptions& opts) {
  if (y0.cols() != sys.dim) throw ValidationError("integrate_tape: state has wrong dimension");
  if (opts.substeps < 1) throw ValidationError("integrate_tape: substeps must be >= 1");
  std::vector<Var> states{y0};
  const double h = dt / static_cast<double>(opts.substeps);
  Var cur = y0;
  for (std::size_t k = 0; k < n_intervals; ++k) {
    for (std::size_t s = 0; s < opts.substeps; ++s) {
      cur = rkf4_step(sys, cur, t0 + static_cast<double>(k) * dt + static_cast<double>(s) * h, h);
    }
    states.push_back(cur);
  }
  return states;
}

RowMatrix TrajectoryBatchSet::step_targets(std::size_t k) const {
  const std::size_t n = n_windows(), d = dim();
  RowMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = target(i, k, j);
  return out;
}

std::vector<double> TrajectoryBatchSet::window_times() const {
  std::vector<double> t(window_length);
  for (std::size_t k = 0; k < window_length; ++k) t[k] = static_cast<double>(k) * dt;
  return t;
}

TrajectoryBatchSet make_batches(std::span<const double> times, const RowMatrix& observations,
                                std::size_t window_length, const std::optional<RowMatrix>& init_overrides,
                                std::size_t series_index) {
  const std::size_t n = times.size();
  if (window_length < 2) throw ValidationError("window length L must be >= 2");
  if (static_cast<std::size_t>(observations.rows()) != n) throw ValidationError("make_batches: times/observations length mismatch");
  if (window_length > n) throw ValidationError("window length L exceeds the number of points");
  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) throw ValidationError("make_batches: times must increase");
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs((times[i] - times[i - 1]) - dt) > 1e-9 * std::abs(dt) + 1e-12 * std::abs(times[i])) {
      throw ValidationError("make_batches: time spacing is not uniform");
    }
  }
  const std::size_t n_windows = n - window_length + 1;
  const std::size_t d = static_cast<std::size_t>(observations.cols());
  if (init_overrides) {
    const auto rows = static_cast<std::size_t>(init_overrides->rows());
    if ((rows != n_windows && rows != n) || static_cast<std::size_t>(init_overrides->cols()) != d) {
      throw ValidationError("make_batches: init_overrides must have one row per window or per point");
    }
  }
  TrajectoryBatchSet b;
  b.dt = dt;
  b.window_length = window_length;
  b.initial_states.resize(static_cast<Eigen::Index>(n_windows), static_cast<Eigen::Index>(d));
  b.targets = Tensor({n_windows, window_length, d});
  for (std::size_t i = 0; i < n_windows; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    b.initial_states.row(row) = init_overrides ? init_overrides->row(row) : observations.row(row);
    b.start_times.push_back(times[i]);
    b.series_index.push_back(series_index);
    for (std::size_t k = 0; k < window_length; ++k)
      for (std::size_t j = 0; j < d; ++j)
        b.targets[(i * window_length + k) * d + j] = observations(static_cast<Eigen::Index>(i + k), static_cast<Eigen::Index>(j));
  }
  return b;
}

TrajectoryBatchSet concat_batches(std::span<const TrajectoryBatchSet> sets) {
  if (sets.empty()) throw ValidationError("concat_batches: nothing to concatenate");
  const auto& first = sets.front();
  std::size_t total = 0;
  for (const auto& s : sets) {
    if (s.window_length != first.window_length || s.dim() != first.dim() ||
        std::abs(s.dt - first.dt) > 1e-9 * std::abs(first.dt)) {
      throw ValidationError("concat_batches: incompatible batch sets");
    }
    total += s.n_windows();
  }
  const std::size_t d = first.dim(), L = first.window_length;
  TrajectoryBatchSet out;
  out.dt = first.dt;
  out.window_length = L;
  out.initial_states.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  out.targets = Tensor({total, L, d});
  std::size_t row = 0;
  for (const auto& s : sets) {
    out.initial_states.middleRows(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(s.n_windows())) = s.initial_states;
    std::copy(s.targets.values().begin(), s.targets.values().end(), out.targets.data() + row * L * d);
    out.start_times.insert(out.start_times.end(), s.start_times.begin(), s.start_times.end());
    out.series_index.insert(out.series_index.end(), s.series_index.begin(), s.series_index.end());
    row += s.n_windows();
  }
  return out;
}

Tensor integrate_batch(const OdeSystem& sys, const TrajectoryBatchSet& batch, const IntegrateOptions& opts) {
  const std::size_t n = batch.n_windows(), L = batch.window_length, d = batch.dim();
  if (d != sys.dim) throw ValidationError("integrate_batch: system and batch dimensions differ");
  Tensor out({n, L, d});
  auto store = [&](std::size_t window, std::size_t k, const double* src) {
    std::copy_n(src, d, out.data() + (window * L + k) * d);
  };
  if (!sys.autonomous) {
    const auto grid = batch.window_times();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> ts(L);
      for (std::size_t k = 0; k < L; ++k) ts[k] = batch.start_times[i] + grid[k];
      RowMatrix y0 = batch.initial_states.row(static_cast<Eigen::Index>(i));
      RowMatrix traj;
      try {
        traj = integrate(sys, std::span<const double>(y0.data(), d), ts[0], ts, opts);
      } catch (const NumericError& e) {
        throw NumericError("window " + std::to_string(i) + ": " + e.what());
      }
      for (std::size_t k = 0; k < L; ++k) store(i, k, traj.row(static_cast<Eigen::Index>(k)).data());
    }
    return out;
  }
  // Autonomous: every window runs on the window-relative grid, so row i is
  // exactly integrate(sys, y0_i, 0, window_times()).
  const auto grid = batch.window_times();
  Tensor cur = Tensor::from_matrix(batch.initial_states);
  for (std::size_t k = 0; k < L; ++k) {
    if (k > 0) {
      std::optional<double> failed_at;
      cur = advance(sys, cur, grid[k - 1], grid[k] - grid[k - 1], opts.substeps, failed_at);
      if (failed_at) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            if (!std::isfinite(cur(i, j))) {
              std::ostringstream msg;
              msg << "integration blow-up in window " << i << " at t=" << batch.start_times[i] + *failed_at;
              throw NumericError(msg.str());
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) store(i, k, cur.data() + i * d);
  }
  return out;
}

}  // namespace bpode
