#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpode/odeint.hpp"
#include "bpode/symexpand.hpp"

namespace bpode {

enum class ModelId { CubicStatic, LotkaVolterra, DampedOscillator, Lorenz };

std::string to_string(ModelId id);
ModelId parse_model_id(const std::string& name);

// Ground-truth system with the settings used to generate its data.
struct BenchmarkModel {
  ModelId id = ModelId::LotkaVolterra;
  std::size_t dim = 0;
  PolynomialForm truth;  // one polynomial per state equation (cubic_static: f(x))
  std::vector<double> initial_state;
  std::size_t n_points = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  double noise_sd = 0.0;
  std::size_t n_replicates = 1;
  std::size_t window_length = 2;
  std::size_t degree = 1;  // polynomial degree of the true right-hand side
};

BenchmarkModel benchmark(ModelId id);

/// True right-hand side at a state.
std::vector<double> eval_rhs(const BenchmarkModel& model, std::span<const double> y);

// Wrapper for data that evaluation code may read but training paths must not.
template <typename T>
class EvaluationOnly {
 public:
  EvaluationOnly() = default;
  explicit EvaluationOnly(T value) : value_(std::move(value)) {}
  const T& reveal_for_evaluation() const { return value_; }

 private:
  T value_{};
};

struct NoisyDataset {
  ModelId model = ModelId::LotkaVolterra;
  std::vector<double> times;
  std::vector<RowMatrix> replicates;  // each n_points x d
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  EvaluationOnly<RowMatrix> truth;

  std::size_t n_points() const { return times.size(); }
  std::size_t dim() const { return replicates.empty() ? 0 : static_cast<std::size_t>(replicates[0].cols()); }
  std::size_t n_replicates() const { return replicates.size(); }
};

std::vector<double> uniform_grid(double start, double end, std::size_t n);

struct ReferenceSolve {
  RowMatrix trajectory;
  double convergence_ratio = 0.0;  // error(h) / error(h/2) from step halving
};

/// High-accuracy fixed-step solve, validated by a step-halving check (ratio >= 12,
/// or differences already at rounding level). Throws NumericError otherwise.
ReferenceSolve reference_trajectory(const OdeSystem& sys, std::span<const double> y0, std::span<const double> times,
                                    std::size_t substeps = 20);

/// Noisy replicates of the model's true trajectory. Replicates share the true
/// trajectory and differ only in their noise draws.
NoisyDataset generate_dataset(const BenchmarkModel& model, std::size_t n_points, double t_start, double t_end,
                              double noise_sd, std::size_t n_replicates, std::uint64_t seed);

struct CubicData {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> clean;
};

/// y = 1 + x + 2x^2 + 4x^3 + N(0, noise_var) on a uniform grid.
CubicData cubic_static_data(std::size_t n_points = 200, std::pair<double, double> x_range = {-1.25, 1.25},
                            double noise_var = 9.0, std::uint64_t seed = 989);

/// The true form with the listed (equation, monomial) terms removed.
PolynomialForm remove_terms(const PolynomialForm& form, const std::vector<std::pair<std::size_t, Monomial>>& terms);

/// dy/dt = known(y) + net(y); gradients flow only through the network.
OdeSystem hybrid_rhs(const PolynomialForm& known, const OdeSystem& net);

}  // namespace bpode
