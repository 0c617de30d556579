#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bpode/benchmarks.hpp"
#include "bpode/coefficients.hpp"
#include "bpode/gpr.hpp"
#include "bpode/inference.hpp"

namespace bpode {

/// A required input artifact of a stage is missing.
class DependencyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Every setting of one experiment. Text form is flat `section.key = value`
// lines; `model` is applied first so the remaining keys override its defaults.
struct ExperimentConfig {
  ModelId model = ModelId::LotkaVolterra;

  std::size_t n_points = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  double noise_sd = 0.0;
  std::size_t replicates = 1;
  std::uint64_t seed = 989;

  std::size_t degree = 2;
  std::size_t width = 1;

  bool smoothing = false;
  std::string kernel;
  std::size_t gpr_restarts = 8;

  std::size_t window = 2;
  std::size_t substeps = 1;

  double lr = 1e-3;
  std::size_t epochs = 3000;
  double alpha = 100.0;
  double rel_tol = 1e-8;
  std::size_t patience = 100;

  // Terms removed from the true form; the rest is the known part and the
  // network learns the remainder. Format "eq:monomial;eq:monomial".
  std::string missing_terms;

  std::string method = "laplace";

  std::string laplace_fisher = "gradient";
  std::string laplace_inverse = "moore_penrose";
  double laplace_rcond = 1e-10;
  std::size_t laplace_newton_steps = 0;

  double hmc_step_size = 1e-3;
  std::size_t hmc_leapfrog = 10;
  std::size_t hmc_warmup = 500;
  std::size_t hmc_samples = 1000;
  double hmc_jitter = 0.1;

  std::size_t nuts_warmup = 500;
  std::size_t nuts_samples = 500;
  std::size_t nuts_max_depth = 10;
  double nuts_target_accept = 0.8;
  bool nuts_dense_metric = false;

  std::size_t vi_steps = 2000;
  std::size_t vi_mc = 8;
  double vi_lr = 1e-3;
  double vi_final_lr_fraction = 0.01;
  double vi_init_sd = 1e-3;
  std::size_t vi_eval = 64;

  std::size_t abc_particles = 500;
  std::size_t abc_rounds = 8;
  double abc_quantile = 0.5;
  double abc_prior_lo = -5.0;
  double abc_prior_hi = 5.0;
  std::size_t abc_max_simulations = 0;

  std::size_t n_mc = 5000;
  std::size_t kde_points = 256;

  double horizon = 5.0;
  std::size_t n_pred = 500;
  std::size_t predict_substeps = 1;

  std::string output_dir = "out";

  /// Settings for a benchmark model.
  static ExperimentConfig defaults(ModelId id);
  /// Parses the text form. Unknown keys and malformed values throw ValidationError.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Sets one key from its text value.
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  /// Throws ValidationError naming the first bad field.
  void validate() const;

  bool is_ode() const { return model != ModelId::CubicStatic; }
  PolyNetArch arch() const;
  std::vector<std::pair<std::size_t, Monomial>> missing() const;
  /// The fixed known part of a hybrid model, if any.
  std::optional<PolynomialForm> known_form() const;
  /// Coefficients the network should recover.
  PolynomialForm target_form() const;

  bool operator==(const ExperimentConfig&) const = default;
};

enum class Stage { Generate, Smooth, Train, Infer, Expand, Report };
std::string to_string(Stage s);
Stage parse_stage(const std::string& name);

// Posterior over the network parameters, or over the true-model coefficients
// for ABC (which does not use the network).
struct PosteriorRecord {
  std::string method;
  Eigen::VectorXd theta_star;
  std::optional<GaussianPosterior> gaussian;
  std::optional<SampleSet> samples;
  double beta2 = 1.0;
  double alpha = 100.0;
  std::vector<std::pair<std::size_t, Monomial>> terms;  // ABC parameter meaning
  std::vector<std::string> warnings;
};

/// Per-coefficient summary row of the report.
struct CoefficientSummary {
  std::size_t output = 0;
  Monomial monomial;
  double mean = 0.0;
  double sd = 0.0;
  double lo997 = 0.0;
  double hi997 = 0.0;
  double truth = 0.0;
};

// In-memory pipeline. Each stage draws from its own substream of the seed so
// stage-by-stage and whole runs agree exactly.
namespace pipeline {

NoisyDataset generate(const ExperimentConfig& cfg);
/// Smoothed series at the dataset times, or nullopt when smoothing is off.
std::optional<RowMatrix> smooth(const ExperimentConfig& cfg, const NoisyDataset& data);
std::shared_ptr<ResidualModel> build_model(const ExperimentConfig& cfg, const NoisyDataset& data,
                                           const std::optional<RowMatrix>& smoothed);
MapResult train(const ExperimentConfig& cfg, const std::shared_ptr<ResidualModel>& model);
PosteriorRecord infer(const ExperimentConfig& cfg, const NoisyDataset& data,
                      const std::shared_ptr<ResidualModel>& model, const MapResult& map);
CoefficientPosterior expand(const ExperimentConfig& cfg, const PosteriorRecord& post);
/// Predictive bands from the first n_pred coefficient draws over the horizon.
PredictiveBands predict(const ExperimentConfig& cfg, const CoefficientPosterior& coeffs);
/// Noise-free truth at the band times (evaluation only).
RowMatrix truth_at(const ExperimentConfig& cfg, std::span<const double> times);
std::vector<CoefficientSummary> summarize(const ExperimentConfig& cfg, const CoefficientPosterior& coeffs);
std::string report(const ExperimentConfig& cfg, const PosteriorRecord& post, const CoefficientPosterior& coeffs,
                   const PredictiveBands& bands);

}  // namespace pipeline

// Files written under the output directory.
struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.txt"; }
  std::filesystem::path dataset() const { return dir / "dataset.csv"; }
  std::filesystem::path smoothed() const { return dir / "smoothed.csv"; }
  std::filesystem::path map() const { return dir / "map.json"; }
  std::filesystem::path posterior() const { return dir / "posterior.json"; }
  std::filesystem::path coefficients() const { return dir / "coefficients.json"; }
  std::filesystem::path kde() const { return dir / "kde.csv"; }
  std::filesystem::path bands() const { return dir / "bands.csv"; }
  std::filesystem::path report() const { return dir / "report.txt"; }
  std::filesystem::path timing() const { return dir / "timing.log"; }
};

/// Runs one stage from the previous stage's files. Missing inputs throw DependencyError.
void run_stage(const ExperimentConfig& cfg, Stage stage);
/// Runs every stage in order and returns the artifact locations.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

// Artifact I/O.
void write_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
std::string dataset_csv(const NoisyDataset& data);
/// Observations only; the truth is not stored.
NoisyDataset parse_dataset_csv(const std::string& text, ModelId model);
std::string posterior_json(const PosteriorRecord& post);
PosteriorRecord parse_posterior_json(const std::string& text);
/// Columns t,y0,...,y{d-1}.
std::string series_csv(std::span<const double> times, const RowMatrix& values);
RowMatrix parse_series_csv(const std::string& text, std::vector<double>* times = nullptr);
std::string coefficients_json(const CoefficientPosterior& coeffs);
/// Coefficient draws only; parameter draws are not stored.
CoefficientPosterior parse_coefficients_json(const std::string& text);
std::string map_json(const MapResult& map);
MapResult parse_map_json(const std::string& text);
std::string kde_csv(const CoefficientPosterior& coeffs, std::size_t n_points);
std::string bands_csv(const PredictiveBands& bands, const RowMatrix& truth);
PredictiveBands parse_bands_csv(const std::string& text);

}  // namespace bpode
