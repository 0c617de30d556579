#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "bpode/experiment.hpp"
#include "json.hpp"

namespace bpode {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ValidationError("bad number '" + s + "' in artifact");
  return v;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

json matrix_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index m = n ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != m) throw ValidationError("ragged matrix in artifact");
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = rows[i][j].get<double>();
  }
  return out;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double json_number_or_nan(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

CovarianceSource parse_source(const std::string& s) {
  for (auto c : {CovarianceSource::LaplacePinv, CovarianceSource::LaplaceDiag, CovarianceSource::Variational,
                 CovarianceSource::Closed})
    if (to_string(c) == s) return c;
  throw ValidationError("unknown covariance kind '" + s + "'");
}

SampleMethod parse_sample_method(const std::string& s) {
  for (auto m : {SampleMethod::Hmc, SampleMethod::Nuts, SampleMethod::Abc})
    if (to_string(m) == s) return m;
  throw ValidationError("unknown sample method '" + s + "'");
}

std::string term_name(const std::pair<std::size_t, Monomial>& t) {
  return std::to_string(t.first) + ":" + monomial_name(t.second);
}

std::pair<std::size_t, Monomial> parse_term(const std::string& s, std::size_t n_vars) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ValidationError("bad term '" + s + "'");
  return {std::stoul(s.substr(0, colon)), parse_monomial(s.substr(colon + 1), n_vars)};
}

}  // namespace

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw ValidationError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("missing artifact " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dataset_csv(const NoisyDataset& data) {
  std::string out = "t";
  for (std::size_t j = 0; j < data.dim(); ++j) out += ",y" + std::to_string(j);
  out += ",replicate\n";
  for (std::size_t r = 0; r < data.n_replicates(); ++r)
    for (std::size_t k = 0; k < data.n_points(); ++k) {
      out += fmt(data.times[k]);
      for (std::size_t j = 0; j < data.dim(); ++j)
        out += "," + fmt(data.replicates[r](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
      out += "," + std::to_string(r) + "\n";
    }
  return out;
}

NoisyDataset parse_dataset_csv(const std::string& text, ModelId model) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ValidationError("dataset csv is empty");
  const auto header = split(lines[0], ',');
  if (header.size() < 3 || header.front() != "t" || header.back() != "replicate")
    throw ValidationError("dataset csv header must be t,y0,...,replicate");
  const std::size_t d = header.size() - 2;
  std::map<std::size_t, std::vector<std::vector<double>>> rows;
  std::map<std::size_t, std::vector<double>> times;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i], ',');
    if (cells.size() != d + 2) throw ValidationError("dataset csv line " + std::to_string(i + 1) + " has wrong width");
    const auto r = static_cast<std::size_t>(std::stoul(cells.back()));
    times[r].push_back(to_double(cells[0]));
    std::vector<double> y(d);
    for (std::size_t j = 0; j < d; ++j) y[j] = to_double(cells[j + 1]);
    rows[r].push_back(std::move(y));
  }
  NoisyDataset out;
  out.model = model;
  for (const auto& [r, ys] : rows) {
    if (r != out.replicates.size()) throw ValidationError("dataset replicates must be numbered 0, 1, ...");
    if (r == 0) out.times = times[r];
    else if (times[r] != out.times) throw ValidationError("dataset replicates must share their time grid");
    RowMatrix m(static_cast<Eigen::Index>(ys.size()), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < ys.size(); ++k)
      for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = ys[k][j];
    out.replicates.push_back(std::move(m));
  }
  return out;
}

std::string series_csv(std::span<const double> times, const RowMatrix& values) {
  std::string out = "t";
  for (Eigen::Index j = 0; j < values.cols(); ++j) out += ",y" + std::to_string(j);
  out += "\n";
  for (Eigen::Index k = 0; k < values.rows(); ++k) {
    out += fmt(times[static_cast<std::size_t>(k)]);
    for (Eigen::Index j = 0; j < values.cols(); ++j) out += "," + fmt(values(k, j));
    out += "\n";
  }
  return out;
}

RowMatrix parse_series_csv(const std::string& text, std::vector<double>* times) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ValidationError("series csv is empty");
  const std::size_t d = split(lines[0], ',').size() - 1;
  RowMatrix out(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(d));
  if (times) times->clear();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i], ',');
    if (cells.size() != d + 1) throw ValidationError("series csv line " + std::to_string(i + 1) + " has wrong width");
    if (times) times->push_back(to_double(cells[0]));
    for (std::size_t j = 0; j < d; ++j)
      out(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j)) = to_double(cells[j + 1]);
  }
  return out;
}

std::string map_json(const MapResult& map) {
  json j;
  j["theta"] = vector_json(map.theta);
  j["beta2"] = map.beta2;
  j["epochs_run"] = map.epochs_run;
  j["converged"] = map.converged;
  j["loss_trace"] = map.loss_trace;
  return j.dump(1) + "\n";
}

MapResult parse_map_json(const std::string& text) {
  const json j = json::parse(text);
  MapResult m;
  m.theta = json_vector(j.at("theta"));
  m.beta2 = j.at("beta2").get<double>();
  m.epochs_run = j.at("epochs_run").get<std::size_t>();
  m.converged = j.at("converged").get<bool>();
  m.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  return m;
}

std::string posterior_json(const PosteriorRecord& post) {
  json j;
  j["method"] = post.method;
  j["theta_star"] = vector_json(post.theta_star);
  if (post.gaussian) {
    j["covariance"] = {{"kind", to_string(post.gaussian->source)},
                       {"mean", vector_json(post.gaussian->mean)},
                       {"data", matrix_json(post.gaussian->covariance)}};
  } else {
    j["covariance"] = nullptr;
  }
  if (post.samples) {
    const SampleSet& s = *post.samples;
    j["samples"] = matrix_json(s.draws);
    j["weights"] = s.weights.empty() ? json(nullptr) : json(s.weights);
    j["diagnostics"] = {{"sampler", to_string(s.method)},
                        {"acceptance_rate", s.acceptance_rate},
                        {"step_size", s.step_size},
                        {"n_divergent", s.n_divergent},
                        {"depth_saturation", s.depth_saturation}};
  } else {
    j["samples"] = nullptr;
  }
  j["beta2"] = std::isfinite(post.beta2) ? json(post.beta2) : json(nullptr);
  j["alpha"] = post.alpha;
  if (post.terms.empty()) {
    j["terms"] = nullptr;
  } else {
    std::vector<std::string> names;
    for (const auto& t : post.terms) names.push_back(term_name(t));
    j["terms"] = names;
  }
  j["warnings"] = post.warnings;
  return j.dump(1) + "\n";
}

PosteriorRecord parse_posterior_json(const std::string& text) {
  const json j = json::parse(text);
  PosteriorRecord rec;
  rec.method = j.at("method").get<std::string>();
  rec.theta_star = json_vector(j.at("theta_star"));
  if (!j.at("covariance").is_null()) {
    const json& c = j["covariance"];
    rec.gaussian = GaussianPosterior{json_vector(c.at("mean")), json_matrix(c.at("data")),
                                     parse_source(c.at("kind").get<std::string>())};
  }
  if (!j.at("samples").is_null()) {
    SampleSet s;
    const json& d = j.at("diagnostics");
    s.method = parse_sample_method(d.at("sampler").get<std::string>());
    s.draws = json_matrix(j["samples"]);
    if (!j.at("weights").is_null()) s.weights = j["weights"].get<std::vector<double>>();
    s.acceptance_rate = d.at("acceptance_rate").get<double>();
    s.step_size = d.at("step_size").get<double>();
    s.n_divergent = d.at("n_divergent").get<std::size_t>();
    s.depth_saturation = d.at("depth_saturation").get<double>();
    rec.samples = std::move(s);
  }
  rec.beta2 = json_number_or_nan(j.at("beta2"));
  rec.alpha = j.at("alpha").get<double>();
  if (!j.at("terms").is_null()) {
    const auto names = j["terms"].get<std::vector<std::string>>();
    // Number of state variables: the largest exponent vector length implied by names.
    std::size_t n_vars = 1;
    for (const auto& n : names) {
      for (std::size_t p = n.find('x'); p != std::string::npos; p = n.find('x', p + 1)) {
        std::size_t q = p + 1;
        while (q < n.size() && std::isdigit(static_cast<unsigned char>(n[q]))) ++q;
        n_vars = std::max(n_vars, std::stoul(n.substr(p + 1, q - p - 1)) + 1);
      }
    }
    for (const auto& n : names) rec.terms.push_back(parse_term(n, n_vars));
  }
  rec.warnings = j.at("warnings").get<std::vector<std::string>>();
  return rec;
}

std::string coefficients_json(const CoefficientPosterior& coeffs) {
  json j;
  j["source"] = coeffs.provenance.source;
  j["n_mc"] = coeffs.n_mc();
  j["seed"] = coeffs.provenance.seed;
  j["from_network"] = coeffs.from_network;
  j["n_inputs"] = coeffs.arch.n_inputs;
  j["warnings"] = coeffs.provenance.warnings;
  json list = json::array();
  for (std::size_t k = 0; k < coeffs.keys.size(); ++k) {
    list.push_back({{"output_index", coeffs.keys[k].first},
                    {"monomial", monomial_name(coeffs.keys[k].second)},
                    {"samples", coeffs.coefficient_samples(coeffs.keys[k].first, coeffs.keys[k].second)}});
  }
  j["coefficients"] = std::move(list);
  return j.dump() + "\n";
}

CoefficientPosterior parse_coefficients_json(const std::string& text) {
  const json j = json::parse(text);
  CoefficientPosterior out;
  out.provenance.source = j.at("source").get<std::string>();
  out.provenance.n_mc = j.at("n_mc").get<std::size_t>();
  out.provenance.seed = j.at("seed").get<std::uint64_t>();
  out.provenance.warnings = j.at("warnings").get<std::vector<std::string>>();
  out.from_network = j.at("from_network").get<bool>();
  const auto n_vars = j.at("n_inputs").get<std::size_t>();
  out.arch.n_inputs = n_vars;
  const json& list = j.at("coefficients");
  out.samples.resize(static_cast<Eigen::Index>(out.provenance.n_mc), static_cast<Eigen::Index>(list.size()));
  std::size_t n_out = 0;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const auto eq = list[k].at("output_index").get<std::size_t>();
    n_out = std::max(n_out, eq + 1);
    out.keys.emplace_back(eq, parse_monomial(list[k].at("monomial").get<std::string>(), n_vars));
    const auto s = list[k].at("samples").get<std::vector<double>>();
    if (s.size() != out.provenance.n_mc) throw ValidationError("coefficient sample count mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      out.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = s[i];
  }
  out.arch.n_outputs = n_out;
  return out;
}

std::string kde_csv(const CoefficientPosterior& coeffs, std::size_t n_points) {
  std::string out = "output_index,monomial,x,density,spike\n";
  for (const auto& [eq, m] : coeffs.keys) {
    const auto s = coeffs.coefficient_samples(eq, m);
    const auto grid = kde_grid(s, n_points);
    const Kde k = kde(s, grid);
    const std::string prefix = std::to_string(eq) + "," + monomial_name(m) + ",";
    if (k.spike) {
      out += prefix + fmt(k.spike_location) + ",inf,1\n";
      continue;
    }
    for (std::size_t g = 0; g < grid.size(); ++g) out += prefix + fmt(grid[g]) + "," + fmt(k.density[g]) + ",0\n";
  }
  return out;
}

std::string bands_csv(const PredictiveBands& bands, const RowMatrix& truth) {
  std::string out = "t,state,mean,lo95,hi95,lo9975,hi9975,truth\n";
  for (Eigen::Index k = 0; k < bands.mean.rows(); ++k)
    for (Eigen::Index j = 0; j < bands.mean.cols(); ++j)
      out += fmt(bands.times[static_cast<std::size_t>(k)]) + "," + std::to_string(j) + "," + fmt(bands.mean(k, j)) + "," +
             fmt(bands.lo95(k, j)) + "," + fmt(bands.hi95(k, j)) + "," + fmt(bands.lo9975(k, j)) + "," +
             fmt(bands.hi9975(k, j)) + "," + fmt(truth(k, j)) + "\n";
  out += "# draws_used=" + std::to_string(bands.n_used) + " draws_failed=" + std::to_string(bands.n_failed) + "\n";
  return out;
}

PredictiveBands parse_bands_csv(const std::string& text) {
  auto lines = lines_of(text);
  PredictiveBands b;
  std::vector<std::vector<double>> rows;
  std::size_t d = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i][0] == '#') {
      std::sscanf(lines[i].c_str(), "# draws_used=%zu draws_failed=%zu", &b.n_used, &b.n_failed);
      continue;
    }
    const auto cells = split(lines[i], ',');
    if (cells.size() != 8) throw ValidationError("bands csv line " + std::to_string(i + 1) + " has wrong width");
    std::vector<double> r;
    for (const auto& c : cells) r.push_back(to_double(c));
    d = std::max(d, static_cast<std::size_t>(r[1]) + 1);
    rows.push_back(std::move(r));
  }
  if (d == 0) return b;
  const auto T = static_cast<Eigen::Index>(rows.size() / d);
  for (RowMatrix* m : {&b.mean, &b.lo95, &b.hi95, &b.lo9975, &b.hi9975}) m->resize(T, static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i / d), j = static_cast<Eigen::Index>(rows[i][1]);
    if (j == 0) b.times.push_back(rows[i][0]);
    b.mean(k, j) = rows[i][2];
    b.lo95(k, j) = rows[i][3];
    b.hi95(k, j) = rows[i][4];
    b.lo9975(k, j) = rows[i][5];
    b.hi9975(k, j) = rows[i][6];
  }
  return b;
}

namespace {

bool uses_network(const std::string& method) { return method != "blr" && method != "abc"; }

NoisyDataset load_dataset(const ExperimentConfig& cfg, const RunArtifacts& a) {
  if (!std::filesystem::exists(a.dataset())) throw DependencyError("missing " + a.dataset().string() + "; run generate first");
  NoisyDataset data = parse_dataset_csv(read_text(a.dataset()), cfg.model);
  data.noise_sd = cfg.noise_sd;
  data.seed = cfg.seed;
  return data;
}

std::optional<RowMatrix> load_smoothed(const ExperimentConfig& cfg, const RunArtifacts& a) {
  if (!cfg.is_ode() || !cfg.smoothing) return std::nullopt;
  if (!std::filesystem::exists(a.smoothed()))
    throw DependencyError("missing " + a.smoothed().string() + "; run smooth first");
  return parse_series_csv(read_text(a.smoothed()));
}

MapResult load_map(const RunArtifacts& a) {
  if (!std::filesystem::exists(a.map())) throw DependencyError("missing " + a.map().string() + "; run train first");
  return parse_map_json(read_text(a.map()));
}

PosteriorRecord load_posterior(const RunArtifacts& a) {
  if (!std::filesystem::exists(a.posterior()))
    throw DependencyError("missing " + a.posterior().string() + "; run infer first");
  return parse_posterior_json(read_text(a.posterior()));
}

void execute(const ExperimentConfig& cfg, Stage stage, const RunArtifacts& a) {
  switch (stage) {
    case Stage::Generate:
      write_atomic(a.dataset(), dataset_csv(pipeline::generate(cfg)));
      return;
    case Stage::Smooth: {
      const NoisyDataset data = load_dataset(cfg, a);
      if (auto sm = pipeline::smooth(cfg, data)) write_atomic(a.smoothed(), series_csv(data.times, *sm));
      return;
    }
    case Stage::Train: {
      const NoisyDataset data = load_dataset(cfg, a);
      const auto model = pipeline::build_model(cfg, data, load_smoothed(cfg, a));
      write_atomic(a.map(), map_json(pipeline::train(cfg, model)));
      return;
    }
    case Stage::Infer: {
      const NoisyDataset data = load_dataset(cfg, a);
      std::shared_ptr<ResidualModel> model;
      MapResult map;
      if (uses_network(cfg.method)) {
        model = pipeline::build_model(cfg, data, load_smoothed(cfg, a));
        map = load_map(a);
        if (static_cast<std::size_t>(map.theta.size()) != model->n_params())
          throw ValidationError("map.json does not match the configured architecture");
      }
      write_atomic(a.posterior(), posterior_json(pipeline::infer(cfg, data, model, map)));
      return;
    }
    case Stage::Expand: {
      const PosteriorRecord post = load_posterior(a);
      const CoefficientPosterior coeffs = pipeline::expand(cfg, post);
      const PredictiveBands bands = pipeline::predict(cfg, coeffs);
      write_atomic(a.coefficients(), coefficients_json(coeffs));
      write_atomic(a.kde(), kde_csv(coeffs, cfg.kde_points));
      write_atomic(a.bands(), bands_csv(bands, pipeline::truth_at(cfg, bands.times)));
      return;
    }
    case Stage::Report: {
      const PosteriorRecord post = load_posterior(a);
      if (!std::filesystem::exists(a.coefficients()))
        throw DependencyError("missing " + a.coefficients().string() + "; run expand first");
      if (!std::filesystem::exists(a.bands())) throw DependencyError("missing " + a.bands().string() + "; run expand first");
      const CoefficientPosterior coeffs = parse_coefficients_json(read_text(a.coefficients()));
      const PredictiveBands bands = parse_bands_csv(read_text(a.bands()));
      write_atomic(a.report(), pipeline::report(cfg, post, coeffs, bands));
      return;
    }
  }
}

}  // namespace

void run_stage(const ExperimentConfig& cfg, Stage stage) {
  cfg.validate();
  const RunArtifacts a{cfg.output_dir};
  std::filesystem::create_directories(a.dir);
  write_atomic(a.config(), cfg.to_text());
  const auto start = std::chrono::steady_clock::now();
  const std::string name = to_string(stage);
  try {
    execute(cfg, stage, a);
  } catch (const DependencyError& e) {
    throw DependencyError("stage " + name + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + name + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("stage " + name + ": " + e.what());
  } catch (const json::exception& e) {
    throw ValidationError("stage " + name + ": malformed artifact: " + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ofstream log(a.timing(), std::ios::app);
  log << name << " " << fmt(secs) << "\n";
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const RunArtifacts a{cfg.output_dir};
  std::filesystem::create_directories(a.dir);
  std::filesystem::remove(a.timing());
  for (Stage s : {Stage::Generate, Stage::Smooth, Stage::Train, Stage::Infer, Stage::Expand, Stage::Report}) {
    if (s == Stage::Train && !uses_network(cfg.method)) continue;
    run_stage(cfg, s);
  }
  return a;
}

}  // namespace bpode
