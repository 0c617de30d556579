#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "bpode/experiment.hpp"

namespace bpode {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError("config: bad value '" + text + "' for " + key);
  return value;
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field field(T ExperimentConfig::*member, const std::string& key) {
  Field f;
  f.get = [member](const ExperimentConfig& c) {
    if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*member);
    } else if constexpr (std::is_same_v<T, bool>) {
      return std::string(c.*member ? "true" : "false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else {
      return std::to_string(c.*member);
    }
  };
  f.set = [member, key](ExperimentConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1") c.*member = true;
      else if (v == "false" || v == "0") c.*member = false;
      else throw ValidationError("config: bad boolean '" + v + "' for " + key);
    } else if constexpr (std::is_same_v<T, std::string>) {
      c.*member = v;
    } else {
      if constexpr (std::is_unsigned_v<T>)
        if (!v.empty() && v[0] == '-') throw ValidationError("config: " + key + " must be non-negative");
      c.*member = parse_number<T>(key, v);
    }
  };
  return f;
}

// Ordered so the text form reads top to bottom like the pipeline.
const std::vector<std::pair<std::string, Field>>& fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&t](const std::string& key, auto member) { t.emplace_back(key, field(member, key)); };
    add("data.n_points", &C::n_points);
    add("data.t_start", &C::t_start);
    add("data.t_end", &C::t_end);
    add("data.noise_sd", &C::noise_sd);
    add("data.replicates", &C::replicates);
    add("data.seed", &C::seed);
    add("arch.degree", &C::degree);
    add("arch.width", &C::width);
    add("smoothing.enabled", &C::smoothing);
    add("smoothing.kernel", &C::kernel);
    add("smoothing.restarts", &C::gpr_restarts);
    add("batching.window", &C::window);
    add("integrate.substeps", &C::substeps);
    add("training.lr", &C::lr);
    add("training.epochs", &C::epochs);
    add("training.alpha", &C::alpha);
    add("training.rel_tol", &C::rel_tol);
    add("training.patience", &C::patience);
    add("hybrid.missing", &C::missing_terms);
    add("inference.method", &C::method);
    add("laplace.fisher", &C::laplace_fisher);
    add("laplace.inverse", &C::laplace_inverse);
    add("laplace.rcond", &C::laplace_rcond);
    add("laplace.newton_steps", &C::laplace_newton_steps);
    add("hmc.step_size", &C::hmc_step_size);
    add("hmc.n_leapfrog", &C::hmc_leapfrog);
    add("hmc.n_warmup", &C::hmc_warmup);
    add("hmc.n_samples", &C::hmc_samples);
    add("hmc.jitter", &C::hmc_jitter);
    add("nuts.n_warmup", &C::nuts_warmup);
    add("nuts.n_samples", &C::nuts_samples);
    add("nuts.max_depth", &C::nuts_max_depth);
    add("nuts.target_accept", &C::nuts_target_accept);
    add("nuts.dense_metric", &C::nuts_dense_metric);
    add("vi.n_steps", &C::vi_steps);
    add("vi.n_mc", &C::vi_mc);
    add("vi.lr", &C::vi_lr);
    add("vi.final_lr_fraction", &C::vi_final_lr_fraction);
    add("vi.init_sd", &C::vi_init_sd);
    add("vi.n_eval", &C::vi_eval);
    add("abc.n_particles", &C::abc_particles);
    add("abc.n_rounds", &C::abc_rounds);
    add("abc.quantile", &C::abc_quantile);
    add("abc.prior_lo", &C::abc_prior_lo);
    add("abc.prior_hi", &C::abc_prior_hi);
    add("abc.max_simulations", &C::abc_max_simulations);
    add("expansion.n_mc", &C::n_mc);
    add("expansion.kde_points", &C::kde_points);
    add("prediction.horizon", &C::horizon);
    add("prediction.n_pred", &C::n_pred);
    add("prediction.substeps", &C::predict_substeps);
    add("output.dir", &C::output_dir);
    return t;
  }();
  return table;
}

// Parameter counts of the reference architectures; the width is chosen to match.
std::size_t reference_param_count(ModelId id) {
  switch (id) {
    case ModelId::CubicStatic: return 180;
    case ModelId::LotkaVolterra: return 160;
    case ModelId::DampedOscillator: return 660;
    case ModelId::Lorenz: return 231;
  }
  return 0;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(ModelId id) {
  const BenchmarkModel m = benchmark(id);
  ExperimentConfig c;
  c.model = id;
  c.n_points = m.n_points;
  c.t_start = m.t_start;
  c.t_end = m.t_end;
  c.noise_sd = m.noise_sd;
  c.replicates = m.n_replicates;
  c.degree = m.degree;
  c.window = m.window_length;
  c.width = width_for_param_count(c.arch(), reference_param_count(id));
  switch (id) {
    case ModelId::CubicStatic:
      c.smoothing = false;
      c.window = 0;
      c.lr = 1e-2;
      c.epochs = 20000;
      c.rel_tol = 0.0;
      break;
    case ModelId::LotkaVolterra:
      c.smoothing = true;
      c.kernel = "constant(1)*periodic(1,5)+white(1)";
      break;
    case ModelId::DampedOscillator:
    case ModelId::Lorenz:
      c.smoothing = true;
      c.kernel = "constant(1)*rq(1,1)+white(1)";
      break;
  }
  c.output_dir = "out/" + to_string(id);
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") {
    model = parse_model_id(value);
    return;
  }
  for (const auto& [name, f] : fields())
    if (name == key) {
      f.set(*this, value);
      return;
    }
  throw ValidationError("config: unknown key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::string> model_name;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    for (const auto& [k, v] : entries)
      if (k == key) throw ValidationError("config: duplicate key '" + key + "'");
    if (key == "model") model_name = value;
    entries.emplace_back(std::move(key), std::move(value));
  }
  if (!model_name) throw ValidationError("config: missing key 'model'");
  ExperimentConfig c = defaults(parse_model_id(*model_name));
  for (const auto& [k, v] : entries) c.set(k, v);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_text() const {
  std::string out = "model = " + to_string(model) + "\n";
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

PolyNetArch ExperimentConfig::arch() const {
  const std::size_t d = benchmark(model).dim;
  return PolyNetArch{d, degree, width, d};
}

std::vector<std::pair<std::size_t, Monomial>> ExperimentConfig::missing() const {
  std::vector<std::pair<std::size_t, Monomial>> out;
  const std::size_t d = benchmark(model).dim;
  std::istringstream in(missing_terms);
  std::string item;
  while (std::getline(in, item, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ValidationError("hybrid.missing: expected eq:monomial, got '" + item + "'");
    const auto eq = parse_number<std::size_t>("hybrid.missing", trim(item.substr(0, colon)));
    if (eq >= d) throw ValidationError("hybrid.missing: equation index out of range in '" + item + "'");
    Monomial m = parse_monomial(trim(item.substr(colon + 1)), d);
    if (benchmark(model).truth[eq].coeff(m) == 0.0)
      throw ValidationError("hybrid.missing: '" + item + "' is not a term of the true model");
    out.emplace_back(eq, std::move(m));
  }
  return out;
}

std::optional<PolynomialForm> ExperimentConfig::known_form() const {
  const auto miss = missing();
  if (miss.empty()) return std::nullopt;
  return remove_terms(benchmark(model).truth, miss);
}

PolynomialForm ExperimentConfig::target_form() const {
  const auto truth = benchmark(model).truth;
  const auto miss = missing();
  if (miss.empty()) return truth;
  PolynomialForm out(truth.size(), Polynomial(truth[0].n_vars()));
  for (const auto& [eq, m] : miss) out[eq].add_term(m, truth[eq].coeff(m));
  return out;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("config: " + field + " " + why);
  };
  if (n_points < 2) fail("data.n_points", "must be at least 2");
  if (!(t_end > t_start)) fail("data.t_end", "must exceed data.t_start");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) fail("data.noise_sd", "must be finite and >= 0");
  if (replicates < 1) fail("data.replicates", "must be at least 1");
  if (degree < 1) fail("arch.degree", "must be at least 1");
  if (width < 1) fail("arch.width", "must be at least 1");
  if (is_ode()) {
    if (window < 2) fail("batching.window", "must be at least 2");
    if (window > n_points) fail("batching.window", "must not exceed data.n_points");
    if (smoothing) {
      if (kernel.empty()) fail("smoothing.kernel", "is required when smoothing is enabled");
      try {
        KernelSpec::parse(kernel).validate();
      } catch (const ValidationError& e) {
        fail("smoothing.kernel", std::string("is invalid: ") + e.what());
      }
    }
  } else {
    if (replicates != 1) fail("data.replicates", "must be 1 for cubic_static");
    if (!missing_terms.empty()) fail("hybrid.missing", "is only supported for ODE models");
  }
  if (substeps < 1) fail("integrate.substeps", "must be at least 1");
  if (!(lr > 0.0)) fail("training.lr", "must be positive");
  if (!(alpha > 0.0)) fail("training.alpha", "must be positive");
  if (!(rel_tol >= 0.0)) fail("training.rel_tol", "must be >= 0");
  (void)missing();

  static const std::vector<std::string> methods{"laplace", "hmc", "nuts", "vi", "blr", "abc"};
  if (std::find(methods.begin(), methods.end(), method) == methods.end())
    fail("inference.method", "must be one of laplace, hmc, nuts, vi, blr, abc");
  if (method == "blr" && is_ode()) fail("inference.method", "blr applies only to cubic_static");
  if (method == "abc" && !is_ode()) fail("inference.method", "abc applies only to ODE models");
  if (method == "abc" && !missing_terms.empty()) fail("inference.method", "abc does not support hybrid models");
  try {
    parse_fisher_method(laplace_fisher);
  } catch (const ValidationError&) {
    fail("laplace.fisher", "must be gradient or hessian");
  }
  try {
    parse_inverse_method(laplace_inverse);
  } catch (const ValidationError&) {
    fail("laplace.inverse", "must be moore_penrose or diagonal");
  }
  if (!(laplace_rcond >= 0.0)) fail("laplace.rcond", "must be >= 0");
  if (!(hmc_step_size > 0.0)) fail("hmc.step_size", "must be positive");
  if (hmc_leapfrog < 1) fail("hmc.n_leapfrog", "must be at least 1");
  if (hmc_samples < 1) fail("hmc.n_samples", "must be at least 1");
  if (!(hmc_jitter >= 0.0 && hmc_jitter < 1.0)) fail("hmc.jitter", "must be in [0, 1)");
  if (nuts_samples < 1) fail("nuts.n_samples", "must be at least 1");
  if (nuts_max_depth < 1) fail("nuts.max_depth", "must be at least 1");
  if (!(nuts_target_accept > 0.0 && nuts_target_accept < 1.0)) fail("nuts.target_accept", "must be in (0, 1)");
  if (vi_steps < 1) fail("vi.n_steps", "must be at least 1");
  if (vi_mc < 1) fail("vi.n_mc", "must be at least 1");
  if (!(vi_lr > 0.0)) fail("vi.lr", "must be positive");
  if (!(vi_final_lr_fraction > 0.0 && vi_final_lr_fraction <= 1.0)) fail("vi.final_lr_fraction", "must be in (0, 1]");
  if (!(vi_init_sd > 0.0)) fail("vi.init_sd", "must be positive");
  if (vi_eval < 1) fail("vi.n_eval", "must be at least 1");
  if (abc_particles < 2) fail("abc.n_particles", "must be at least 2");
  if (abc_rounds < 1) fail("abc.n_rounds", "must be at least 1");
  if (!(abc_quantile > 0.0 && abc_quantile < 1.0)) fail("abc.quantile", "must be in (0, 1)");
  if (!(abc_prior_hi > abc_prior_lo)) fail("abc.prior_hi", "must exceed abc.prior_lo");
  if (n_mc < 1) fail("expansion.n_mc", "must be at least 1");
  if (kde_points < 2) fail("expansion.kde_points", "must be at least 2");
  if (!(horizon >= 1.0)) fail("prediction.horizon", "must be at least 1");
  if (n_pred < 1) fail("prediction.n_pred", "must be at least 1");
  if (n_pred > n_mc) fail("prediction.n_pred", "must not exceed expansion.n_mc");
  if (predict_substeps < 1) fail("prediction.substeps", "must be at least 1");
  if (output_dir.empty()) fail("output.dir", "must not be empty");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Generate: return "generate";
    case Stage::Smooth: return "smooth";
    case Stage::Train: return "train";
    case Stage::Infer: return "infer";
    case Stage::Expand: return "expand";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::Generate, Stage::Smooth, Stage::Train, Stage::Infer, Stage::Expand, Stage::Report})
    if (to_string(s) == name) return s;
  throw ValidationError("unknown stage '" + name + "' (expected generate, smooth, train, infer, expand or report)");
}

}  // namespace bpode
