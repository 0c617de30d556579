#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "bpode/coefficients.hpp"
#include "bpode/experiment.hpp"
#include "bpode/odeint.hpp"
#include "bpode/polynet.hpp"
#include "bpode/symexpand.hpp"

namespace py = pybind11;
using namespace bpode;

namespace {

using ArchTuple = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>;
using TermKey = std::pair<std::size_t, std::string>;

PolyNetArch to_arch(const ArchTuple& a) {
  PolyNetArch arch{std::get<0>(a), std::get<1>(a), std::get<2>(a), std::get<3>(a)};
  arch.validate();
  return arch;
}

std::map<TermKey, double> form_dict(const PolynomialForm& form) {
  std::map<TermKey, double> out;
  for (std::size_t i = 0; i < form.size(); ++i)
    for (const auto& [m, c] : form[i].terms()) out[{i, monomial_name(m)}] = c;
  return out;
}

PolynomialForm dict_form(const std::map<TermKey, double>& terms, std::size_t dim) {
  PolynomialForm form(dim, Polynomial(dim));
  for (const auto& [key, c] : terms) {
    if (key.first >= dim) throw ValidationError("equation index " + std::to_string(key.first) + " out of range");
    form[key.first].add_term(parse_monomial(key.second, dim), c);
  }
  return form;
}

std::string config_value(const ExperimentConfig& cfg, const std::string& key) {
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    k.erase(k.find_last_not_of(' ') + 1);
    if (k == key) {
      const auto v = line.find_first_not_of(' ', eq + 1);
      return v == std::string::npos ? std::string() : line.substr(v);
    }
  }
  throw ValidationError("config: unknown key '" + key + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian symbolic regression of polynomial ODEs";

  auto& validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DependencyError>(m, "DependencyError", validation);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ExperimentConfig>(m, "Config")
      .def_static("defaults", [](const std::string& model) { return ExperimentConfig::defaults(parse_model_id(model)); },
                  py::arg("model"))
      .def_static("parse", &ExperimentConfig::parse, py::arg("text"))
      .def_static("load", [](const std::filesystem::path& p) { return ExperimentConfig::load(p); }, py::arg("path"))
      .def("set", &ExperimentConfig::set, py::arg("key"), py::arg("value"))
      .def("get", &config_value, py::arg("key"))
      .def("to_text", &ExperimentConfig::to_text)
      .def("validate", &ExperimentConfig::validate)
      .def_property_readonly("model", [](const ExperimentConfig& c) { return to_string(c.model); })
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("method", &ExperimentConfig::method)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; })
      .def("__repr__", [](const ExperimentConfig& c) {
        return "<Config model=" + to_string(c.model) + " method=" + c.method + " seed=" + std::to_string(c.seed) + ">";
      });

  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg) {
        py::gil_scoped_release release;
        const RunArtifacts a = run_experiment(cfg);
        return std::map<std::string, std::filesystem::path>{
            {"config", a.config()},       {"dataset", a.dataset()}, {"smoothed", a.smoothed()},
            {"map", a.map()},             {"posterior", a.posterior()}, {"coefficients", a.coefficients()},
            {"kde", a.kde()},             {"bands", a.bands()},     {"report", a.report()},
            {"timing", a.timing()}};
      },
      py::arg("config"), "Runs every stage and returns the artifact paths.");
  m.def(
      "run_stage",
      [](const ExperimentConfig& cfg, const std::string& stage) {
        const Stage s = parse_stage(stage);
        py::gil_scoped_release release;
        run_stage(cfg, s);
      },
      py::arg("config"), py::arg("stage"));

  m.def(
      "generate",
      [](const ExperimentConfig& cfg) {
        const NoisyDataset d = pipeline::generate(cfg);
        py::dict out;
        out["times"] = d.times;
        out["replicates"] = d.replicates;
        out["truth"] = d.truth.reveal_for_evaluation();
        return out;
      },
      py::arg("config"), "Noisy dataset for a config: times, replicates and the noise-free truth.");

  m.def("count_params", [](const ArchTuple& a) { return count_params(to_arch(a)); }, py::arg("arch"),
        "Parameter count of (n_inputs, degree, width, n_outputs).");
  m.def(
      "forward",
      [](const std::vector<double>& theta, const ArchTuple& a, const std::vector<double>& x) {
        const PolyNetArch arch = to_arch(a);
        if (theta.size() != count_params(arch)) throw ValidationError("theta has wrong length");
        if (x.size() != arch.n_inputs) throw ValidationError("x has wrong length");
        return forward(theta, arch, x);
      },
      py::arg("theta"), py::arg("arch"), py::arg("x"));
  m.def(
      "expand",
      [](const std::vector<double>& theta, const ArchTuple& a) {
        const PolyNetArch arch = to_arch(a);
        if (theta.size() != count_params(arch)) throw ValidationError("theta has wrong length");
        return form_dict(expand(theta, arch));
      },
      py::arg("theta"), py::arg("arch"), "Monomial coefficients keyed by (equation, monomial name).");
  m.def(
      "integrate",
      [](const std::map<TermKey, double>& terms, const std::vector<double>& y0, const std::vector<double>& times,
         std::size_t substeps) {
        if (times.empty()) throw ValidationError("times is empty");
        const OdeSystem sys = polynomial_system(dict_form(terms, y0.size()));
        return integrate(sys, y0, times.front(), times, IntegrateOptions{substeps});
      },
      py::arg("terms"), py::arg("y0"), py::arg("times"), py::arg("substeps") = 1,
      "Fixed-step integration of dy_i/dt = sum of terms[(i, monomial)] * monomial.");

  m.def(
      "blr",
      [](const std::vector<double>& x, const Eigen::VectorXd& y, std::size_t degree) {
        const BlrResult r = bayesian_linear_regression(vandermonde(x, degree), y);
        return py::make_tuple(r.posterior.mean, r.posterior.covariance, r.beta2);
      },
      py::arg("x"), py::arg("y"), py::arg("degree"), "Polynomial regression posterior: (mean, covariance, beta2).");

  m.def("silverman_bandwidth", [](const std::vector<double>& s) { return silverman_bandwidth(s); }, py::arg("samples"));
  m.def(
      "kde",
      [](const std::vector<double>& samples, std::optional<std::vector<double>> grid) {
        const std::vector<double> g = grid ? *grid : kde_grid(samples);
        const Kde k = kde(samples, g);
        py::dict out;
        out["grid"] = k.grid;
        out["density"] = k.density;
        out["bandwidth"] = k.bandwidth;
        out["spike"] = k.spike;
        out["spike_location"] = k.spike_location;
        return out;
      },
      py::arg("samples"), py::arg("grid") = py::none());

  m.def(
      "read_coefficients",
      [](const std::filesystem::path& p) {
        const CoefficientPosterior c = parse_coefficients_json(read_text(p));
        std::map<TermKey, std::vector<double>> out;
        for (const auto& [eq, mono] : c.keys) out[{eq, monomial_name(mono)}] = c.coefficient_samples(eq, mono);
        return out;
      },
      py::arg("path"), "Coefficient draws from coefficients.json keyed by (equation, monomial name).");
}
