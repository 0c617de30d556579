#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bpode/experiment.hpp"

using namespace bpode;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kNumeric = 3;

struct Options {
  std::string config;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string method;
  std::string stage;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config.empty()) {
    cfg = ExperimentConfig::load(o.config);
  } else if (!o.model.empty()) {
    cfg = ExperimentConfig::defaults(parse_model_id(o.model));
  } else {
    throw ValidationError("either --config or --model is required");
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.method.empty()) cfg.method = o.method;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment config file (key = value lines)");
  cmd->add_option("--model", o.model, "Start from a benchmark's defaults instead of a config file");
  cmd->add_option("--seed", o.seed, "Override data.seed");
  cmd->add_option("--out", o.out, "Override output.dir");
  cmd->add_option("--method", o.method, "Override inference.method (laplace, hmc, nuts, vi, blr, abc)");
  cmd->add_option("--set", o.overrides, "Override any config key, as key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian polynomial neural ODE experiments"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "Run every stage, or one stage with --stage");
  add_common(run, o);
  run->add_option("--stage", o.stage, "Run only this stage");
  std::vector<std::pair<CLI::App*, Stage>> stages;
  for (Stage s : {Stage::Generate, Stage::Smooth, Stage::Train, Stage::Infer, Stage::Expand, Stage::Report}) {
    auto* cmd = app.add_subcommand(to_string(s), "Run the " + to_string(s) + " stage from the previous stage's files");
    add_common(cmd, o);
    stages.emplace_back(cmd, s);
  }
  auto* show = app.add_subcommand("config", "Print the resolved config");
  add_common(show, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    const ExperimentConfig cfg = resolve(o);
    if (show->parsed()) {
      std::cout << cfg.to_text();
      return kOk;
    }
    if (run->parsed()) {
      if (!o.stage.empty()) {
        run_stage(cfg, parse_stage(o.stage));
      } else {
        const RunArtifacts a = run_experiment(cfg);
        std::cout << read_text(a.report());
      }
      return kOk;
    }
    for (const auto& [cmd, s] : stages)
      if (cmd->parsed()) {
        run_stage(cfg, s);
        if (s == Stage::Report) std::cout << read_text(RunArtifacts{cfg.output_dir}.report());
      }
    return kOk;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
