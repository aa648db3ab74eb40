// Command-line front end: run, compare, gen-data, fit-prior.

#include "flowmap/experiment.hpp"
#include "flowmap/ode_suite.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_stage(const std::string& config_path, const Common& common, flowmap::RunStage stage) {
  flowmap::ExperimentConfig cfg = flowmap::load_config(config_path);
  if (common.seed) flowmap::override_seeds(cfg, *common.seed);
  flowmap::RunOptions options;
  options.stage = stage;
  options.quiet = common.quiet;
  options.log = &std::cerr;
  if (!common.out.empty()) options.output_dir = common.out;
  const flowmap::RunOutcome outcome = flowmap::run_experiment(cfg, options);
  if (!outcome.ok) {
    std::cerr << "flowmap: " << outcome.failure << " (partial artifacts in " << outcome.output_dir.string() << ")\n";
    return kExitNumerical;
  }
  if (!common.quiet) std::cout << outcome.output_dir.string() << '\n';
  return kExitOk;
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--out", common.out, "Output directory (overrides the config)");
  cmd->add_option("--seed-override", common.seed, "Replace every seed: data=s, init=s+1, shuffle=s+2, prior=s+3");
  cmd->add_flag("--quiet", common.quiet, "Suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-map learning with prior models and neural corrections"};
  app.require_subcommand(1);

  Common common;
  std::string config_path;

  auto* run = app.add_subcommand("run", "Generate data, fit the prior, train, predict and analyze");
  run->add_option("config", config_path, "Experiment config (YAML)")->required();
  add_common(run, common);

  auto* gen = app.add_subcommand("gen-data", "Generate the snapshot data only");
  gen->add_option("config", config_path, "Experiment config (YAML)")->required();
  add_common(gen, common);

  auto* fit = app.add_subcommand("fit-prior", "Generate data and fit the prior only");
  fit->add_option("config", config_path, "Experiment config (YAML)")->required();
  add_common(fit, common);

  std::vector<std::string> summaries;
  std::string csv_path;
  auto* compare = app.add_subcommand("compare", "Tabulate summaries of runs on the same system and lag");
  compare->add_option("summaries", summaries, "summary.json files")->required();
  compare->add_option("--out", csv_path, "Also write the table as CSV to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return run_stage(config_path, common, flowmap::RunStage::Full);
    if (*gen) return run_stage(config_path, common, flowmap::RunStage::DataOnly);
    if (*fit) return run_stage(config_path, common, flowmap::RunStage::PriorOnly);
    if (*compare) {
      std::vector<std::filesystem::path> paths(summaries.begin(), summaries.end());
      const flowmap::ComparisonTable table = flowmap::compare_runs(paths);
      std::cout << table.to_text();
      if (!csv_path.empty()) flowmap::write_text_atomic(csv_path, table.to_csv());
      return kExitOk;
    }
  } catch (const flowmap::ConfigError& e) {
    std::cerr << "flowmap: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const flowmap::NumericalError& e) {
    std::cerr << "flowmap: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "flowmap: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
