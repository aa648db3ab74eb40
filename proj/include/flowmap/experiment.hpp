/**
 * @file experiment.hpp
 * @brief Declarative experiment configs, the end-to-end runner and run comparison.
 */
#pragma once

#include "flowmap/core.hpp"
#include "flowmap/neural.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowmap {

/** @brief Invalid or unparsable experiment configuration; message names the field. */
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string name;
  std::string system;
  /** Replaces the system's sampling box when non-empty. */
  Box domain_override;
  double lag = 0.1;

  std::size_t num_pairs = 10000;
  double noise = 0.0;
  std::uint64_t data_seed = 1;
  /** RK4 steps per lag for data generation; 0 selects the system default. */
  int substeps = 0;

  PriorKind prior = PriorKind::Identity;
  int prior_width = 30;
  int prior_epochs = 100;
  std::uint64_t prior_seed = 11;
  /** Adam step size for the shallow prior; 0 reuses the main learning rate. */
  double prior_learning_rate = 0.0;
  std::string reduced_system;
  std::vector<std::size_t> reduced_lift;
  int reduced_substeps = 10;

  std::vector<int> hidden = {30, 30, 30};
  bool zero_init = false;
  bool normalize = false;
  TrainConfig train;

  std::vector<StateVector> initial_conditions;
  std::size_t horizon = 20;
  /** RK4 steps per lag for reference trajectories; 0 selects 10x the data substeps. */
  int reference_substeps = 0;
  bool psd = false;
  std::size_t psd_component = 0;

  std::filesystem::path output_dir;

  /** @brief Cross-field checks; throws ConfigError. */
  void validate() const;
  [[nodiscard]] int effective_substeps() const;
  [[nodiscard]] int effective_reference_substeps() const;
};

/** @brief Parses the flat YAML config format; unknown keys are rejected. */
[[nodiscard]] ExperimentConfig parse_config(const std::string& yaml_text);
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);

/** @brief Every field written out explicitly, in a fixed order. */
[[nodiscard]] std::string effective_config_yaml(const ExperimentConfig& cfg);

/** @brief Replaces data, init, shuffle and prior seeds with seed, seed+1, seed+2, seed+3. */
void override_seeds(ExperimentConfig& cfg, std::uint64_t seed);

enum class RunStage { DataOnly, PriorOnly, Full };

struct RunOptions {
  RunStage stage = RunStage::Full;
  std::optional<std::filesystem::path> output_dir;
  bool quiet = false;
  std::ostream* log = nullptr;
};

struct RunOutcome {
  std::filesystem::path output_dir;
  std::string summary_json;
  /** False when training diverged; partial artifacts are kept. */
  bool ok = true;
  std::string failure;
};

/**
 * @brief data -> prior -> correction training -> rollouts -> metrics.
 *
 * Artifacts under the output directory: effective_config.yaml, data.txt,
 * prior.txt, model/ (bundle), train_record.csv, rollout_<i>.csv,
 * reference_<i>.csv, prior_rollout_<i>.csv, error_<i>.csv,
 * prior_error_<i>.csv, psd_<i>_{reference,model,prior}.csv when requested,
 * summary.json (deterministic) and timing.json (wall times).
 */
[[nodiscard]] RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

struct ComparisonRow {
  std::string label;
  std::string prior;
  double prediction_error = 0.0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double network_norm = 0.0;
};

struct ComparisonTable {
  std::string system;
  double lag = 0.0;
  /** Ordered by decreasing prediction error. */
  std::vector<ComparisonRow> rows;

  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] std::string to_text() const;
};

/** @brief Needs at least two summaries with the same system and lag; throws ConfigError otherwise. */
[[nodiscard]] ComparisonTable compare_runs(const std::vector<std::filesystem::path>& summaries);

}  // namespace flowmap
