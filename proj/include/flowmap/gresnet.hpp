/**
 * @file gresnet.hpp
 * @brief Prior-plus-correction flow-map model: residue training and recursive prediction.
 */
#pragma once

#include "flowmap/core.hpp"
#include "flowmap/neural.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flowmap {

/**
 * @brief x_{k+1} = L(x_k) + N(x_k).
 *
 * The correction network maps R^n to R^n. @p domain is the bounding box of
 * the training inputs; rollouts use a multiple of it as the blow-up guard.
 */
class GResNetModel {
 public:
  GResNetModel(PriorPtr prior, MlpParams correction, double lag, Box domain);

  [[nodiscard]] std::size_t dim() const { return prior_->dim(); }
  [[nodiscard]] double lag() const { return lag_; }
  [[nodiscard]] const PriorOperator& prior() const { return *prior_; }
  [[nodiscard]] const PriorPtr& prior_ptr() const { return prior_; }
  [[nodiscard]] const MlpParams& correction() const { return correction_; }
  [[nodiscard]] const Box& domain() const { return domain_; }

 private:
  PriorPtr prior_;
  MlpParams correction_;
  double lag_;
  Box domain_;
};

/** @brief Samples (x1_j, x2_j - L(x1_j)). */
[[nodiscard]] std::vector<Sample> compute_residues(const PriorOperator& prior, const SnapshotPairSet& data);

/** @brief Options for the correction network that the experiment layer exposes. */
struct CorrectionOptions {
  /** Start from an all-zero network instead of the Gaussian initialization. */
  bool zero_init = false;
  /**
   * Wrap the network in a fixed normalization: inputs scaled to [-1, 1] over
   * the training bounding box, outputs scaled by the per-component rms of the
   * training residues.
   */
  bool normalize = false;
};

struct GResNetFit {
  GResNetModel model;
  TrainRecord record;
};

/**
 * @brief Computes residues once, then trains the correction network on them.
 *
 * @p hidden lists the hidden-layer widths; the network is n-hidden...-n.
 * The record's network_norm is filled in over @p data.
 */
[[nodiscard]] GResNetFit train_gresnet(PriorPtr prior, const SnapshotPairSet& data, const std::vector<int>& hidden,
                                       const TrainConfig& cfg, const CorrectionOptions& options = {});

/**
 * @brief Standard ResNet x + N(x), trained on x2 - x1 without a prior object.
 *
 * Kept as an independent path to check that the identity prior reduces
 * gResNet to this model.
 */
struct ResNetFit {
  std::vector<Sample> targets;
  TrainResult result;
};
[[nodiscard]] ResNetFit train_standard_resnet(const SnapshotPairSet& data, const std::vector<int>& hidden,
                                              const TrainConfig& cfg);

/** @brief (1/J) sum_j |x2_j - L(x1_j) - N(x1_j)|^2 evaluated directly from the pairs. */
[[nodiscard]] double direct_loss(const PriorOperator& prior, const MlpParams& correction, const SnapshotPairSet& data);

/** @brief One lag step; throws NumericalError when the result is not finite. */
[[nodiscard]] StateVector predict_step(const GResNetModel& model, const StateVector& x);

struct RolloutResult {
  Trajectory trajectory;
  bool blew_up = false;
  std::string reason;
};

/**
 * @brief Recursive prediction of @p steps lags from x0.
 *
 * Stops early and flags blow-up when a state is non-finite or leaves the
 * guard box (default: training domain scaled by 100 about its center).
 */
[[nodiscard]] RolloutResult rollout(const GResNetModel& model, const StateVector& x0, std::size_t steps,
                                    std::optional<Box> guard = std::nullopt);

/** @brief Same as rollout() using the prior alone. */
[[nodiscard]] RolloutResult rollout_prior(const PriorOperator& prior, double lag, const StateVector& x0,
                                          std::size_t steps, const Box& guard);

inline constexpr double kGuardFactor = 100.0;

/**
 * @brief Writes prior.txt, correction.txt and metadata.json into @p dir.
 *
 * @p extra_metadata is a JSON object text merged into metadata.json (may be empty).
 */
void save_model_bundle(const std::filesystem::path& dir, const GResNetModel& model, const TrainConfig& cfg,
                       const std::string& extra_metadata = {});
[[nodiscard]] GResNetModel load_model_bundle(const std::filesystem::path& dir);

}  // namespace flowmap
