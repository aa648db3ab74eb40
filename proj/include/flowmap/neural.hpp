/**
 * @file neural.hpp
 * @brief Fully connected tanh network with exact backpropagation and Adam training.
 */
#pragma once

#include "flowmap/core.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace flowmap {

/**
 * @brief Weights and biases of a feedforward network.
 *
 * Layer l maps width layer_sizes[l] to layer_sizes[l + 1] through
 * weights[l] (out x in) and biases[l]; hidden layers apply tanh, the output
 * layer is affine.
 *
 * The optional fixed normalization wraps the trainable layers:
 *   N(x) = output_scale .* net((x - input_offset) ./ input_scale).
 * Empty vectors mean no normalization. These entries are never trained.
 */
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  Eigen::VectorXd input_offset;
  Eigen::VectorXd input_scale;
  Eigen::VectorXd output_scale;

  [[nodiscard]] std::size_t num_layers() const { return weights.size(); }
  [[nodiscard]] std::size_t input_dim() const { return static_cast<std::size_t>(layer_sizes.front()); }
  [[nodiscard]] std::size_t output_dim() const { return static_cast<std::size_t>(layer_sizes.back()); }
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] bool has_normalization() const { return input_scale.size() > 0; }

  /** @brief Throws DimensionError if shapes do not chain with layer_sizes. */
  void validate() const;

  friend bool operator==(const MlpParams& a, const MlpParams& b);
};

/** @brief Gradient of a scalar loss, shaped like the trainable part of MlpParams. */
struct MlpGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/** @brief Trainable entries in a fixed order (layer by layer, weights row-major then biases). */
[[nodiscard]] std::vector<double> flatten(const MlpParams& params);
[[nodiscard]] std::vector<double> flatten(const MlpGradient& grad);
void assign_flat(MlpParams& params, std::span<const double> values);

/** @brief Input/target pair for supervised training. */
struct Sample {
  StateVector input;
  StateVector target;
};

/**
 * @brief Gaussian weights with std 1/sqrt(fan_in), zero biases.
 *
 * Deterministic for a given seed. Requires at least two layer sizes, all >= 1.
 */
[[nodiscard]] MlpParams init_network(const std::vector<int>& layer_sizes, std::uint64_t init_seed);

/** @brief Same shapes as init_network, every weight and bias zero. */
[[nodiscard]] MlpParams zero_network(const std::vector<int>& layer_sizes);

/**
 * @brief Per-component normalization from a sampling box and a target scale.
 *
 * Inputs are mapped to [-1, 1] over @p domain and outputs are multiplied by
 * @p output_scale (entries must be positive).
 */
void set_normalization(MlpParams& params, const Box& domain, const Eigen::VectorXd& output_scale);

/**
 * @brief Normalization fitted to training samples: the inputs' bounding box
 * and the per-component rms of the targets.
 */
void set_normalization_from_samples(MlpParams& params, std::span<const Sample> samples);

[[nodiscard]] StateVector forward(const MlpParams& params, const StateVector& x);
/** @brief Column-wise forward pass over an n x B batch. */
[[nodiscard]] Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& inputs);

struct LossAndGradient {
  double loss = 0.0;
  MlpGradient gradient;
};

/**
 * @brief Mean squared error (1/B) sum_j |target_j - N(input_j)|^2 and its exact gradient.
 *
 * Throws std::invalid_argument for an empty batch and NumericalError naming
 * the first sample whose network output is not finite.
 */
[[nodiscard]] LossAndGradient loss_and_gradients(const MlpParams& params, std::span<const Sample> batch);
[[nodiscard]] LossAndGradient loss_and_gradients(const MlpParams& params, const Eigen::MatrixXd& inputs,
                                                 const Eigen::MatrixXd& targets);

/** @brief Loss only. */
[[nodiscard]] double mean_squared_error(const MlpParams& params, std::span<const Sample> data);

struct TrainConfig {
  int epochs = 300;
  std::size_t batch_size = 10;
  double learning_rate = 1e-3;
  /** Learning rate after the last epoch as a fraction of the initial one (exponential schedule); 1 disables. */
  double lr_decay = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double validation_fraction = 0.1;
  std::uint64_t shuffle_seed = 2;
  std::uint64_t init_seed = 1;

  /** @brief Throws std::invalid_argument naming the offending field. */
  void validate(std::size_t num_samples) const;
};

/** @brief Number of trailing samples held out for validation. */
[[nodiscard]] std::size_t validation_count(std::size_t num_samples, double fraction);

struct TrainRecord {
  /** Full training-slice loss after each epoch. */
  std::vector<double> train_loss;
  /** Validation-slice loss after each epoch; empty when no samples are held out. */
  std::vector<double> validation_loss;
  double network_norm = 0.0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string failure;

  [[nodiscard]] double final_train_loss() const;
  [[nodiscard]] double final_validation_loss() const;
};

struct TrainResult {
  MlpParams params;
  TrainRecord record;
};

/**
 * @brief Adam on shuffled mini-batches.
 *
 * The trailing validation_fraction of @p data is held out before training and
 * only scored. A final short batch is trained, not dropped. Final-epoch
 * parameters are returned. If the loss turns non-finite the run stops, the
 * record is flagged failed and the parameters at the point of failure are
 * returned.
 */
[[nodiscard]] TrainResult train(MlpParams params, std::span<const Sample> data, const TrainConfig& cfg);

/**
 * Text format: line 1 the layer sizes; then per layer the weight rows followed
 * by one bias row, 17-significant-digit decimals. A normalized network appends
 * a `normalization` line and three rows (input offset, input scale, output scale).
 */
void save_mlp(std::ostream& out, const MlpParams& params);
[[nodiscard]] MlpParams load_mlp(std::istream& in);

}  // namespace flowmap
