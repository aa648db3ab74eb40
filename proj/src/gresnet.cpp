#include "flowmap/gresnet.hpp"

#include "flowmap/prior_models.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace flowmap {
namespace {

using nlohmann::json;

std::vector<int> layer_sizes_for(std::size_t n, const std::vector<int>& hidden) {
  if (hidden.empty()) throw std::invalid_argument("correction network needs at least one hidden layer");
  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(n));
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<int>(n));
  return sizes;
}

std::vector<StateVector> initial_states(const SnapshotPairSet& data) {
  std::vector<StateVector> xs;
  xs.reserve(data.size());
  for (const auto& p : data.pairs()) xs.push_back(p.x1);
  return xs;
}

template <class Step>
RolloutResult run_rollout(Step&& step, double lag, const StateVector& x0, std::size_t steps, const Box& guard) {
  RolloutResult out;
  out.trajectory.times.reserve(steps + 1);
  out.trajectory.states.reserve(steps + 1);
  out.trajectory.times.push_back(0.0);
  out.trajectory.states.push_back(x0);
  for (std::size_t k = 1; k <= steps; ++k) {
    StateVector next;
    try {
      next = step(out.trajectory.states.back());
    } catch (const NumericalError& e) {
      out.blew_up = true;
      out.reason = "step " + std::to_string(k) + ": " + e.what();
      return out;
    }
    if (!guard.contains(next)) {
      out.blew_up = true;
      out.reason = "step " + std::to_string(k) + ": state " + describe(next) + " left the guard box";
      return out;
    }
    out.trajectory.states.push_back(std::move(next));
    out.trajectory.times.push_back(static_cast<double>(k) * lag);
  }
  return out;
}

json config_to_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate},
              {"lr_decay", cfg.lr_decay},
              {"adam_beta1", cfg.adam_beta1},
              {"adam_beta2", cfg.adam_beta2},
              {"adam_eps", cfg.adam_eps},
              {"validation_fraction", cfg.validation_fraction},
              {"shuffle_seed", cfg.shuffle_seed},
              {"init_seed", cfg.init_seed}};
}

}  // namespace

GResNetModel::GResNetModel(PriorPtr prior, MlpParams correction, double lag, Box domain)
    : prior_(std::move(prior)), correction_(std::move(correction)), lag_(lag), domain_(std::move(domain)) {
  if (!prior_) throw std::invalid_argument("gResNet model needs a prior");
  correction_.validate();
  if (correction_.input_dim() != prior_->dim() || correction_.output_dim() != prior_->dim()) {
    throw DimensionError("correction network width does not match the prior dimension");
  }
  if (!(lag_ > 0.0)) throw std::invalid_argument("model lag must be positive");
  if (domain_.dim() != prior_->dim()) throw DimensionError("model domain does not match the state dimension");
}

std::vector<Sample> compute_residues(const PriorOperator& prior, const SnapshotPairSet& data) {
  if (data.dim() != prior.dim()) throw DimensionError("prior and data dimensions differ");
  std::vector<Sample> out;
  out.reserve(data.size());
  for (const auto& p : data.pairs()) out.push_back({p.x1, p.x2 - prior.apply(p.x1)});
  return out;
}

GResNetFit train_gresnet(PriorPtr prior, const SnapshotPairSet& data, const std::vector<int>& hidden,
                         const TrainConfig& cfg, const CorrectionOptions& options) {
  if (!prior) throw std::invalid_argument("train_gresnet needs a prior");
  const std::vector<Sample> residues = compute_residues(*prior, data);
  const auto sizes = layer_sizes_for(data.dim(), hidden);
  MlpParams init = options.zero_init ? zero_network(sizes) : init_network(sizes, cfg.init_seed);
  if (options.normalize) {
    const std::size_t n_train = data.size() - validation_count(data.size(), cfg.validation_fraction);
    set_normalization_from_samples(init, std::span<const Sample>(residues).first(n_train));
  }
  TrainResult trained = train(std::move(init), residues, cfg);
  GResNetModel model(std::move(prior), std::move(trained.params), data.lag(), Box::bounding(initial_states(data)));
  TrainRecord record = std::move(trained.record);
  if (!record.failed) {
    const Eigen::MatrixXd out = forward_batch(model.correction(), data.initial_matrix());
    record.network_norm = std::sqrt(out.colwise().squaredNorm().mean());
  }
  return {std::move(model), std::move(record)};
}

ResNetFit train_standard_resnet(const SnapshotPairSet& data, const std::vector<int>& hidden, const TrainConfig& cfg) {
  ResNetFit fit;
  fit.targets.reserve(data.size());
  for (const auto& p : data.pairs()) fit.targets.push_back({p.x1, p.x2 - p.x1});
  fit.result = train(init_network(layer_sizes_for(data.dim(), hidden), cfg.init_seed), fit.targets, cfg);
  return fit;
}

double direct_loss(const PriorOperator& prior, const MlpParams& correction, const SnapshotPairSet& data) {
  double sum = 0.0;
  for (const auto& p : data.pairs()) sum += (p.x2 - prior.apply(p.x1) - forward(correction, p.x1)).squaredNorm();
  return sum / static_cast<double>(data.size());
}

StateVector predict_step(const GResNetModel& model, const StateVector& x) {
  StateVector next = model.prior().apply(x) + forward(model.correction(), x);
  if (!next.allFinite()) throw NumericalError("non-finite prediction from state " + describe(x));
  return next;
}

RolloutResult rollout(const GResNetModel& model, const StateVector& x0, std::size_t steps, std::optional<Box> guard) {
  if (static_cast<std::size_t>(x0.size()) != model.dim()) throw DimensionError("initial state dimension mismatch");
  const Box box = guard ? *guard : model.domain().scaled(kGuardFactor);
  return run_rollout([&](const StateVector& x) { return predict_step(model, x); }, model.lag(), x0, steps, box);
}

RolloutResult rollout_prior(const PriorOperator& prior, double lag, const StateVector& x0, std::size_t steps,
                            const Box& guard) {
  if (static_cast<std::size_t>(x0.size()) != prior.dim()) throw DimensionError("initial state dimension mismatch");
  return run_rollout(
      [&](const StateVector& x) {
        StateVector next = prior.apply(x);
        if (!next.allFinite()) throw NumericalError("non-finite prior prediction from state " + describe(x));
        return next;
      },
      lag, x0, steps, guard);
}

void save_model_bundle(const std::filesystem::path& dir, const GResNetModel& model, const TrainConfig& cfg,
                       const std::string& extra_metadata) {
  std::ostringstream prior;
  model.prior().save(prior);
  std::ostringstream correction;
  save_mlp(correction, model.correction());

  json meta;
  meta["dim"] = model.dim();
  meta["lag"] = model.lag();
  meta["prior_kind"] = std::string(to_string(model.prior().kind()));
  json domain = json::array();
  for (const auto& [lo, hi] : model.domain().bounds) domain.push_back({lo, hi});
  meta["domain"] = domain;
  meta["train_config"] = config_to_json(cfg);
  if (!extra_metadata.empty()) meta.update(json::parse(extra_metadata));

  std::filesystem::create_directories(dir);
  write_text_atomic(dir / "prior.txt", prior.str());
  write_text_atomic(dir / "correction.txt", correction.str());
  write_text_atomic(dir / "metadata.json", meta.dump(2) + "\n");
}

GResNetModel load_model_bundle(const std::filesystem::path& dir) {
  std::istringstream prior_text(read_text(dir / "prior.txt"));
  PriorPtr prior = load_prior(prior_text);
  std::istringstream correction_text(read_text(dir / "correction.txt"));
  MlpParams correction = load_mlp(correction_text);
  const json meta = json::parse(read_text(dir / "metadata.json"));
  Box domain;
  for (const auto& b : meta.at("domain")) domain.bounds.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
  return GResNetModel(std::move(prior), std::move(correction), meta.at("lag").get<double>(), std::move(domain));
}

}  // namespace flowmap
