#include "flowmap/experiment.hpp"

#include "flowmap/analysis.hpp"
#include "flowmap/gresnet.hpp"
#include "flowmap/ode_suite.hpp"
#include "flowmap/prior_models.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace flowmap {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class T>
T field(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError("field '" + key + "': " + e.msg);
  }
}

StateVector to_state(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string yaml_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s + "]";
}

std::string yaml_state(const StateVector& x) {
  return yaml_list(std::vector<double>(x.data(), x.data() + x.size()));
}

json state_json(const StateVector& x) { return std::vector<double>(x.data(), x.data() + x.size()); }

// JSON cannot hold NaN; absent values are written as null.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string trajectory_csv(const Trajectory& traj, const SystemSpec& system, const std::string& metadata) {
  std::ostringstream out;
  out << "# " << metadata << '\n' << "time";
  for (const auto& name : system.state_names) out << ',' << name;
  const bool algebraic = static_cast<bool>(system.algebraic_outputs);
  if (algebraic) {
    for (const auto& name : system.algebraic_names) out << ',' << name;
  }
  out << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << format_double(traj.times[k]);
    for (Eigen::Index i = 0; i < traj.states[k].size(); ++i) out << ',' << format_double(traj.states[k][i]);
    if (algebraic) {
      const StateVector v = system.algebraic_outputs(traj.states[k]);
      for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << format_double(v[i]);
    }
    out << '\n';
  }
  return out.str();
}

Trajectory prefix(const Trajectory& traj, std::size_t count) {
  Trajectory out;
  out.times.assign(traj.times.begin(), traj.times.begin() + static_cast<std::ptrdiff_t>(count));
  out.states.assign(traj.states.begin(), traj.states.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

json error_json(const ErrorSummary& e, bool blew_up) {
  return json{{"max_error", e.max_error},
              {"final_error", e.final_error},
              {"mean_error", e.mean_error},
              {"steps_completed", e.per_step_error.empty() ? 0 : e.per_step_error.size() - 1},
              {"blew_up", blew_up}};
}

std::string train_record_csv(const TrainRecord& record) {
  std::ostringstream out;
  out << "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < record.train_loss.size(); ++e) {
    out << (e + 1) << ',' << format_double(record.train_loss[e]) << ','
        << (e < record.validation_loss.size() ? format_double(record.validation_loss[e]) : std::string("nan")) << '\n';
  }
  return out.str();
}

json train_config_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"lr_decay", t.lr_decay},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_eps", t.adam_eps},
              {"validation_fraction", t.validation_fraction},
              {"init_seed", t.init_seed},
              {"shuffle_seed", t.shuffle_seed}};
}

struct PriorBuild {
  PriorPtr prior;
  FitReport report;
  std::optional<TrainRecord> record;
};

PriorBuild build_prior(const ExperimentConfig& cfg, const SnapshotPairSet& train_slice) {
  PriorBuild out;
  switch (cfg.prior) {
    case PriorKind::Identity:
      out.prior = std::make_shared<IdentityPrior>(train_slice.dim());
      out.report = residue_report(*out.prior, train_slice);
      out.report.truncation_tol = 0.0;
      break;
    case PriorKind::Dmd: {
      AffineFit fit = fit_dmd(train_slice);
      out.prior = std::make_shared<AffinePrior>(fit.map, PriorKind::Dmd);
      out.report = std::move(fit.report);
      break;
    }
    case PriorKind::Mdmd: {
      AffineFit fit = fit_mdmd(train_slice);
      out.prior = std::make_shared<AffinePrior>(fit.map, PriorKind::Mdmd);
      out.report = std::move(fit.report);
      break;
    }
    case PriorKind::ReducedOde:
      out.prior = make_reduced_ode_prior(builtin_system(cfg.reduced_system), train_slice.dim(), cfg.lag,
                                         cfg.reduced_substeps, cfg.reduced_lift);
      out.report = residue_report(*out.prior, train_slice);
      out.report.truncation_tol = 0.0;
      break;
    case PriorKind::ShallowNet: {
      TrainConfig t = cfg.train;
      t.epochs = cfg.prior_epochs;
      if (cfg.prior_learning_rate > 0.0) t.learning_rate = cfg.prior_learning_rate;
      t.init_seed = cfg.prior_seed;
      t.shuffle_seed = cfg.prior_seed + 1;
      t.validation_fraction = 0.0;
      t.batch_size = std::min(t.batch_size, train_slice.size());
      ShallowPriorFit fit = fit_shallow_prior(train_slice, cfg.prior_width, t, cfg.normalize);
      if (fit.record.failed) throw NumericalError("shallow prior training diverged: " + fit.record.failure);
      out.prior = fit.prior;
      out.report = std::move(fit.report);
      out.record = std::move(fit.record);
      break;
    }
  }
  return out;
}

json prior_json(const ExperimentConfig& cfg, const PriorBuild& built) {
  json p{{"kind", std::string(to_string(cfg.prior))},
         {"rms_residue", built.report.rms_residue},
         {"rank_deficient", built.report.rank_deficient},
         {"truncation_tol", built.report.truncation_tol}};
  if (const auto* affine = dynamic_cast<const AffinePrior*>(built.prior.get())) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < affine->map().A.rows(); ++r) {
      std::vector<double> row(affine->map().A.row(r).data(), affine->map().A.row(r).data() + 0);
      row.clear();
      for (Eigen::Index c = 0; c < affine->map().A.cols(); ++c) row.push_back(affine->map().A(r, c));
      rows.push_back(row);
    }
    p["A"] = rows;
    p["b"] = state_json(affine->map().b);
  }
  if (built.record) {
    p["train_loss"] = number_or_null(built.record->final_train_loss());
    p["epochs"] = built.record->train_loss.size();
  }
  return p;
}

void log_line(const RunOptions& options, const std::string& line) {
  if (!options.quiet && options.log) *options.log << line << std::endl;
}

}  // namespace

int ExperimentConfig::effective_substeps() const {
  return substeps > 0 ? substeps : builtin_system(system).default_substeps;
}

int ExperimentConfig::effective_reference_substeps() const {
  return reference_substeps > 0 ? reference_substeps : 10 * effective_substeps();
}

void ExperimentConfig::validate() const {
  const auto& names = builtin_system_names();
  if (std::find(names.begin(), names.end(), system) == names.end()) {
    throw ConfigError("field 'system': unknown system '" + system + "'");
  }
  const SystemSpec spec = builtin_system(system);
  if (domain_override.dim() != 0) {
    if (domain_override.dim() != spec.dim) throw ConfigError("field 'domain': needs one [lo, hi] pair per dimension");
    for (const auto& [lo, hi] : domain_override.bounds) {
      if (!(lo < hi)) throw ConfigError("field 'domain': every pair must satisfy lo < hi");
    }
  }
  if (!(lag > 0.0)) throw ConfigError("field 'lag': must be positive");
  if (num_pairs < 1) throw ConfigError("field 'num_pairs': must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("field 'noise': must be >= 0");
  if (substeps < 0) throw ConfigError("field 'substeps': must be >= 0");
  if (reference_substeps < 0) throw ConfigError("field 'reference_substeps': must be >= 0");
  if (hidden.empty()) throw ConfigError("field 'hidden': needs at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("field 'hidden': widths must be >= 1");
  }
  if (prior == PriorKind::ShallowNet) {
    if (prior_width < 1) throw ConfigError("field 'prior_width': must be >= 1");
    if (prior_epochs < 0) throw ConfigError("field 'prior_epochs': must be >= 0");
  }
  if (!(prior_learning_rate >= 0.0) || !std::isfinite(prior_learning_rate)) {
    throw ConfigError("field 'prior_learning_rate': must be finite and >= 0");
  }
  if (prior == PriorKind::ReducedOde) {
    if (std::find(names.begin(), names.end(), reduced_system) == names.end()) {
      throw ConfigError("field 'reduced_system': unknown system '" + reduced_system + "'");
    }
    const SystemSpec reduced = builtin_system(reduced_system);
    if (reduced_lift.size() != reduced.dim) {
      throw ConfigError("field 'reduced_lift': needs one index per reduced component");
    }
    for (auto idx : reduced_lift) {
      if (idx >= spec.dim) throw ConfigError("field 'reduced_lift': index out of range");
    }
    if (reduced_substeps < 1) throw ConfigError("field 'reduced_substeps': must be >= 1");
  }
  try {
    train.validate(0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  const std::size_t n_val = validation_count(num_pairs, train.validation_fraction);
  if (num_pairs - n_val < 1) throw ConfigError("field 'validation_fraction': leaves no training pairs");
  if (train.batch_size > num_pairs - n_val) throw ConfigError("field 'batch_size': exceeds the training set size");
  for (std::size_t i = 0; i < initial_conditions.size(); ++i) {
    if (static_cast<std::size_t>(initial_conditions[i].size()) != spec.dim) {
      throw ConfigError("field 'initial_conditions': entry " + std::to_string(i) + " has wrong dimension");
    }
  }
  if (psd && psd_component >= spec.dim) throw ConfigError("field 'psd_component': out of range");
  if (psd && horizon + 1 < kMinSpectrumLength) throw ConfigError("field 'horizon': too short for a spectrum");
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config is not valid YAML: " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping of keys to values");

  ExperimentConfig cfg;
  bool have_system = false;
  using Setter = std::function<void(const YAML::Node&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"name", [&](auto& n, auto& k) { cfg.name = field<std::string>(n, k); }},
      {"system", [&](auto& n, auto& k) { cfg.system = field<std::string>(n, k); have_system = true; }},
      {"domain",
       [&](auto& n, auto& k) {
         cfg.domain_override.bounds.clear();
         for (const auto& pair : field<std::vector<std::vector<double>>>(n, k)) {
           if (pair.size() != 2) throw ConfigError("field 'domain': each entry must be [lo, hi]");
           cfg.domain_override.bounds.emplace_back(pair[0], pair[1]);
         }
       }},
      {"lag", [&](auto& n, auto& k) { cfg.lag = field<double>(n, k); }},
      {"num_pairs", [&](auto& n, auto& k) { cfg.num_pairs = field<std::size_t>(n, k); }},
      {"noise", [&](auto& n, auto& k) { cfg.noise = field<double>(n, k); }},
      {"data_seed", [&](auto& n, auto& k) { cfg.data_seed = field<std::uint64_t>(n, k); }},
      {"substeps", [&](auto& n, auto& k) { cfg.substeps = field<int>(n, k); }},
      {"prior",
       [&](auto& n, auto& k) {
         try {
           cfg.prior = prior_kind_from_string(field<std::string>(n, k));
         } catch (const std::invalid_argument& e) {
           throw ConfigError("field 'prior': " + std::string(e.what()));
         }
       }},
      {"prior_width", [&](auto& n, auto& k) { cfg.prior_width = field<int>(n, k); }},
      {"prior_epochs", [&](auto& n, auto& k) { cfg.prior_epochs = field<int>(n, k); }},
      {"prior_seed", [&](auto& n, auto& k) { cfg.prior_seed = field<std::uint64_t>(n, k); }},
      {"prior_learning_rate", [&](auto& n, auto& k) { cfg.prior_learning_rate = field<double>(n, k); }},
      {"reduced_system", [&](auto& n, auto& k) { cfg.reduced_system = field<std::string>(n, k); }},
      {"reduced_lift", [&](auto& n, auto& k) { cfg.reduced_lift = field<std::vector<std::size_t>>(n, k); }},
      {"reduced_substeps", [&](auto& n, auto& k) { cfg.reduced_substeps = field<int>(n, k); }},
      {"hidden", [&](auto& n, auto& k) { cfg.hidden = field<std::vector<int>>(n, k); }},
      {"init",
       [&](auto& n, auto& k) {
         const auto v = field<std::string>(n, k);
         if (v != "gaussian" && v != "zero") throw ConfigError("field 'init': must be 'gaussian' or 'zero'");
         cfg.zero_init = v == "zero";
       }},
      {"normalize", [&](auto& n, auto& k) { cfg.normalize = field<bool>(n, k); }},
      {"epochs", [&](auto& n, auto& k) { cfg.train.epochs = field<int>(n, k); }},
      {"batch_size", [&](auto& n, auto& k) { cfg.train.batch_size = field<std::size_t>(n, k); }},
      {"learning_rate", [&](auto& n, auto& k) { cfg.train.learning_rate = field<double>(n, k); }},
      {"lr_decay", [&](auto& n, auto& k) { cfg.train.lr_decay = field<double>(n, k); }},
      {"adam_beta1", [&](auto& n, auto& k) { cfg.train.adam_beta1 = field<double>(n, k); }},
      {"adam_beta2", [&](auto& n, auto& k) { cfg.train.adam_beta2 = field<double>(n, k); }},
      {"adam_eps", [&](auto& n, auto& k) { cfg.train.adam_eps = field<double>(n, k); }},
      {"validation_fraction", [&](auto& n, auto& k) { cfg.train.validation_fraction = field<double>(n, k); }},
      {"init_seed", [&](auto& n, auto& k) { cfg.train.init_seed = field<std::uint64_t>(n, k); }},
      {"shuffle_seed", [&](auto& n, auto& k) { cfg.train.shuffle_seed = field<std::uint64_t>(n, k); }},
      {"initial_conditions",
       [&](auto& n, auto& k) {
         cfg.initial_conditions.clear();
         for (const auto& x : field<std::vector<std::vector<double>>>(n, k)) cfg.initial_conditions.push_back(to_state(x));
       }},
      {"horizon", [&](auto& n, auto& k) { cfg.horizon = field<std::size_t>(n, k); }},
      {"reference_substeps", [&](auto& n, auto& k) { cfg.reference_substeps = field<int>(n, k); }},
      {"psd", [&](auto& n, auto& k) { cfg.psd = field<bool>(n, k); }},
      {"psd_component", [&](auto& n, auto& k) { cfg.psd_component = field<std::size_t>(n, k); }},
      {"output_dir", [&](auto& n, auto& k) { cfg.output_dir = field<std::string>(n, k); }},
  };
  for (const auto& entry : root) {
    const auto key = entry.first.as<std::string>();
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown field '" + key + "'");
    it->second(entry.second, key);
  }
  if (!have_system) throw ConfigError("field 'system': required");
  if (cfg.name.empty()) cfg.name = cfg.system + "_" + std::string(to_string(cfg.prior));
  if (cfg.output_dir.empty()) cfg.output_dir = std::filesystem::path("runs") / cfg.name;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

std::string effective_config_yaml(const ExperimentConfig& cfg) {
  const SystemSpec spec = builtin_system(cfg.system);
  const Box& domain = cfg.domain_override.dim() ? cfg.domain_override : spec.domain;
  std::ostringstream out;
  out << "# effective configuration: every field explicit\n";
  out << "name: " << cfg.name << '\n';
  out << "system: " << cfg.system << '\n';
  out << "domain: [";
  for (std::size_t i = 0; i < domain.dim(); ++i) {
    out << (i ? ", " : "") << yaml_list({domain.bounds[i].first, domain.bounds[i].second});
  }
  out << "]\n";
  out << "lag: " << format_double(cfg.lag) << '\n';
  out << "num_pairs: " << cfg.num_pairs << '\n';
  out << "noise: " << format_double(cfg.noise) << "  # Gaussian, std = noise * domain half-width per component\n";
  out << "data_seed: " << cfg.data_seed << '\n';
  out << "substeps: " << cfg.effective_substeps() << '\n';
  out << "prior: " << to_string(cfg.prior) << '\n';
  out << "prior_width: " << cfg.prior_width << '\n';
  out << "prior_epochs: " << cfg.prior_epochs << '\n';
  out << "prior_seed: " << cfg.prior_seed << '\n';
  out << "prior_learning_rate: " << format_double(cfg.prior_learning_rate) << '\n';
  out << "reduced_system: \"" << cfg.reduced_system << "\"\n";
  out << "reduced_lift: [";
  for (std::size_t i = 0; i < cfg.reduced_lift.size(); ++i) out << (i ? ", " : "") << cfg.reduced_lift[i];
  out << "]\n";
  out << "reduced_substeps: " << cfg.reduced_substeps << '\n';
  out << "hidden: [";
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) out << (i ? ", " : "") << cfg.hidden[i];
  out << "]\n";
  out << "init: " << (cfg.zero_init ? "zero" : "gaussian") << '\n';
  out << "normalize: " << (cfg.normalize ? "true" : "false") << '\n';
  out << "epochs: " << cfg.train.epochs << '\n';
  out << "batch_size: " << cfg.train.batch_size << '\n';
  out << "learning_rate: " << format_double(cfg.train.learning_rate) << '\n';
  out << "lr_decay: " << format_double(cfg.train.lr_decay) << '\n';
  out << "adam_beta1: " << format_double(cfg.train.adam_beta1) << '\n';
  out << "adam_beta2: " << format_double(cfg.train.adam_beta2) << '\n';
  out << "adam_eps: " << format_double(cfg.train.adam_eps) << '\n';
  out << "validation_fraction: " << format_double(cfg.train.validation_fraction) << '\n';
  out << "init_seed: " << cfg.train.init_seed << '\n';
  out << "shuffle_seed: " << cfg.train.shuffle_seed << '\n';
  out << "initial_conditions: [";
  for (std::size_t i = 0; i < cfg.initial_conditions.size(); ++i) {
    out << (i ? ", " : "") << yaml_state(cfg.initial_conditions[i]);
  }
  out << "]\n";
  out << "horizon: " << cfg.horizon << '\n';
  out << "reference_substeps: " << cfg.effective_reference_substeps() << '\n';
  out << "psd: " << (cfg.psd ? "true" : "false") << '\n';
  out << "psd_component: " << cfg.psd_component << '\n';
  out << "output_dir: \"" << cfg.output_dir.generic_string() << "\"\n";
  return out.str();
}

void override_seeds(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.data_seed = seed;
  cfg.train.init_seed = seed + 1;
  cfg.train.shuffle_seed = seed + 2;
  cfg.prior_seed = seed + 3;
}

RunOutcome run_experiment(const ExperimentConfig& cfg_in, const RunOptions& options) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  if (options.output_dir) cfg.output_dir = *options.output_dir;
  const auto& dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  RunOutcome outcome;
  outcome.output_dir = dir;
  json timing;

  SystemSpec system = builtin_system(cfg.system);
  if (cfg.domain_override.dim()) system.domain = cfg.domain_override;
  write_text_atomic(dir / "effective_config.yaml", effective_config_yaml(cfg));

  json summary;
  summary["name"] = cfg.name;
  summary["system"] = cfg.system;
  summary["lag"] = cfg.lag;
  summary["dim"] = system.dim;
  summary["data"] = {{"num_pairs", cfg.num_pairs},
                     {"noise", cfg.noise},
                     {"noise_model", "gaussian, std = noise * domain half-width"},
                     {"seed", cfg.data_seed},
                     {"substeps", cfg.effective_substeps()}};

  // Data.
  auto t0 = Clock::now();
  SamplingConfig sampling;
  sampling.num_pairs = cfg.num_pairs;
  sampling.lag = cfg.lag;
  sampling.noise_level = cfg.noise;
  sampling.seed = cfg.data_seed;
  sampling.integrator_substeps = cfg.effective_substeps();
  const SnapshotPairSet data = generate_pairs(system, sampling);
  {
    std::ostringstream text;
    save_snapshots(text, data, {cfg.system, cfg.noise, cfg.data_seed});
    write_text_atomic(dir / "data.txt", text.str());
  }
  timing["data_seconds"] = seconds_since(t0);
  log_line(options, "generated " + std::to_string(data.size()) + " pairs of " + cfg.system);

  auto finish = [&]() {
    outcome.summary_json = summary.dump(2) + "\n";
    write_text_atomic(dir / "summary.json", outcome.summary_json);
    write_text_atomic(dir / "timing.json", timing.dump(2) + "\n");
    return outcome;
  };
  if (options.stage == RunStage::DataOnly) return finish();

  // Prior, fitted on the training slice only.
  t0 = Clock::now();
  const std::size_t n_train = data.size() - validation_count(data.size(), cfg.train.validation_fraction);
  const SnapshotPairSet train_slice = data.slice(0, n_train);
  const PriorBuild built = build_prior(cfg, train_slice);
  {
    std::ostringstream text;
    built.prior->save(text);
    write_text_atomic(dir / "prior.txt", text.str());
  }
  summary["prior"] = prior_json(cfg, built);
  timing["prior_seconds"] = seconds_since(t0);
  log_line(options, "prior " + std::string(to_string(cfg.prior)) + ": rms residue " +
                        format_double(built.report.rms_residue));
  if (options.stage == RunStage::PriorOnly) return finish();

  // Correction network.
  t0 = Clock::now();
  GResNetFit fit = train_gresnet(built.prior, data, cfg.hidden, cfg.train, {cfg.zero_init, cfg.normalize});
  timing["train_seconds"] = seconds_since(t0);
  write_text_atomic(dir / "train_record.csv", train_record_csv(fit.record));
  summary["training"] = {{"config", train_config_json(cfg.train)},
                         {"hidden", cfg.hidden},
                         {"init", cfg.zero_init ? "zero" : "gaussian"},
                         {"normalize", cfg.normalize},
                         {"epochs_completed", fit.record.train_loss.size()},
                         {"final_train_loss", number_or_null(fit.record.final_train_loss())},
                         {"final_validation_loss", number_or_null(fit.record.final_validation_loss())},
                         {"failed", fit.record.failed},
                         {"failure", fit.record.failure}};
  if (fit.record.failed) {
    outcome.ok = false;
    outcome.failure = "training diverged: " + fit.record.failure;
    log_line(options, outcome.failure);
    return finish();
  }
  save_model_bundle(dir / "model", fit.model, cfg.train,
                    json{{"name", cfg.name}, {"system", cfg.system}, {"data_seed", cfg.data_seed}}.dump());
  summary["network_norm"] = fit.record.network_norm;
  log_line(options, "trained correction: final loss " + format_double(fit.record.final_train_loss()));

  // Rollouts from each initial condition, in parallel.
  t0 = Clock::now();
  const Box guard = fit.model.domain().scaled(kGuardFactor);
  const std::size_t count = cfg.initial_conditions.size();
  std::vector<json> per_ic(count);
  parallel_for(count, [&](std::size_t i) {
    const StateVector& x0 = cfg.initial_conditions[i];
    const Trajectory reference =
        reference_trajectory(system, x0, cfg.lag, cfg.horizon, cfg.effective_reference_substeps());
    const RolloutResult model_run = rollout(fit.model, x0, cfg.horizon, guard);
    const RolloutResult prior_run = rollout_prior(*built.prior, cfg.lag, x0, cfg.horizon, guard);
    const ErrorSummary model_err =
        trajectory_error(model_run.trajectory, prefix(reference, model_run.trajectory.size()));
    const ErrorSummary prior_err =
        trajectory_error(prior_run.trajectory, prefix(reference, prior_run.trajectory.size()));

    const std::string tag = std::to_string(i);
    const std::string meta = "system=" + cfg.system + " x0=" + describe(x0) + " lag=" + format_double(cfg.lag);
    write_text_atomic(dir / ("reference_" + tag + ".csv"), trajectory_csv(reference, system, "reference " + meta));
    write_text_atomic(dir / ("rollout_" + tag + ".csv"), trajectory_csv(model_run.trajectory, system, "model " + meta));
    write_text_atomic(dir / ("prior_rollout_" + tag + ".csv"),
                      trajectory_csv(prior_run.trajectory, system, "prior " + meta));
    {
      std::ostringstream text;
      write_error_csv(text, model_err, "model error " + meta);
      write_text_atomic(dir / ("error_" + tag + ".csv"), text.str());
    }
    {
      std::ostringstream text;
      write_error_csv(text, prior_err, "prior-only error " + meta);
      write_text_atomic(dir / ("prior_error_" + tag + ".csv"), text.str());
    }

    json entry{{"x0", state_json(x0)},
               {"steps", cfg.horizon},
               {"model", error_json(model_err, model_run.blew_up)},
               {"prior_only", error_json(prior_err, prior_run.blew_up)}};
    if (model_run.blew_up) entry["model"]["reason"] = model_run.reason;
    if (prior_run.blew_up) entry["prior_only"]["reason"] = prior_run.reason;

    if (cfg.psd) {
      const std::string comp = "component=" + std::to_string(cfg.psd_component);
      const Spectrum ref_psd = power_spectrum(reference.component(cfg.psd_component), cfg.lag);
      auto spectrum_of = [&](const RolloutResult& run, const char* label) -> std::optional<Spectrum> {
        if (run.blew_up) return std::nullopt;
        Spectrum s = power_spectrum(run.trajectory.component(cfg.psd_component), cfg.lag);
        std::ostringstream text;
        write_spectrum_csv(text, s, std::string(label) + " " + comp + " " + meta);
        write_text_atomic(dir / ("psd_" + tag + "_" + label + ".csv"), text.str());
        return s;
      };
      {
        std::ostringstream text;
        write_spectrum_csv(text, ref_psd, "reference " + comp + " " + meta);
        write_text_atomic(dir / ("psd_" + tag + "_reference.csv"), text.str());
      }
      const auto model_psd = spectrum_of(model_run, "model");
      const auto prior_psd = spectrum_of(prior_run, "prior");
      entry["spectrum"] = {
          {"component", cfg.psd_component},
          {"dominant_frequency",
           {{"reference", ref_psd.dominant_frequency},
            {"model", model_psd ? json(model_psd->dominant_frequency) : json(nullptr)},
            {"prior_only", prior_psd ? json(prior_psd->dominant_frequency) : json(nullptr)}}},
          {"agreement",
           {{"model", model_psd ? spectral_agreement(*model_psd, ref_psd) : 0.0},
            {"prior_only", prior_psd ? spectral_agreement(*prior_psd, ref_psd) : 0.0}}}};
    }
    per_ic[i] = std::move(entry);
  });
  timing["rollout_seconds"] = seconds_since(t0);

  double worst = 0.0;
  bool any_blow_up = false;
  for (const auto& e : per_ic) {
    worst = std::max(worst, e["model"]["max_error"].get<double>());
    any_blow_up = any_blow_up || e["model"]["blew_up"].get<bool>();
  }
  summary["initial_conditions"] = per_ic;
  summary["prediction_error"] = count ? json(worst) : json(nullptr);
  summary["any_blow_up"] = any_blow_up;
  return finish();
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "# system=" << system << " lag=" << format_double(lag) << '\n';
  out << "label,prior,prediction_error,training_loss,validation_loss,network_norm\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.prior << ',' << format_double(r.prediction_error) << ',' << format_double(r.train_loss)
        << ',' << format_double(r.validation_loss) << ',' << format_double(r.network_norm) << '\n';
  }
  return out.str();
}

std::string ComparisonTable::to_text() const {
  std::ostringstream out;
  out << "system " << system << ", lag " << format_double(lag) << '\n';
  out << std::left << std::setw(28) << "model" << std::right << std::setw(18) << "prediction error" << std::setw(16)
      << "training loss" << std::setw(18) << "validation loss" << std::setw(16) << "network norm" << '\n';
  out << std::scientific << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::left << std::setw(28) << r.label << std::right << std::setw(18) << r.prediction_error
        << std::setw(16) << r.train_loss << std::setw(18) << r.validation_loss << std::setw(16) << r.network_norm
        << '\n';
  }
  return out.str();
}

ComparisonTable compare_runs(const std::vector<std::filesystem::path>& summaries) {
  if (summaries.size() < 2) throw ConfigError("compare needs at least two summaries");
  ComparisonTable table;
  auto number = [](const json& j, const char* key) {
    return j.contains(key) && j.at(key).is_number() ? j.at(key).get<double>() : std::nan("");
  };
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    json s;
    try {
      s = json::parse(read_text(summaries[i]));
    } catch (const std::exception& e) {
      throw ConfigError("cannot read summary " + summaries[i].string() + ": " + e.what());
    }
    if (!s.contains("training") || !s.contains("prior")) {
      throw ConfigError(summaries[i].string() + " is not a completed run summary");
    }
    const auto system = s.at("system").get<std::string>();
    const double lag = s.at("lag").get<double>();
    if (i == 0) {
      table.system = system;
      table.lag = lag;
    } else if (system != table.system || lag != table.lag) {
      throw ConfigError("summaries describe different experiments: " + table.system + " lag " +
                        format_double(table.lag) + " vs " + system + " lag " + format_double(lag) + " (" +
                        summaries[i].string() + ")");
    }
    ComparisonRow row;
    row.label = s.value("name", summaries[i].parent_path().filename().string());
    row.prior = s.at("prior").at("kind").get<std::string>();
    row.prediction_error = number(s, "prediction_error");
    row.train_loss = number(s.at("training"), "final_train_loss");
    row.validation_loss = number(s.at("training"), "final_validation_loss");
    row.network_norm = number(s, "network_norm");
    table.rows.push_back(row);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    return a.prediction_error > b.prediction_error;
  });
  return table;
}

}  // namespace flowmap
