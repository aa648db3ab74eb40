#include "flowmap/neural.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace flowmap {
namespace {

struct Activations {
  // layers[0] is the (normalized) input, layers[L] the raw output before output_scale.
  std::vector<Eigen::MatrixXd> layers;
  Eigen::MatrixXd output;
};

Eigen::MatrixXd normalize_inputs(const MlpParams& p, const Eigen::MatrixXd& x) {
  if (!p.has_normalization()) return x;
  return (x.colwise() - p.input_offset).array().colwise() / p.input_scale.array();
}

Activations run_forward(const MlpParams& p, const Eigen::MatrixXd& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != p.input_dim()) {
    throw DimensionError("network expects input dimension " + std::to_string(p.input_dim()) + ", got " +
                         std::to_string(inputs.rows()));
  }
  Activations act;
  act.layers.reserve(p.num_layers() + 1);
  act.layers.push_back(normalize_inputs(p, inputs));
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    Eigen::MatrixXd z = p.weights[l] * act.layers.back();
    z.colwise() += p.biases[l];
    if (l + 1 < p.num_layers()) z = z.array().tanh().matrix();
    act.layers.push_back(std::move(z));
  }
  if (p.output_scale.size() > 0) {
    act.output = act.layers.back().array().colwise() * p.output_scale.array();
  } else {
    act.output = act.layers.back();
  }
  return act;
}

Eigen::MatrixXd to_matrix(std::span<const Sample> data, bool inputs) {
  if (data.empty()) return {};
  const auto rows = (inputs ? data.front().input : data.front().target).size();
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(data.size()));
  for (std::size_t j = 0; j < data.size(); ++j) {
    const StateVector& v = inputs ? data[j].input : data[j].target;
    if (v.size() != rows) throw DimensionError("sample " + std::to_string(j) + " has inconsistent dimension");
    m.col(static_cast<Eigen::Index>(j)) = v;
  }
  return m;
}

std::vector<double> read_row(std::istream& in, std::size_t expected, const std::string& what) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) break;
  }
  std::istringstream row(line);
  std::vector<double> values;
  std::string token;
  while (row >> token) values.push_back(parse_double(token));
  if (values.size() != expected) {
    throw FormatError(what + ": expected " + std::to_string(expected) + " values, got " +
                      std::to_string(values.size()));
  }
  return values;
}

void write_row(std::ostream& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << format_double(v[i]);
  out << '\n';
}

}  // namespace

std::size_t MlpParams::parameter_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    count += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return count;
}

void MlpParams::validate() const {
  if (layer_sizes.size() < 2) throw DimensionError("network needs at least an input and an output layer");
  for (int s : layer_sizes) {
    if (s < 1) throw DimensionError("layer widths must be >= 1");
  }
  if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
    throw DimensionError("number of weight matrices does not match layer_sizes");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1]) {
      throw DimensionError("layer " + std::to_string(l) + " shapes do not chain with layer_sizes");
    }
  }
  const auto n_in = static_cast<Eigen::Index>(input_dim());
  if (input_scale.size() != input_offset.size() || (input_scale.size() != 0 && input_scale.size() != n_in)) {
    throw DimensionError("input normalization does not match the input width");
  }
  if (output_scale.size() != 0 && output_scale.size() != static_cast<Eigen::Index>(output_dim())) {
    throw DimensionError("output scale does not match the output width");
  }
}

bool operator==(const MlpParams& a, const MlpParams& b) {
  if (a.layer_sizes != b.layer_sizes || a.weights.size() != b.weights.size()) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  }
  auto same = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    return x.size() == y.size() && (x.size() == 0 || x == y);
  };
  return same(a.input_offset, b.input_offset) && same(a.input_scale, b.input_scale) &&
         same(a.output_scale, b.output_scale);
}

std::vector<double> flatten(const MlpParams& params) {
  std::vector<double> out;
  out.reserve(params.parameter_count());
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const auto& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(w(r, c));
    for (Eigen::Index r = 0; r < params.biases[l].size(); ++r) out.push_back(params.biases[l][r]);
  }
  return out;
}

std::vector<double> flatten(const MlpGradient& grad) {
  std::vector<double> out;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    const auto& w = grad.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(w(r, c));
    for (Eigen::Index r = 0; r < grad.biases[l].size(); ++r) out.push_back(grad.biases[l][r]);
  }
  return out;
}

void assign_flat(MlpParams& params, std::span<const double> values) {
  if (values.size() != params.parameter_count()) throw DimensionError("flat parameter vector has wrong length");
  std::size_t k = 0;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    auto& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = values[k++];
    for (Eigen::Index r = 0; r < params.biases[l].size(); ++r) params.biases[l][r] = values[k++];
  }
}

MlpParams zero_network(const std::vector<int>& layer_sizes) {
  MlpParams p;
  p.layer_sizes = layer_sizes;
  if (layer_sizes.size() < 2) throw DimensionError("network needs at least an input and an output layer");
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    if (layer_sizes[l] < 1 || layer_sizes[l + 1] < 1) throw DimensionError("layer widths must be >= 1");
    p.weights.push_back(Eigen::MatrixXd::Zero(layer_sizes[l + 1], layer_sizes[l]));
    p.biases.push_back(Eigen::VectorXd::Zero(layer_sizes[l + 1]));
  }
  return p;
}

MlpParams init_network(const std::vector<int>& layer_sizes, std::uint64_t init_seed) {
  MlpParams p = zero_network(layer_sizes);
  std::mt19937_64 rng(init_seed);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(layer_sizes[l])));
    auto& w = p.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = gauss(rng);
  }
  return p;
}

void set_normalization(MlpParams& params, const Box& domain, const Eigen::VectorXd& output_scale) {
  if (domain.dim() != params.input_dim()) throw DimensionError("normalization box does not match input width");
  if (static_cast<std::size_t>(output_scale.size()) != params.output_dim()) {
    throw DimensionError("output scale does not match output width");
  }
  if (!(output_scale.array() > 0.0).all()) throw std::invalid_argument("output scale entries must be positive");
  params.input_offset = domain.center();
  params.input_scale = domain.half_width();
  if (!(params.input_scale.array() > 0.0).all()) throw std::invalid_argument("normalization box is degenerate");
  params.output_scale = output_scale;
}

void set_normalization_from_samples(MlpParams& params, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("normalization needs at least one sample");
  std::vector<StateVector> inputs;
  inputs.reserve(samples.size());
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(samples.front().target.size());
  for (const auto& s : samples) {
    inputs.push_back(s.input);
    sq += s.target.cwiseAbs2();
  }
  Eigen::VectorXd scale = (sq / static_cast<double>(samples.size())).cwiseSqrt();
  const double floor = std::max(scale.maxCoeff() * 1e-6, 1e-300);
  for (Eigen::Index i = 0; i < scale.size(); ++i) scale[i] = std::max(scale[i], floor);
  Box box = Box::bounding(inputs);
  for (auto& [lo, hi] : box.bounds) {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  set_normalization(params, box, scale);
}

StateVector forward(const MlpParams& params, const StateVector& x) {
  return run_forward(params, x).output.col(0);
}

Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  return run_forward(params, inputs).output;
}

LossAndGradient loss_and_gradients(const MlpParams& params, const Eigen::MatrixXd& inputs,
                                   const Eigen::MatrixXd& targets) {
  if (inputs.cols() == 0) throw std::invalid_argument("loss requires a non-empty batch");
  if (targets.rows() != static_cast<Eigen::Index>(params.output_dim()) || targets.cols() != inputs.cols()) {
    throw DimensionError("targets do not match network output width or batch size");
  }
  const Activations act = run_forward(params, inputs);
  for (Eigen::Index j = 0; j < act.output.cols(); ++j) {
    if (!act.output.col(j).allFinite()) {
      throw NumericalError("non-finite network output for batch sample " + std::to_string(j));
    }
  }
  const double batch = static_cast<double>(inputs.cols());
  const Eigen::MatrixXd diff = act.output - targets;

  LossAndGradient result;
  result.loss = diff.squaredNorm() / batch;

  const std::size_t L = params.num_layers();
  result.gradient.weights.resize(L);
  result.gradient.biases.resize(L);

  Eigen::MatrixXd delta = (2.0 / batch) * diff;
  if (params.output_scale.size() > 0) delta = delta.array().colwise() * params.output_scale.array();
  for (std::size_t l = L; l-- > 0;) {
    result.gradient.weights[l] = delta * act.layers[l].transpose();
    result.gradient.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (params.weights[l].transpose() * delta).array() * (1.0 - act.layers[l].array().square());
    }
  }
  return result;
}

LossAndGradient loss_and_gradients(const MlpParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw std::invalid_argument("loss requires a non-empty batch");
  return loss_and_gradients(params, to_matrix(batch, true), to_matrix(batch, false));
}

double mean_squared_error(const MlpParams& params, std::span<const Sample> data) {
  if (data.empty()) throw std::invalid_argument("loss requires a non-empty data set");
  const Eigen::MatrixXd out = forward_batch(params, to_matrix(data, true));
  return (out - to_matrix(data, false)).squaredNorm() / static_cast<double>(data.size());
}

void TrainConfig::validate(std::size_t num_samples) const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (num_samples > 0 && batch_size > num_samples) throw std::invalid_argument("batch_size exceeds the data size");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw std::invalid_argument("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw std::invalid_argument("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must be in [0, 1)");
  }
}

std::size_t validation_count(std::size_t num_samples, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(num_samples) * fraction));
}

double TrainRecord::final_train_loss() const {
  return train_loss.empty() ? std::nan("") : train_loss.back();
}

double TrainRecord::final_validation_loss() const {
  return validation_loss.empty() ? std::nan("") : validation_loss.back();
}

TrainResult train(MlpParams params, std::span<const Sample> data, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  params.validate();
  cfg.validate(data.size());
  TrainResult result;
  if (cfg.epochs == 0 || data.empty()) {
    result.params = std::move(params);
    return result;
  }

  const std::size_t n_val = validation_count(data.size(), cfg.validation_fraction);
  const std::size_t n_train = data.size() - n_val;
  if (n_train == 0) throw std::invalid_argument("validation_fraction leaves no training samples");
  const Eigen::MatrixXd x_train = to_matrix(data.subspan(0, n_train), true);
  const Eigen::MatrixXd y_train = to_matrix(data.subspan(0, n_train), false);
  Eigen::MatrixXd x_val;
  Eigen::MatrixXd y_val;
  if (n_val > 0) {
    x_val = to_matrix(data.subspan(n_train), true);
    y_val = to_matrix(data.subspan(n_train), false);
  }
  const std::size_t batch_size = std::min(cfg.batch_size, n_train);

  const std::size_t L = params.num_layers();
  std::vector<Eigen::MatrixXd> mw(L), vw(L);
  std::vector<Eigen::VectorXd> mb(L), vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    mw[l] = Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols());
    vw[l] = mw[l];
    mb[l] = Eigen::VectorXd::Zero(params.biases[l].size());
    vb[l] = mb[l];
  }

  std::mt19937_64 shuffle_rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto n_in = x_train.rows();
  const auto n_out = y_train.rows();
  Eigen::MatrixXd xb(n_in, static_cast<Eigen::Index>(batch_size));
  Eigen::MatrixXd yb(n_out, static_cast<Eigen::Index>(batch_size));
  double pow_b1 = 1.0;
  double pow_b2 = 1.0;

  for (int epoch = 0; epoch < cfg.epochs && !result.record.failed; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch) / cfg.epochs);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t first = 0; first < n_train; first += batch_size) {
      const std::size_t count = std::min(batch_size, n_train - first);
      if (static_cast<std::size_t>(xb.cols()) != count) {
        xb.resize(n_in, static_cast<Eigen::Index>(count));
        yb.resize(n_out, static_cast<Eigen::Index>(count));
      }
      for (std::size_t k = 0; k < count; ++k) {
        xb.col(static_cast<Eigen::Index>(k)) = x_train.col(static_cast<Eigen::Index>(order[first + k]));
        yb.col(static_cast<Eigen::Index>(k)) = y_train.col(static_cast<Eigen::Index>(order[first + k]));
      }
      LossAndGradient lg;
      try {
        lg = loss_and_gradients(params, xb, yb);
      } catch (const NumericalError& e) {
        result.record.failed = true;
        result.record.failure = "epoch " + std::to_string(epoch) + ", batch at offset " + std::to_string(first) +
                                ": " + e.what();
        break;
      }
      if (!std::isfinite(lg.loss)) {
        result.record.failed = true;
        result.record.failure = "non-finite loss in epoch " + std::to_string(epoch);
        break;
      }
      pow_b1 *= cfg.adam_beta1;
      pow_b2 *= cfg.adam_beta2;
      const double step = lr * std::sqrt(1.0 - pow_b2) / (1.0 - pow_b1);
      for (std::size_t l = 0; l < L; ++l) {
        mw[l] = cfg.adam_beta1 * mw[l] + (1.0 - cfg.adam_beta1) * lg.gradient.weights[l];
        vw[l] = cfg.adam_beta2 * vw[l] + (1.0 - cfg.adam_beta2) * lg.gradient.weights[l].cwiseAbs2();
        params.weights[l].array() -= step * mw[l].array() / (vw[l].array().sqrt() + cfg.adam_eps);
        mb[l] = cfg.adam_beta1 * mb[l] + (1.0 - cfg.adam_beta1) * lg.gradient.biases[l];
        vb[l] = cfg.adam_beta2 * vb[l] + (1.0 - cfg.adam_beta2) * lg.gradient.biases[l].cwiseAbs2();
        params.biases[l].array() -= step * mb[l].array() / (vb[l].array().sqrt() + cfg.adam_eps);
      }
    }
    if (result.record.failed) break;

    const double train_loss = (forward_batch(params, x_train) - y_train).squaredNorm() / static_cast<double>(n_train);
    result.record.train_loss.push_back(train_loss);
    if (n_val > 0) {
      result.record.validation_loss.push_back((forward_batch(params, x_val) - y_val).squaredNorm() /
                                              static_cast<double>(n_val));
    }
    if (!std::isfinite(train_loss)) {
      result.record.failed = true;
      result.record.failure = "non-finite training loss after epoch " + std::to_string(epoch);
    }
  }

  result.params = std::move(params);
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void save_mlp(std::ostream& out, const MlpParams& params) {
  params.validate();
  for (std::size_t i = 0; i < params.layer_sizes.size(); ++i) out << (i ? " " : "") << params.layer_sizes[i];
  out << '\n';
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const auto& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) write_row(out, w.row(r).transpose());
    write_row(out, params.biases[l]);
  }
  if (params.has_normalization() || params.output_scale.size() > 0) {
    out << "normalization\n";
    const auto n_in = static_cast<Eigen::Index>(params.input_dim());
    write_row(out, params.has_normalization() ? params.input_offset : Eigen::VectorXd::Zero(n_in));
    write_row(out, params.has_normalization() ? params.input_scale : Eigen::VectorXd::Ones(n_in));
    write_row(out, params.output_scale.size() > 0
                       ? params.output_scale
                       : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(params.output_dim())));
  }
}

MlpParams load_mlp(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) break;
  }
  std::istringstream head(line);
  std::vector<int> sizes;
  int s = 0;
  while (head >> s) sizes.push_back(s);
  if (sizes.size() < 2) throw FormatError("network file must start with at least two layer sizes");
  MlpParams p = zero_network(sizes);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r) {
      const auto row = read_row(in, static_cast<std::size_t>(sizes[l]), "weight row");
      for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) p.weights[l](r, c) = row[static_cast<std::size_t>(c)];
    }
    const auto bias = read_row(in, static_cast<std::size_t>(sizes[l + 1]), "bias row");
    for (Eigen::Index r = 0; r < p.biases[l].size(); ++r) p.biases[l][r] = bias[static_cast<std::size_t>(r)];
  }
  const auto pos = in.tellg();
  std::string tag;
  if (in >> tag) {
    if (tag != "normalization") {
      in.clear();
      in.seekg(pos);
      return p;
    }
    auto as_vector = [](const std::vector<double>& v) {
      return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
    };
    std::getline(in, line);
    p.input_offset = as_vector(read_row(in, p.input_dim(), "input offset"));
    p.input_scale = as_vector(read_row(in, p.input_dim(), "input scale"));
    p.output_scale = as_vector(read_row(in, p.output_dim(), "output scale"));
  } else {
    in.clear();
  }
  p.validate();
  return p;
}

}  // namespace flowmap
