#include "flowmap/prior_models.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace flowmap {
namespace {

std::string next_line(std::istream& in, const char* what) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) return line;
  }
  throw FormatError(std::string("unexpected end of input reading ") + what);
}

void finish_report(FitReport& report) {
  double sum = 0.0;
  for (const auto& r : report.residues) sum += r.squaredNorm();
  report.rms_residue = report.residues.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(report.residues.size()));
}

AffineFit solve_affine(const SnapshotPairSet& data, bool with_offset) {
  const auto n = static_cast<Eigen::Index>(data.dim());
  const auto J = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd lhs(with_offset ? n + 1 : n, J);
  lhs.topRows(n) = data.initial_matrix();
  if (with_offset) lhs.row(n).setOnes();
  const Eigen::MatrixXd x2 = data.end_matrix();

  const PseudoInverse pinv = pseudo_inverse(lhs);
  const Eigen::MatrixXd coeffs = x2 * pinv.matrix;

  AffineFit fit;
  fit.map.A = coeffs.leftCols(n);
  fit.map.b = with_offset ? Eigen::VectorXd(coeffs.col(n)) : Eigen::VectorXd::Zero(n);
  fit.map.lag = data.lag();
  fit.report.rank_deficient = pinv.rank < lhs.rows();
  fit.report.singular_values = pinv.singular_values;
  fit.report.truncation_tol = kPinvRelTol;
  fit.report.residues.reserve(data.size());
  for (const auto& p : data.pairs()) fit.report.residues.push_back(p.x2 - fit.map.A * p.x1 - fit.map.b);
  finish_report(fit.report);
  return fit;
}

}  // namespace

Eigen::VectorXcd AffineMap::eigenvalues() const { return A.eigenvalues(); }

void AffineMap::validate() const {
  if (A.rows() != A.cols() || A.rows() != b.size()) throw DimensionError("affine map: A must be square and match b");
  if (!A.allFinite() || !b.allFinite()) throw NumericalError("affine map has non-finite entries");
}

FitReport residue_report(const PriorOperator& prior, const SnapshotPairSet& data) {
  FitReport report;
  report.residues.reserve(data.size());
  for (const auto& p : data.pairs()) report.residues.push_back(p.x2 - prior.apply(p.x1));
  finish_report(report);
  return report;
}

PseudoInverse pseudo_inverse(const Eigen::MatrixXd& m, double rel_tol) {
  PseudoInverse out;
  if (m.size() == 0) {
    out.matrix = Eigen::MatrixXd::Zero(m.cols(), m.rows());
    return out;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double cutoff = rel_tol * (sigma.size() ? sigma[0] : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    out.singular_values.push_back(sigma[i]);
    if (sigma[i] > cutoff && sigma[i] > 0.0) {
      inv[i] = 1.0 / sigma[i];
      ++out.rank;
    }
  }
  out.matrix = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

AffineFit fit_dmd(const SnapshotPairSet& data) { return solve_affine(data, false); }

AffineFit fit_mdmd(const SnapshotPairSet& data) { return solve_affine(data, true); }

AffinePrior::AffinePrior(AffineMap map, PriorKind kind) : map_(std::move(map)), kind_(kind) {
  if (kind_ != PriorKind::Dmd && kind_ != PriorKind::Mdmd) throw std::invalid_argument("affine prior kind must be dmd or mdmd");
  map_.validate();
}

void AffinePrior::save(std::ostream& out) const {
  out << to_string(kind_) << '\n';
  save_affine_map(out, map_);
}

ReducedOdePrior::ReducedOdePrior(SystemSpec reduced, std::size_t full_dim, double lag, int substeps,
                                 std::vector<std::size_t> lift)
    : reduced_(std::move(reduced)), full_dim_(full_dim), lag_(lag), substeps_(substeps), lift_(std::move(lift)) {
  if (lift_.size() != reduced_.dim) throw DimensionError("lift must name one full-state index per reduced component");
  if (reduced_.dim > full_dim_) throw DimensionError("reduced system is larger than the full state");
  for (auto idx : lift_) {
    if (idx >= full_dim_) throw DimensionError("lift index out of range");
  }
  if (!(lag_ > 0.0)) throw std::invalid_argument("reduced prior lag must be positive");
  if (substeps_ < 1) throw std::invalid_argument("reduced prior substeps must be >= 1");
}

StateVector ReducedOdePrior::evaluate(const StateVector& x) const {
  StateVector projected(static_cast<Eigen::Index>(reduced_.dim));
  for (std::size_t i = 0; i < lift_.size(); ++i) projected[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(lift_[i])];
  const StateVector advanced = advance(reduced_, projected, lag_, substeps_);
  StateVector out = x;
  for (std::size_t i = 0; i < lift_.size(); ++i) out[static_cast<Eigen::Index>(lift_[i])] = advanced[static_cast<Eigen::Index>(i)];
  return out;
}

void ReducedOdePrior::save(std::ostream& out) const {
  out << to_string(kind()) << '\n'
      << reduced_.name << ' ' << full_dim_ << ' ' << format_double(lag_) << ' ' << substeps_ << '\n';
  for (std::size_t i = 0; i < lift_.size(); ++i) out << (i ? " " : "") << lift_[i];
  out << '\n';
}

PriorPtr make_reduced_ode_prior(const SystemSpec& reduced, std::size_t full_dim, double lag, int substeps,
                                std::vector<std::size_t> lift) {
  return std::make_shared<ReducedOdePrior>(reduced, full_dim, lag, substeps, std::move(lift));
}

ShallowNetPrior::ShallowNetPrior(MlpParams params) : params_(std::move(params)) {
  params_.validate();
  if (params_.input_dim() != params_.output_dim()) throw DimensionError("prior network must map R^n to R^n");
}

void ShallowNetPrior::save(std::ostream& out) const {
  out << to_string(kind()) << '\n';
  save_mlp(out, params_);
}

ShallowPriorFit fit_shallow_prior(const SnapshotPairSet& data, int width, const TrainConfig& train_cfg,
                                  bool normalize) {
  if (width < 1) throw std::invalid_argument("shallow prior width must be >= 1");
  const int n = static_cast<int>(data.dim());
  std::vector<Sample> samples;
  samples.reserve(data.size());
  for (const auto& p : data.pairs()) samples.push_back({p.x1, p.x2});

  MlpParams init = init_network({n, width, n}, train_cfg.init_seed);
  if (normalize) {
    const std::size_t n_train = samples.size() - validation_count(samples.size(), train_cfg.validation_fraction);
    set_normalization_from_samples(init, std::span<const Sample>(samples).first(n_train));
  }
  TrainResult trained = train(std::move(init), samples, train_cfg);
  ShallowPriorFit fit;
  fit.prior = std::make_shared<ShallowNetPrior>(std::move(trained.params));
  fit.record = std::move(trained.record);
  if (!fit.record.failed) fit.report = residue_report(*fit.prior, data);
  fit.report.truncation_tol = 0.0;
  return fit;
}

void save_affine_map(std::ostream& out, const AffineMap& map) {
  map.validate();
  out << map.dim() << ' ' << format_double(map.lag) << '\n';
  for (Eigen::Index r = 0; r < map.A.rows(); ++r) {
    for (Eigen::Index c = 0; c < map.A.cols(); ++c) out << (c ? " " : "") << format_double(map.A(r, c));
    out << ' ' << format_double(map.b[r]) << '\n';
  }
}

AffineMap load_affine_map(std::istream& in) {
  std::istringstream head(next_line(in, "affine map header"));
  std::size_t n = 0;
  std::string lag_token;
  if (!(head >> n >> lag_token) || n == 0) throw FormatError("affine map header must be `n lag`");
  AffineMap map;
  map.lag = parse_double(lag_token);
  map.A.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  map.b.resize(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    std::istringstream row(next_line(in, "affine map row"));
    std::vector<double> values;
    std::string token;
    while (row >> token) values.push_back(parse_double(token));
    if (values.size() != n + 1) throw FormatError("affine map row must have n + 1 values");
    for (std::size_t c = 0; c < n; ++c) map.A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[c];
    map.b[static_cast<Eigen::Index>(r)] = values[n];
  }
  map.validate();
  return map;
}

PriorPtr load_prior(std::istream& in) {
  std::string tag = next_line(in, "prior kind");
  while (!tag.empty() && std::isspace(static_cast<unsigned char>(tag.back()))) tag.pop_back();
  const PriorKind kind = prior_kind_from_string(tag);
  switch (kind) {
    case PriorKind::Identity: {
      std::istringstream body(next_line(in, "identity prior dimension"));
      std::size_t n = 0;
      if (!(body >> n) || n == 0) throw FormatError("identity prior needs a dimension");
      return std::make_shared<IdentityPrior>(n);
    }
    case PriorKind::Dmd:
    case PriorKind::Mdmd:
      return std::make_shared<AffinePrior>(load_affine_map(in), kind);
    case PriorKind::ReducedOde: {
      std::istringstream body(next_line(in, "reduced prior header"));
      std::string system;
      std::size_t full_dim = 0;
      std::string lag_token;
      int substeps = 0;
      if (!(body >> system >> full_dim >> lag_token >> substeps)) {
        throw FormatError("reduced prior header must be `system full_dim lag substeps`");
      }
      std::istringstream lift_line(next_line(in, "reduced prior lift"));
      std::vector<std::size_t> lift;
      std::size_t idx = 0;
      while (lift_line >> idx) lift.push_back(idx);
      return make_reduced_ode_prior(builtin_system(system), full_dim, parse_double(lag_token), substeps, lift);
    }
    case PriorKind::ShallowNet:
      return std::make_shared<ShallowNetPrior>(load_mlp(in));
  }
  throw FormatError("unhandled prior kind");
}

}  // namespace flowmap
