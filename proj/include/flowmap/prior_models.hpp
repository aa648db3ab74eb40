/**
 * @file prior_models.hpp
 * @brief Construction of prior operators: DMD, modified (affine) DMD, reduced ODE and shallow network.
 */
#pragma once

#include "flowmap/core.hpp"
#include "flowmap/neural.hpp"
#include "flowmap/ode_suite.hpp"

#include <complex>
#include <iosfwd>
#include <vector>

namespace flowmap {

/** @brief Relative singular-value cutoff used by the least-squares fits. */
inline constexpr double kPinvRelTol = 1e-12;

/** @brief x -> A x + b fitted at a given lag. DMD is the b = 0 case. */
struct AffineMap {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  double lag = 0.0;

  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(b.size()); }
  [[nodiscard]] StateVector operator()(const StateVector& x) const { return A * x + b; }
  /** @brief Eigenvalues of A (read-only diagnostic). */
  [[nodiscard]] Eigen::VectorXcd eigenvalues() const;
  void validate() const;
};

/** @brief Per-pair residues x2_j - L(x1_j) of a prior fit. */
struct FitReport {
  std::vector<StateVector> residues;
  double rms_residue = 0.0;
  bool rank_deficient = false;
  /** Relative cutoff applied to the singular values (least-squares fits only). */
  double truncation_tol = kPinvRelTol;
  std::vector<double> singular_values;
};

/** @brief Builds a FitReport (residues and rms) for any prior on a data set. */
[[nodiscard]] FitReport residue_report(const PriorOperator& prior, const SnapshotPairSet& data);

/** @brief Moore-Penrose pseudo-inverse through the SVD. */
struct PseudoInverse {
  Eigen::MatrixXd matrix;
  Eigen::Index rank = 0;
  std::vector<double> singular_values;
};

/** @brief Singular values below rel_tol * sigma_max are treated as zero. */
[[nodiscard]] PseudoInverse pseudo_inverse(const Eigen::MatrixXd& m, double rel_tol = kPinvRelTol);

struct AffineFit {
  AffineMap map;
  FitReport report;
};

/** @brief A = X2 X1^+ with b = 0. */
[[nodiscard]] AffineFit fit_dmd(const SnapshotPairSet& data);

/** @brief [A, b] = X2 [X1; 1^T]^+. */
[[nodiscard]] AffineFit fit_mdmd(const SnapshotPairSet& data);

/** @brief Prior L(x) = A x + b; @p kind is Dmd or Mdmd. */
class AffinePrior final : public PriorOperator {
 public:
  AffinePrior(AffineMap map, PriorKind kind);

  [[nodiscard]] std::size_t dim() const override { return map_.dim(); }
  [[nodiscard]] PriorKind kind() const override { return kind_; }
  [[nodiscard]] const AffineMap& map() const { return map_; }
  void save(std::ostream& out) const override;

 protected:
  [[nodiscard]] StateVector evaluate(const StateVector& x) const override { return map_(x); }

 private:
  AffineMap map_;
  PriorKind kind_;
};

/**
 * @brief Reduced system advanced over the lag and embedded into the full state.
 *
 * Components listed in @p lift are projected out, advanced with RK4 and
 * written back; every other component passes through unchanged.
 */
class ReducedOdePrior final : public PriorOperator {
 public:
  ReducedOdePrior(SystemSpec reduced, std::size_t full_dim, double lag, int substeps, std::vector<std::size_t> lift);

  [[nodiscard]] std::size_t dim() const override { return full_dim_; }
  [[nodiscard]] PriorKind kind() const override { return PriorKind::ReducedOde; }
  [[nodiscard]] const SystemSpec& reduced() const { return reduced_; }
  [[nodiscard]] double lag() const { return lag_; }
  [[nodiscard]] int substeps() const { return substeps_; }
  [[nodiscard]] const std::vector<std::size_t>& lift() const { return lift_; }
  void save(std::ostream& out) const override;

 protected:
  [[nodiscard]] StateVector evaluate(const StateVector& x) const override;

 private:
  SystemSpec reduced_;
  std::size_t full_dim_;
  double lag_;
  int substeps_;
  std::vector<std::size_t> lift_;
};

[[nodiscard]] PriorPtr make_reduced_ode_prior(const SystemSpec& reduced, std::size_t full_dim, double lag,
                                              int substeps, std::vector<std::size_t> lift);

/** @brief Prior given by a trained single-hidden-layer network evaluated directly on the state. */
class ShallowNetPrior final : public PriorOperator {
 public:
  explicit ShallowNetPrior(MlpParams params);

  [[nodiscard]] std::size_t dim() const override { return params_.input_dim(); }
  [[nodiscard]] PriorKind kind() const override { return PriorKind::ShallowNet; }
  [[nodiscard]] const MlpParams& params() const { return params_; }
  void save(std::ostream& out) const override;

 protected:
  [[nodiscard]] StateVector evaluate(const StateVector& x) const override { return forward(params_, x); }

 private:
  MlpParams params_;
};

struct ShallowPriorFit {
  PriorPtr prior;
  FitReport report;
  TrainRecord record;
};

/** @brief Default hidden width of the shallow prior network. */
inline constexpr int kShallowPriorWidth = 30;

/**
 * @brief Trains an n-width-n tanh network on (x1, x2) with train_cfg.
 *
 * The report's residues are taken over the whole data set. Training failure
 * is reported through record.failed; the prior is still returned. With
 * @p normalize the network is normalized to the training samples.
 */
[[nodiscard]] ShallowPriorFit fit_shallow_prior(const SnapshotPairSet& data, int width, const TrainConfig& train_cfg,
                                                bool normalize = false);

/** Text format: first line `n lag`, then n rows of n + 1 decimals (A | b). */
void save_affine_map(std::ostream& out, const AffineMap& map);
[[nodiscard]] AffineMap load_affine_map(std::istream& in);

/** @brief Reads any prior written by PriorOperator::save (dispatch on the kind tag line). */
[[nodiscard]] PriorPtr load_prior(std::istream& in);

}  // namespace flowmap
