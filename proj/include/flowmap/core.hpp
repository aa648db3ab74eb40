/**
 * @file core.hpp
 * @brief Shared state types, snapshot containers and the prior-operator interface.
 */
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace flowmap {

/** @brief Point in the n-dimensional state space. */
using StateVector = Eigen::VectorXd;

/** @brief Raised when an argument violates a size or shape contract. */
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/** @brief Raised for non-finite values produced by a numerical routine. */
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/** @brief Raised when a file does not follow its documented format. */
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[nodiscard]] bool all_finite(const StateVector& x);

/** @brief Comma-separated rendering of a state, for error messages. */
[[nodiscard]] std::string describe(const StateVector& x);

/** @brief Shortest text that parses back to the identical double (17 significant digits). */
[[nodiscard]] std::string format_double(double v);

/** @brief Strict double parse of a whole token; throws FormatError otherwise. */
[[nodiscard]] double parse_double(std::string_view token);

/** @brief Axis-aligned box, one (lo, hi) pair per dimension. */
struct Box {
  std::vector<std::pair<double, double>> bounds;

  [[nodiscard]] std::size_t dim() const { return bounds.size(); }
  [[nodiscard]] bool contains(const StateVector& x) const;
  [[nodiscard]] StateVector center() const;
  [[nodiscard]] StateVector half_width() const;
  /** @brief Same center, half-widths multiplied by @p factor. */
  [[nodiscard]] Box scaled(double factor) const;
  /** @brief Tight bounding box of a set of states. */
  [[nodiscard]] static Box bounding(const std::vector<StateVector>& points);
};

/** @brief One (initial state, end state) observation. */
struct SnapshotPair {
  StateVector x1;
  StateVector x2;
};

/**
 * @brief Training set of snapshot pairs sharing one time lag.
 *
 * Construction validates that every state has the declared dimension and that
 * the lag is positive; the set is immutable afterwards.
 */
class SnapshotPairSet {
 public:
  SnapshotPairSet(std::vector<SnapshotPair> pairs, double lag);

  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] double lag() const { return lag_; }
  [[nodiscard]] std::size_t size() const { return pairs_.size(); }
  [[nodiscard]] const SnapshotPair& operator[](std::size_t j) const { return pairs_[j]; }
  [[nodiscard]] const std::vector<SnapshotPair>& pairs() const { return pairs_; }

  /** @brief Columns are the initial states x1_j (n x J). */
  [[nodiscard]] Eigen::MatrixXd initial_matrix() const;
  /** @brief Columns are the end states x2_j (n x J). */
  [[nodiscard]] Eigen::MatrixXd end_matrix() const;

  /** @brief Contiguous sub-range [first, first + count). */
  [[nodiscard]] SnapshotPairSet slice(std::size_t first, std::size_t count) const;

  friend bool operator==(const SnapshotPairSet& a, const SnapshotPairSet& b);

 private:
  std::vector<SnapshotPair> pairs_;
  std::size_t dim_ = 0;
  double lag_ = 0.0;
};

/** @brief Uniformly spaced sequence of states. */
struct Trajectory {
  std::vector<double> times;
  std::vector<StateVector> states;

  [[nodiscard]] std::size_t size() const { return states.size(); }
  /** @brief Series of a single component. */
  [[nodiscard]] std::vector<double> component(std::size_t i) const;
};

enum class PriorKind { Identity, Dmd, Mdmd, ReducedOde, ShallowNet };

[[nodiscard]] std::string_view to_string(PriorKind kind);
/** @brief Inverse of to_string; throws std::invalid_argument for unknown tags. */
[[nodiscard]] PriorKind prior_kind_from_string(std::string_view tag);

/**
 * @brief Operator L with x(t + lag) ~ L(x(t)).
 *
 * Implementations are immutable after construction. apply() validates the
 * input dimension and then delegates to evaluate().
 */
class PriorOperator {
 public:
  virtual ~PriorOperator() = default;

  [[nodiscard]] virtual std::size_t dim() const = 0;
  [[nodiscard]] virtual PriorKind kind() const = 0;

  [[nodiscard]] StateVector apply(const StateVector& x) const;

  /** @brief Writes the kind tag line followed by the kind-specific body. */
  virtual void save(std::ostream& out) const = 0;

 protected:
  [[nodiscard]] virtual StateVector evaluate(const StateVector& x) const = 0;
};

using PriorPtr = std::shared_ptr<const PriorOperator>;

[[nodiscard]] inline StateVector apply_prior(const PriorOperator& prior, const StateVector& x) {
  return prior.apply(x);
}

/** @brief L = I. */
class IdentityPrior final : public PriorOperator {
 public:
  explicit IdentityPrior(std::size_t dim) : dim_(dim) {}

  [[nodiscard]] std::size_t dim() const override { return dim_; }
  [[nodiscard]] PriorKind kind() const override { return PriorKind::Identity; }
  void save(std::ostream& out) const override;

 protected:
  [[nodiscard]] StateVector evaluate(const StateVector& x) const override { return x; }

 private:
  std::size_t dim_;
};

/** @brief Writes to a sibling temporary file, then renames it over @p path. */
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

/** @brief Whole file as a string; throws std::runtime_error if it cannot be opened. */
[[nodiscard]] std::string read_text(const std::filesystem::path& path);

/**
 * @brief Runs fn(i) for i in [0, count) on up to hardware_concurrency threads.
 *
 * Work is split into contiguous blocks; the first exception thrown by any
 * worker is rethrown on the calling thread after all workers join.
 */
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace flowmap
