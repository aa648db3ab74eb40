/**
 * @file ode_suite.hpp
 * @brief Reference dynamical systems, fixed-step RK4 and snapshot data generation.
 */
#pragma once

#include "flowmap/core.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flowmap {

using VectorField = std::function<StateVector(const StateVector&)>;

/** @brief Integration produced a non-finite stage; carries the offending state. */
class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, StateVector state)
      : NumericalError(what + " at state " + describe(state)), state_(std::move(state)) {}
  [[nodiscard]] const StateVector& state() const { return state_; }

 private:
  StateVector state_;
};

/** @brief Autonomous system dx/dt = f(x) on a sampling box. */
struct SystemSpec {
  std::string name;
  std::size_t dim = 0;
  VectorField rhs;
  Box domain;
  std::vector<std::string> state_names;
  /** Explicitly resolved algebraic quantities (DAE observables), if any. */
  std::function<StateVector(const StateVector&)> algebraic_outputs;
  std::vector<std::string> algebraic_names;
  /** RK4 steps per lag used when a config does not say otherwise. */
  int default_substeps = 10;
};

/** @brief Names accepted by builtin_system(). */
[[nodiscard]] const std::vector<std::string>& builtin_system_names();

/**
 * @brief One of the reference systems.
 *
 * linear1, linear2, linear3_nonlin, pendulum, electric, multiscale_true,
 * multiscale_reduced. Throws std::invalid_argument for anything else.
 */
[[nodiscard]] SystemSpec builtin_system(const std::string& name);

/** @brief Classical fourth-order Runge-Kutta step. Throws IntegrationError on non-finite stages. */
[[nodiscard]] StateVector rk4_step(const VectorField& rhs, const StateVector& x, double h);

/** @brief Composes @p substeps RK4 steps of size lag / substeps. */
[[nodiscard]] StateVector advance(const VectorField& rhs, const StateVector& x, double lag, int substeps);
[[nodiscard]] StateVector advance(const SystemSpec& system, const StateVector& x, double lag, int substeps);

/** @brief steps + 1 states at times k * lag, k = 0..steps, from the true system. */
[[nodiscard]] Trajectory reference_trajectory(const SystemSpec& system, const StateVector& x0, double lag,
                                              std::size_t steps, int substeps);

struct SamplingConfig {
  std::size_t num_pairs = 1000;
  double lag = 0.1;
  /** Noise standard deviation as a fraction of each component's domain half-width. */
  double noise_level = 0.0;
  std::uint64_t seed = 1;
  int integrator_substeps = 10;

  void validate() const;
};

/**
 * @brief Random-initial-condition snapshot pairs.
 *
 * x1 is uniform over the system's domain, x2 = advance(x1, lag). With
 * noise_level > 0 every component of both states receives independent
 * Gaussian noise. Pair j draws from its own generator seeded by (seed, j),
 * so the result does not depend on how the work is split across threads.
 */
[[nodiscard]] SnapshotPairSet generate_pairs(const SystemSpec& system, const SamplingConfig& cfg);

/** @brief Provenance recorded in the snapshot file header. */
struct SnapshotHeader {
  std::string system;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
};

/**
 * Text format: one header line
 *   `# flowmap-snapshots n=<n> lag=<lag> noise=<eta> seed=<seed> system=<name> count=<J>`
 * followed by J rows `x1_1 ... x1_n x2_1 ... x2_n` in 17-significant-digit decimal.
 */
void save_snapshots(std::ostream& out, const SnapshotPairSet& data, const SnapshotHeader& header);
[[nodiscard]] SnapshotPairSet load_snapshots(std::istream& in, SnapshotHeader* header = nullptr);

}  // namespace flowmap
