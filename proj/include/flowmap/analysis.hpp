/**
 * @file analysis.hpp
 * @brief Trajectory error metrics, correction-network norm and power spectra.
 */
#pragma once

#include "flowmap/core.hpp"
#include "flowmap/gresnet.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace flowmap {

struct ErrorSummary {
  std::vector<double> times;
  /** Euclidean distance between predicted and reference state at each time. */
  std::vector<double> per_step_error;
  /** |predicted_i - reference_i| per time (outer) and component (inner). */
  std::vector<std::vector<double>> per_component_error;
  double max_error = 0.0;
  double final_error = 0.0;
  double mean_error = 0.0;
};

/** @brief Throws std::invalid_argument when lengths or time grids differ. */
[[nodiscard]] ErrorSummary trajectory_error(const Trajectory& predicted, const Trajectory& reference);

/** @brief sqrt(mean_j |N(x1_j)|^2) of the correction network over the probe inputs. */
[[nodiscard]] double network_norm(const GResNetModel& model, const SnapshotPairSet& probe);
[[nodiscard]] double network_norm(const MlpParams& correction, const SnapshotPairSet& probe);

struct Spectrum {
  std::vector<double> frequencies;
  std::vector<double> power;
  double dominant_frequency = 0.0;
};

/** @brief Shortest series accepted by power_spectrum(). */
inline constexpr std::size_t kMinSpectrumLength = 8;

/**
 * @brief One-sided Hann-windowed periodogram.
 *
 * The mean is removed before windowing. Power is |DFT|^2 * dt / sum(w^2),
 * doubled for bins other than DC and Nyquist, so sum(power) * df equals
 * sum((w x)^2) / sum(w^2). Frequencies are k / (N dt), k = 0..floor(N/2).
 */
[[nodiscard]] Spectrum power_spectrum(std::span<const double> series, double dt);

/** @brief Spectra closer than this many decades below the peak are floored. */
inline constexpr double kSpectrumFloorDecades = 12.0;

/**
 * @brief Similarity of two spectra on the same grid, in [0, 1].
 *
 * Each spectrum's log10 power is floored 12 decades below its maximum; the
 * result is the Pearson correlation of the two log spectra, clamped at 0.
 * Two flat spectra compare as 1 when identical and 0 otherwise.
 */
[[nodiscard]] double spectral_agreement(const Spectrum& a, const Spectrum& b);

/** CSV with `#` metadata lines then `time,error,e_1..e_n` rows. */
void write_error_csv(std::ostream& out, const ErrorSummary& summary, const std::string& metadata);
/** CSV with `#` metadata lines then `frequency,power` rows. */
void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum, const std::string& metadata);

}  // namespace flowmap
