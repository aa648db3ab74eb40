#include "flowmap/analysis.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace flowmap {
namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

void write_metadata(std::ostream& out, const std::string& metadata) {
  std::size_t start = 0;
  while (start < metadata.size()) {
    const auto end = metadata.find('\n', start);
    out << "# " << metadata.substr(start, end == std::string::npos ? std::string::npos : end - start) << '\n';
    if (end == std::string::npos) break;
    start = end + 1;
  }
}

}  // namespace

ErrorSummary trajectory_error(const Trajectory& predicted, const Trajectory& reference) {
  if (predicted.size() != reference.size() || predicted.times.size() != reference.times.size()) {
    throw std::invalid_argument("trajectory_error: trajectories have different lengths (" +
                                std::to_string(predicted.size()) + " vs " + std::to_string(reference.size()) + ")");
  }
  ErrorSummary s;
  if (predicted.size() == 0) return s;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double dt = std::abs(predicted.times[k] - reference.times[k]);
    if (dt > 1e-9 * std::max(1.0, std::abs(reference.times[k]))) {
      throw std::invalid_argument("trajectory_error: time grids differ at index " + std::to_string(k));
    }
    if (predicted.states[k].size() != reference.states[k].size()) {
      throw DimensionError("trajectory_error: state dimensions differ at index " + std::to_string(k));
    }
    const StateVector diff = predicted.states[k] - reference.states[k];
    s.times.push_back(reference.times[k]);
    s.per_step_error.push_back(diff.norm());
    s.per_component_error.emplace_back(diff.size());
    for (Eigen::Index i = 0; i < diff.size(); ++i) s.per_component_error.back()[static_cast<std::size_t>(i)] = std::abs(diff[i]);
  }
  s.max_error = *std::max_element(s.per_step_error.begin(), s.per_step_error.end());
  s.final_error = s.per_step_error.back();
  s.mean_error = std::accumulate(s.per_step_error.begin(), s.per_step_error.end(), 0.0) /
                 static_cast<double>(s.per_step_error.size());
  return s;
}

double network_norm(const MlpParams& correction, const SnapshotPairSet& probe) {
  const Eigen::MatrixXd out = forward_batch(correction, probe.initial_matrix());
  return std::sqrt(out.colwise().squaredNorm().mean());
}

double network_norm(const GResNetModel& model, const SnapshotPairSet& probe) {
  return network_norm(model.correction(), probe);
}

Spectrum power_spectrum(std::span<const double> series, double dt) {
  const std::size_t n = series.size();
  if (n < kMinSpectrumLength) {
    throw std::invalid_argument("power_spectrum needs at least " + std::to_string(kMinSpectrumLength) + " samples");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("power_spectrum: sample spacing must be positive");

  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  const std::size_t bins = n / 2 + 1;
  std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(n), &fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(fftw_alloc_complex(bins), &fftw_free);
  double window_energy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n)));
    window_energy += w * w;
    in.get()[k] = w * (series[k] - mean);
  }

  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }

  Spectrum s;
  s.frequencies.resize(bins);
  s.power.resize(bins);
  const double scale = dt / window_energy;
  for (std::size_t m = 0; m < bins; ++m) {
    const double re = out.get()[m][0];
    const double im = out.get()[m][1];
    const bool unpaired = (m == 0) || (n % 2 == 0 && m == n / 2);
    s.power[m] = (unpaired ? 1.0 : 2.0) * scale * (re * re + im * im);
    s.frequencies[m] = static_cast<double>(m) / (static_cast<double>(n) * dt);
  }
  const auto peak = std::max_element(s.power.begin() + 1, s.power.end());
  s.dominant_frequency = s.frequencies[static_cast<std::size_t>(peak - s.power.begin())];
  return s;
}

double spectral_agreement(const Spectrum& a, const Spectrum& b) {
  if (a.frequencies.size() != b.frequencies.size() || a.power.size() != b.power.size() ||
      a.power.size() != a.frequencies.size()) {
    throw std::invalid_argument("spectral_agreement: spectra are on different grids");
  }
  for (std::size_t m = 0; m < a.frequencies.size(); ++m) {
    if (std::abs(a.frequencies[m] - b.frequencies[m]) > 1e-9 * std::max(1.0, std::abs(a.frequencies[m]))) {
      throw std::invalid_argument("spectral_agreement: frequency grids differ at bin " + std::to_string(m));
    }
  }
  auto log_power = [](const std::vector<double>& p) {
    const double peak = *std::max_element(p.begin(), p.end());
    const double floor = peak > 0.0 ? peak * std::pow(10.0, -kSpectrumFloorDecades) : 1e-300;
    Eigen::VectorXd out(static_cast<Eigen::Index>(p.size()));
    for (std::size_t m = 0; m < p.size(); ++m) out[static_cast<Eigen::Index>(m)] = std::log10(std::max(p[m], floor));
    return out;
  };
  const Eigen::VectorXd la = log_power(a.power);
  const Eigen::VectorXd lb = log_power(b.power);
  const Eigen::VectorXd ca = la.array() - la.mean();
  const Eigen::VectorXd cb = lb.array() - lb.mean();
  const double na = ca.norm();
  const double nb = cb.norm();
  if (na == 0.0 || nb == 0.0) return (na == nb && la == lb) ? 1.0 : 0.0;
  return std::clamp(ca.dot(cb) / (na * nb), 0.0, 1.0);
}

void write_error_csv(std::ostream& out, const ErrorSummary& summary, const std::string& metadata) {
  write_metadata(out, metadata);
  out << "time,error";
  const std::size_t n = summary.per_component_error.empty() ? 0 : summary.per_component_error.front().size();
  for (std::size_t i = 0; i < n; ++i) out << ",e" << (i + 1);
  out << '\n';
  for (std::size_t k = 0; k < summary.per_step_error.size(); ++k) {
    out << format_double(summary.times[k]) << ',' << format_double(summary.per_step_error[k]);
    for (double e : summary.per_component_error[k]) out << ',' << format_double(e);
    out << '\n';
  }
}

void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum, const std::string& metadata) {
  write_metadata(out, metadata);
  out << "frequency,power\n";
  for (std::size_t m = 0; m < spectrum.power.size(); ++m) {
    out << format_double(spectrum.frequencies[m]) << ',' << format_double(spectrum.power[m]) << '\n';
  }
}

}  // namespace flowmap
