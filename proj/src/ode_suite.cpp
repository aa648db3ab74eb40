#include "flowmap/ode_suite.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace flowmap {
namespace {

constexpr double kPi = std::numbers::pi;

SystemSpec make_linear1() {
  SystemSpec s;
  s.name = "linear1";
  s.dim = 2;
  s.rhs = [](const StateVector& x) {
    StateVector d(2);
    d << x[0] - 4.0 * x[1], 4.0 * x[0] - 7.0 * x[1];
    return d;
  };
  s.domain.bounds = {{0.0, 2.0}, {0.0, 2.0}};
  s.state_names = {"x1", "x2"};
  return s;
}

SystemSpec make_linear2() {
  SystemSpec s;
  s.name = "linear2";
  s.dim = 2;
  s.rhs = [](const StateVector& x) {
    StateVector d(2);
    d << x[0] + x[1] - 2.0, x[0] - x[1];
    return d;
  };
  s.domain.bounds = {{0.0, 2.0}, {0.0, 2.0}};
  s.state_names = {"x1", "x2"};
  return s;
}

SystemSpec make_linear3_nonlin() {
  SystemSpec s;
  s.name = "linear3_nonlin";
  s.dim = 2;
  s.rhs = [](const StateVector& x) {
    StateVector d(2);
    d << x[0] + x[1] - 2.0, x[0] - x[1] + 0.5 * std::sin(x[1]);
    return d;
  };
  s.domain.bounds = {{0.0, 3.0}, {0.0, 3.0}};
  s.state_names = {"x1", "x2"};
  return s;
}

SystemSpec make_pendulum() {
  constexpr double alpha = 0.2;
  constexpr double beta = 8.91;
  SystemSpec s;
  s.name = "pendulum";
  s.dim = 2;
  s.rhs = [](const StateVector& x) {
    StateVector d(2);
    d << x[1], -alpha * x[1] - beta * std::sin(x[0]);
    return d;
  };
  s.domain.bounds = {{-kPi, kPi}, {-2.0 * kPi, 2.0 * kPi}};
  s.state_names = {"x1", "x2"};
  return s;
}

// Nonlinear electric network. The two algebraic constraints are explicit in
// the branch quantities, so (u1, u2) is integrated as a plain ODE.
SystemSpec make_electric() {
  constexpr double C = 1e-9;
  constexpr double L = 1e-6;
  constexpr double U0 = 1.0;
  constexpr double G0 = -0.1;
  constexpr double Ginf = 0.25;
  auto branches = [](const StateVector& u) {
    const double v1 = (G0 - Ginf) * U0 * std::tanh(u[0] / U0) + Ginf * u[0];
    const double v2 = -u[1] - v1;
    StateVector v(2);
    v << v1, v2;
    return v;
  };
  SystemSpec s;
  s.name = "electric";
  s.dim = 2;
  s.rhs = [branches](const StateVector& u) {
    const StateVector v = branches(u);
    StateVector d(2);
    d << v[1] / C, u[0] / L;
    return d;
  };
  s.algebraic_outputs = branches;
  s.algebraic_names = {"v1", "v2"};
  s.domain.bounds = {{-2.0, 2.0}, {-0.2, 0.2}};
  s.state_names = {"u1", "u2"};
  return s;
}

SystemSpec make_multiscale_true() {
  constexpr double eps = 0.1;
  SystemSpec s;
  s.name = "multiscale_true";
  s.dim = 4;
  s.rhs = [](const StateVector& x) {
    StateVector d(4);
    d << -x[1] - x[2], x[0] + 0.2 * x[1], 0.2 + x[3] - 5.0 * x[2], -x[3] / eps + x[0] * x[2] / eps;
    return d;
  };
  s.domain.bounds = {{-15.0, 15.0}, {-15.0, 10.0}, {-5.0, 25.0}, {-30.0, 140.0}};
  s.state_names = {"x1", "x2", "x3", "y"};
  s.default_substeps = 50;
  return s;
}

SystemSpec make_multiscale_reduced() {
  SystemSpec s;
  s.name = "multiscale_reduced";
  s.dim = 3;
  s.rhs = [](const StateVector& x) {
    StateVector d(3);
    d << -x[1] - x[2], x[0] + 0.2 * x[1], 0.2 + x[2] * (x[0] - 5.0);
    return d;
  };
  s.domain.bounds = {{-15.0, 15.0}, {-15.0, 10.0}, {-5.0, 25.0}};
  s.state_names = {"x1", "x2", "x3"};
  return s;
}

StateVector checked(const VectorField& rhs, const StateVector& x, const char* stage) {
  StateVector d = rhs(x);
  if (d.size() != x.size()) {
    throw DimensionError("vector field returned dimension " + std::to_string(d.size()) + " for state of dimension " +
                         std::to_string(x.size()));
  }
  if (!d.allFinite()) throw IntegrationError(std::string("non-finite RK4 ") + stage, x);
  return d;
}

// Per-pair generator: seeded from (seed, pair index) so each pair owns a substream.
std::mt19937_64 substream(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t(index) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

const std::vector<std::string>& builtin_system_names() {
  static const std::vector<std::string> names = {"linear1",  "linear2",         "linear3_nonlin",    "pendulum",
                                                 "electric", "multiscale_true", "multiscale_reduced"};
  return names;
}

SystemSpec builtin_system(const std::string& name) {
  if (name == "linear1") return make_linear1();
  if (name == "linear2") return make_linear2();
  if (name == "linear3_nonlin") return make_linear3_nonlin();
  if (name == "pendulum") return make_pendulum();
  if (name == "electric") return make_electric();
  if (name == "multiscale_true") return make_multiscale_true();
  if (name == "multiscale_reduced") return make_multiscale_reduced();
  throw std::invalid_argument("unknown system '" + name + "'");
}

StateVector rk4_step(const VectorField& rhs, const StateVector& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("RK4 step size must be positive");
  const StateVector k1 = checked(rhs, x, "stage 1");
  const StateVector k2 = checked(rhs, x + 0.5 * h * k1, "stage 2");
  const StateVector k3 = checked(rhs, x + 0.5 * h * k2, "stage 3");
  const StateVector k4 = checked(rhs, x + h * k3, "stage 4");
  StateVector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw IntegrationError("non-finite RK4 update", x);
  return next;
}

StateVector advance(const VectorField& rhs, const StateVector& x, double lag, int substeps) {
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
  const double h = lag / substeps;
  StateVector state = x;
  for (int s = 0; s < substeps; ++s) state = rk4_step(rhs, state, h);
  return state;
}

StateVector advance(const SystemSpec& system, const StateVector& x, double lag, int substeps) {
  if (static_cast<std::size_t>(x.size()) != system.dim) {
    throw DimensionError(system.name + " expects dimension " + std::to_string(system.dim));
  }
  return advance(system.rhs, x, lag, substeps);
}

Trajectory reference_trajectory(const SystemSpec& system, const StateVector& x0, double lag, std::size_t steps,
                                int substeps) {
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  for (std::size_t k = 1; k <= steps; ++k) {
    traj.states.push_back(advance(system, traj.states.back(), lag, substeps));
    traj.times.push_back(static_cast<double>(k) * lag);
  }
  return traj;
}

void SamplingConfig::validate() const {
  if (num_pairs < 1) throw std::invalid_argument("num_pairs must be >= 1");
  if (!(lag > 0.0)) throw std::invalid_argument("lag must be positive");
  if (!(noise_level >= 0.0)) throw std::invalid_argument("noise_level must be >= 0");
  if (integrator_substeps < 1) throw std::invalid_argument("integrator_substeps must be >= 1");
}

SnapshotPairSet generate_pairs(const SystemSpec& system, const SamplingConfig& cfg) {
  cfg.validate();
  if (system.domain.dim() != system.dim) throw DimensionError("system domain does not match its dimension");
  const StateVector half = system.domain.half_width();
  std::vector<SnapshotPair> pairs(cfg.num_pairs);
  parallel_for(cfg.num_pairs, [&](std::size_t j) {
    auto rng = substream(cfg.seed, j);
    StateVector x1(system.dim);
    for (std::size_t i = 0; i < system.dim; ++i) {
      const auto [lo, hi] = system.domain.bounds[i];
      std::uniform_real_distribution<double> u(lo, hi);
      x1[static_cast<Eigen::Index>(i)] = u(rng);
    }
    StateVector x2 = advance(system, x1, cfg.lag, cfg.integrator_substeps);
    if (cfg.noise_level > 0.0) {
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (std::size_t i = 0; i < system.dim; ++i) x1[i] += cfg.noise_level * half[i] * gauss(rng);
      for (std::size_t i = 0; i < system.dim; ++i) x2[i] += cfg.noise_level * half[i] * gauss(rng);
    }
    pairs[j] = {std::move(x1), std::move(x2)};
  });
  return SnapshotPairSet(std::move(pairs), cfg.lag);
}

void save_snapshots(std::ostream& out, const SnapshotPairSet& data, const SnapshotHeader& header) {
  out << "# flowmap-snapshots n=" << data.dim() << " lag=" << format_double(data.lag())
      << " noise=" << format_double(header.noise_level) << " seed=" << header.seed
      << " system=" << (header.system.empty() ? "unknown" : header.system) << " count=" << data.size() << '\n';
  for (const auto& p : data.pairs()) {
    for (Eigen::Index i = 0; i < p.x1.size(); ++i) out << (i ? " " : "") << format_double(p.x1[i]);
    for (Eigen::Index i = 0; i < p.x2.size(); ++i) out << ' ' << format_double(p.x2[i]);
    out << '\n';
  }
}

SnapshotPairSet load_snapshots(std::istream& in, SnapshotHeader* header) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("snapshot file is empty");
  std::istringstream head(line);
  std::string tag;
  head >> tag;
  std::string magic;
  head >> magic;
  if (tag != "#" || magic != "flowmap-snapshots") throw FormatError("missing flowmap-snapshots header");
  std::size_t n = 0;
  std::size_t count = 0;
  double lag = 0.0;
  SnapshotHeader parsed;
  std::string field;
  while (head >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("malformed header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "n") {
      n = static_cast<std::size_t>(std::stoull(value));
    } else if (key == "lag") {
      lag = parse_double(value);
    } else if (key == "noise") {
      parsed.noise_level = parse_double(value);
    } else if (key == "seed") {
      parsed.seed = std::stoull(value);
    } else if (key == "system") {
      parsed.system = value;
    } else if (key == "count") {
      count = static_cast<std::size_t>(std::stoull(value));
    }
  }
  if (n == 0) throw FormatError("snapshot header lacks n");
  std::vector<SnapshotPair> pairs;
  pairs.reserve(count);
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::vector<double> values;
    std::string token;
    while (row >> token) values.push_back(parse_double(token));
    if (values.size() != 2 * n) {
      throw FormatError("snapshot row " + std::to_string(pairs.size() + 1) + " has " +
                        std::to_string(values.size()) + " values, expected " + std::to_string(2 * n));
    }
    SnapshotPair p{StateVector(n), StateVector(n)};
    for (std::size_t i = 0; i < n; ++i) {
      p.x1[i] = values[i];
      p.x2[i] = values[n + i];
    }
    pairs.push_back(std::move(p));
  }
  if (count != 0 && pairs.size() != count) {
    throw FormatError("snapshot file declares " + std::to_string(count) + " pairs but has " +
                      std::to_string(pairs.size()));
  }
  if (header) *header = parsed;
  return SnapshotPairSet(std::move(pairs), lag);
}

}  // namespace flowmap
