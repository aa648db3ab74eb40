#include "flowmap/ode_suite.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace flowmap;

namespace {

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

}  // namespace

TEST_CASE("builtin vector fields by hand") {
  CHECK(builtin_system("linear1").rhs(vec({1, 0})) == vec({1, 4}));
  CHECK(builtin_system("pendulum").rhs(vec({0, 0})).norm() == 0.0);
  const StateVector d = builtin_system("multiscale_true").rhs(vec({1, 1, 1, 1}));
  CHECK(d[0] == doctest::Approx(-2.0));
  CHECK(d[1] == doctest::Approx(1.2));
  CHECK(d[2] == doctest::Approx(-3.8));
  CHECK(d[3] == doctest::Approx(0.0));
  CHECK(builtin_system("linear2").rhs(vec({1, 1})) == vec({0, 0}));
  CHECK(builtin_system("linear3_nonlin").rhs(vec({0, 0})) == vec({-2, 0}));
  const StateVector r = builtin_system("multiscale_reduced").rhs(vec({1, 1, 1}));
  CHECK(r[2] == doctest::Approx(0.2 + 1.0 * (1.0 - 5.0)));
}

TEST_CASE("pendulum vector field") {
  const StateVector d = builtin_system("pendulum").rhs(vec({std::numbers::pi / 2, 1.0}));
  CHECK(d[0] == doctest::Approx(1.0));
  CHECK(d[1] == doctest::Approx(-0.2 - 8.91));
}

TEST_CASE("electric network branches") {
  const SystemSpec s = builtin_system("electric");
  const StateVector u = vec({0.5, 0.1});
  const double v1 = (-0.1 - 0.25) * std::tanh(0.5) + 0.25 * 0.5;
  const StateVector v = s.algebraic_outputs(u);
  CHECK(v[0] == doctest::Approx(v1));
  CHECK(v[1] == doctest::Approx(-0.1 - v1));
  const StateVector d = s.rhs(u);
  CHECK(d[0] == doctest::Approx((-0.1 - v1) / 1e-9));
  CHECK(d[1] == doctest::Approx(0.5 / 1e-6));
}

TEST_CASE("every builtin system is consistent") {
  for (const auto& name : builtin_system_names()) {
    const SystemSpec s = builtin_system(name);
    CHECK(s.name == name);
    CHECK(s.domain.dim() == s.dim);
    CHECK(s.state_names.size() == s.dim);
    CHECK(s.rhs(s.domain.center()).size() == static_cast<Eigen::Index>(s.dim));
  }
  CHECK_THROWS_AS((void)builtin_system("lorenz"), std::invalid_argument);
}

TEST_CASE("rk4 on a zero field is the identity") {
  const VectorField zero = [](const StateVector& x) { return StateVector::Zero(x.size()).eval(); };
  CHECK(rk4_step(zero, vec({3, 7}), 0.1) == vec({3, 7}));
}

TEST_CASE("rk4 on exponential growth") {
  const VectorField f = [](const StateVector& x) { return x; };
  const double h = 0.1;
  const double r = rk4_step(f, vec({1.0}), h)[0];
  // On a linear field one RK4 step is the degree-4 Taylor polynomial.
  CHECK(r == doctest::Approx(1.0 + h + h * h / 2 + h * h * h / 6 + h * h * h * h / 24).epsilon(1e-15));
  CHECK(std::exp(h) - r == doctest::Approx(std::pow(h, 5) / 120).epsilon(0.05));
}

TEST_CASE("rk4 on linear1 is the truncated matrix exponential") {
  const SystemSpec s = builtin_system("linear1");
  const StateVector x = vec({1, 1});
  const Eigen::MatrixXd hm = oracle::example1_matrix() * 0.1;
  Eigen::MatrixXd taylor = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd term = taylor;
  for (int k = 1; k <= 4; ++k) {
    term = term * hm / k;
    taylor += term;
  }
  CHECK((rk4_step(s.rhs, x, 0.1) - taylor * x).norm() < 1e-14);
  const Eigen::VectorXd exact = oracle::expm(hm) * x;
  CHECK((advance(s, x, 0.1, 10) - exact).norm() < 1e-8);
}

TEST_CASE("advance on linear2 matches the affine closed form") {
  const SystemSpec s = builtin_system("linear2");
  const StateVector x = vec({1.5, 0});
  const Eigen::VectorXd exact = oracle::affine_flow(oracle::example2_matrix(), vec({-2, 0}), x, 0.1);
  CHECK((advance(s, x, 0.1, 100) - exact).norm() < 1e-9);
}

TEST_CASE("advance converges at fourth order") {
  for (const char* name : {"linear1", "pendulum", "linear3_nonlin"}) {
    const SystemSpec s = builtin_system(name);
    const StateVector x = s.domain.center() + 0.3 * s.domain.half_width();
    const StateVector ref = oracle::rk4(s.rhs, x, 0.5, 20000);
    double prev = (advance(s, x, 0.5, 8) - ref).norm();
    for (int m : {16, 32, 64}) {
      const double err = (advance(s, x, 0.5, m) - ref).norm();
      CHECK(prev / err > 12.0);
      CHECK(prev / err < 20.0);
      prev = err;
    }
  }
}

TEST_CASE("flow map semigroup") {
  const SystemSpec s = builtin_system("pendulum");
  const StateVector x = vec({1.0, -2.0});
  const StateVector twice = advance(s, advance(s, x, 0.1, 100), 0.1, 100);
  CHECK((twice - advance(s, x, 0.2, 200)).norm() < 1e-10);
}

TEST_CASE("advance rejects bad input") {
  const SystemSpec s = builtin_system("linear1");
  CHECK_THROWS_AS((void)advance(s, vec({1, 2, 3}), 0.1, 10), DimensionError);
  CHECK_THROWS_AS((void)advance(s, vec({1, 2}), 0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)rk4_step(s.rhs, vec({1, 2}), 0.0), std::invalid_argument);
}

TEST_CASE("non-finite integration raises IntegrationError with the state") {
  const VectorField blow = [](const StateVector& x) { return (x.array().square() * 1e300).matrix().eval(); };
  try {
    (void)advance(blow, vec({1e10}), 1.0, 1);
    FAIL("expected IntegrationError");
  } catch (const IntegrationError& e) {
    CHECK(e.state().size() == 1);
  }
}

TEST_CASE("reference trajectory grid") {
  const SystemSpec s = builtin_system("linear1");
  const Trajectory t = reference_trajectory(s, vec({1.5, 0}), 0.1, 20, 10);
  REQUIRE(t.size() == 21);
  CHECK(t.times.front() == 0.0);
  CHECK(t.times.back() == doctest::Approx(2.0));
  for (std::size_t k = 1; k < t.size(); ++k) CHECK(t.times[k] - t.times[k - 1] == doctest::Approx(0.1));
  const Eigen::VectorXd exact = oracle::expm(oracle::example1_matrix() * 2.0) * vec({1.5, 0});
  CHECK((t.states.back() - exact).norm() < 1e-6);
  CHECK(reference_trajectory(s, vec({1.5, 0}), 0.1, 0, 10).size() == 1);
}

TEST_CASE("noiseless pairs are exact flow-map samples") {
  const SystemSpec s = builtin_system("linear3_nonlin");
  SamplingConfig cfg;
  cfg.num_pairs = 5;
  cfg.seed = 42;
  const SnapshotPairSet data = generate_pairs(s, cfg);
  REQUIRE(data.size() == 5);
  for (const auto& p : data.pairs()) {
    CHECK(s.domain.contains(p.x1));
    CHECK((p.x2 - advance(s, p.x1, cfg.lag, cfg.integrator_substeps)).norm() == 0.0);
  }
}

TEST_CASE("sampling is deterministic per seed") {
  const SystemSpec s = builtin_system("pendulum");
  SamplingConfig cfg;
  cfg.num_pairs = 300;
  cfg.noise_level = 0.05;
  cfg.seed = 9;
  CHECK(generate_pairs(s, cfg) == generate_pairs(s, cfg));
  cfg.seed = 10;
  SamplingConfig other = cfg;
  other.seed = 9;
  CHECK_FALSE(generate_pairs(s, cfg) == generate_pairs(s, other));
}

TEST_CASE("noise statistics") {
  const SystemSpec s = builtin_system("linear2");
  SamplingConfig clean;
  clean.num_pairs = 10000;
  clean.seed = 5;
  SamplingConfig noisy = clean;
  noisy.noise_level = 0.02;
  const SnapshotPairSet a = generate_pairs(s, clean);
  const SnapshotPairSet b = generate_pairs(s, noisy);
  // Same substream draws the same x1 before noise is added.
  const StateVector half = s.domain.half_width();
  for (Eigen::Index i = 0; i < 2; ++i) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double e = b[j].x1[i] - a[j].x1[i];
      sum += e;
      sq += e * e;
    }
    const double n = static_cast<double>(a.size());
    const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(std::abs(sd - 0.02 * half[i]) < 0.2 * 0.02 * half[i]);
  }
}

TEST_CASE("sampling config validation") {
  const SystemSpec s = builtin_system("linear1");
  SamplingConfig cfg;
  cfg.num_pairs = 0;
  CHECK_THROWS_AS((void)generate_pairs(s, cfg), std::invalid_argument);
  cfg.num_pairs = 1;
  cfg.lag = -0.1;
  CHECK_THROWS_AS((void)generate_pairs(s, cfg), std::invalid_argument);
  cfg.lag = 0.1;
  cfg.noise_level = -1.0;
  CHECK_THROWS_AS((void)generate_pairs(s, cfg), std::invalid_argument);
}

TEST_CASE("snapshot file round-trip") {
  SamplingConfig cfg;
  cfg.num_pairs = 50;
  cfg.noise_level = 0.02;
  cfg.seed = 77;
  const SnapshotPairSet data = generate_pairs(builtin_system("multiscale_true"), cfg);
  std::stringstream buf;
  save_snapshots(buf, data, {"multiscale_true", 0.02, 77});
  SnapshotHeader header;
  const SnapshotPairSet back = load_snapshots(buf, &header);
  CHECK(back == data);
  CHECK(header.system == "multiscale_true");
  CHECK(header.seed == 77);
  CHECK(header.noise_level == 0.02);
}

TEST_CASE("malformed snapshot files are rejected") {
  std::istringstream empty("");
  CHECK_THROWS_AS((void)load_snapshots(empty), FormatError);
  std::istringstream no_header("1 2 3 4\n");
  CHECK_THROWS_AS((void)load_snapshots(no_header), FormatError);
  std::istringstream short_row("# flowmap-snapshots n=2 lag=0.1 noise=0 seed=1 system=x count=1\n1 2 3\n");
  CHECK_THROWS_AS((void)load_snapshots(short_row), FormatError);
  std::istringstream bad_count("# flowmap-snapshots n=1 lag=0.1 noise=0 seed=1 system=x count=2\n1 2\n");
  CHECK_THROWS_AS((void)load_snapshots(bad_count), FormatError);
  std::istringstream bad_number("# flowmap-snapshots n=1 lag=0.1 noise=0 seed=1 system=x count=1\n1 abc\n");
  CHECK_THROWS_AS((void)load_snapshots(bad_number), FormatError);
}
