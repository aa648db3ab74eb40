#include "flowmap/neural.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace flowmap;

namespace {

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

std::vector<Sample> random_samples(std::size_t count, int n_in, int n_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Sample> out;
  for (std::size_t j = 0; j < count; ++j) {
    out.push_back({StateVector::NullaryExpr(n_in, [&](Eigen::Index) { return g(rng); }),
                   StateVector::NullaryExpr(n_out, [&](Eigen::Index) { return g(rng); })});
  }
  return out;
}

MlpParams randomize_biases(MlpParams p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  for (auto& b : p.biases) b = Eigen::VectorXd::NullaryExpr(b.size(), [&](Eigen::Index) { return g(rng); });
  return p;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("initialization") {
  const MlpParams p = init_network({2, 30, 30, 2}, 5);
  for (const auto& b : p.biases) CHECK(b.norm() == 0.0);
  CHECK(p == init_network({2, 30, 30, 2}, 5));
  CHECK_FALSE(p == init_network({2, 30, 30, 2}, 6));
  CHECK(p.parameter_count() == 2 * 30 + 30 + 30 * 30 + 30 + 30 * 2 + 2);
  CHECK_THROWS_AS((void)init_network({2}, 1), DimensionError);
  CHECK_THROWS_AS((void)init_network({2, 0, 2}, 1), DimensionError);
}

TEST_CASE("initial weight scale is 1/sqrt(fan_in)") {
  const MlpParams p = init_network({1000, 1000}, 3);
  const auto& w = p.weights[0];
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  CHECK(std::abs(sd - 1.0 / std::sqrt(1000.0)) < 0.05 / std::sqrt(1000.0));
}

TEST_CASE("forward evaluation") {
  SUBCASE("zero network") {
    const MlpParams z = zero_network({3, 7, 3});
    CHECK(forward(z, vec({1, -2, 3})).norm() == 0.0);
  }
  SUBCASE("scalar 1-1-1") {
    MlpParams p = zero_network({1, 1, 1});
    p.weights[0](0, 0) = 1.0;
    p.weights[1](0, 0) = 1.0;
    CHECK(forward(p, vec({0.5}))[0] == doctest::Approx(std::tanh(0.5)).epsilon(1e-15));
    CHECK(forward(p, vec({0.5}))[0] == doctest::Approx(0.46211715726));
  }
  SUBCASE("odd symmetry with zero biases") {
    const MlpParams p = init_network({3, 9, 9, 3}, 4);
    const StateVector x = vec({0.3, -1.2, 2.0});
    CHECK((forward(p, -x) + forward(p, x)).norm() < 1e-15);
  }
  SUBCASE("batch agrees with single evaluation") {
    const MlpParams p = randomize_biases(init_network({2, 6, 2}, 2), 3);
    Eigen::MatrixXd xs(2, 3);
    xs << 1, 2, 3, -1, 0, 1;
    const Eigen::MatrixXd out = forward_batch(p, xs);
    for (Eigen::Index j = 0; j < 3; ++j) CHECK((out.col(j) - forward(p, xs.col(j))).norm() < 1e-15);
  }
  SUBCASE("wrong input width") {
    CHECK_THROWS_AS((void)forward(zero_network({2, 3, 2}), vec({1})), DimensionError);
  }
}

TEST_CASE("normalized network evaluation") {
  MlpParams p = randomize_biases(init_network({2, 5, 2}, 9), 1);
  MlpParams raw = p;
  set_normalization(p, Box{{{0.0, 4.0}, {-1.0, 1.0}}}, vec({3.0, 0.5}));
  const StateVector x = vec({3.0, 0.25});
  const StateVector expected = forward(raw, vec({0.5, 0.25})).cwiseProduct(vec({3.0, 0.5}));
  CHECK((forward(p, x) - expected).norm() < 1e-15);
  CHECK_THROWS_AS(set_normalization(p, Box{{{0.0, 0.0}, {0.0, 1.0}}}, vec({1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(set_normalization(p, Box{{{0.0, 1.0}}}, vec({1, 1})), DimensionError);
}

TEST_CASE("perfect network has zero loss and gradient") {
  const MlpParams p = randomize_biases(init_network({2, 4, 3}, 1), 2);
  std::vector<Sample> batch;
  for (const auto& x : {vec({0.1, 0.2}), vec({-1, 3}), vec({2, 2})}) batch.push_back({x, forward(p, x)});
  const LossAndGradient lg = loss_and_gradients(p, batch);
  CHECK(lg.loss == 0.0);
  for (double g : flatten(lg.gradient)) CHECK(g == 0.0);
}

TEST_CASE("backprop matches central finite differences") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const MlpParams p = randomize_biases(init_network({2, 5, 2}, 100 + trial), 200 + trial);
    const auto batch = random_samples(4, 2, 2, 300 + trial);
    const LossAndGradient lg = loss_and_gradients(p, batch);
    CHECK(lg.loss == doctest::Approx(mean_squared_error(p, batch)).epsilon(1e-14));
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& theta) {
          MlpParams q = p;
          assign_flat(q, theta);
          return mean_squared_error(q, batch);
        },
        flatten(p), 1e-4);
    CHECK(max_relative_error(flatten(lg.gradient), fd) < 1e-6);
  }
}

TEST_CASE("backprop through deeper and normalized networks") {
  MlpParams p = randomize_biases(init_network({3, 6, 5, 3}, 8), 9);
  set_normalization(p, Box{{{-2, 2}, {0, 10}, {-1, 3}}}, vec({2.0, 0.3, 1.5}));
  const auto batch = random_samples(7, 3, 3, 10);
  const LossAndGradient lg = loss_and_gradients(p, batch);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& theta) {
        MlpParams q = p;
        assign_flat(q, theta);
        return mean_squared_error(q, batch);
      },
      flatten(p), 1e-4);
  CHECK(max_relative_error(flatten(lg.gradient), fd) < 1e-6);
}

TEST_CASE("loss rejects bad batches") {
  const MlpParams p = init_network({2, 3, 2}, 1);
  CHECK_THROWS_AS((void)loss_and_gradients(p, std::span<const Sample>{}), std::invalid_argument);
  std::vector<Sample> bad = {{vec({1, 2}), vec({1, 2, 3})}};
  CHECK_THROWS_AS((void)loss_and_gradients(p, bad), DimensionError);
  MlpParams huge = p;
  huge.weights[1](0, 0) = std::numeric_limits<double>::infinity();
  std::vector<Sample> ok = {{vec({1, 2}), vec({0, 0})}};
  CHECK_THROWS_AS((void)loss_and_gradients(huge, ok), NumericalError);
}

TEST_CASE("zero epochs returns the parameters unchanged") {
  const MlpParams p = init_network({1, 4, 1}, 3);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto data = random_samples(20, 1, 1, 1);
  const TrainResult r = train(p, data, cfg);
  CHECK(r.params == p);
  CHECK(r.record.train_loss.empty());
  CHECK(r.record.validation_loss.empty());
  CHECK(std::isnan(r.record.final_train_loss()));
}

TEST_CASE("training fits an affine scalar map") {
  std::vector<Sample> data;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int j = 0; j < 1000; ++j) {
    const double x = u(rng);
    data.push_back({vec({x}), vec({2.0 * x + 1.0})});
  }
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 3e-3;
  cfg.lr_decay = 0.01;
  cfg.validation_fraction = 0.1;
  const TrainResult r = train(init_network({1, 20, 1}, 1), data, cfg);
  CHECK_FALSE(r.record.failed);
  REQUIRE(r.record.train_loss.size() == 300);
  REQUIRE(r.record.validation_loss.size() == 300);
  CHECK(r.record.final_train_loss() < 1e-5);
  CHECK(r.record.final_validation_loss() < 1e-4);
  CHECK(r.record.train_loss.back() < r.record.train_loss.front());
}

TEST_CASE("training is deterministic for fixed seeds") {
  const auto data = random_samples(57, 2, 2, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  const TrainResult a = train(init_network({2, 8, 2}, 1), data, cfg);
  const TrainResult b = train(init_network({2, 8, 2}, 1), data, cfg);
  CHECK(a.params == b.params);
  CHECK(a.record.train_loss == b.record.train_loss);
  cfg.shuffle_seed = 99;
  const TrainResult c = train(init_network({2, 8, 2}, 1), data, cfg);
  CHECK_FALSE(a.params == c.params);
}

TEST_CASE("recorded loss is the full training-slice loss") {
  const auto data = random_samples(40, 2, 2, 6);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.validation_fraction = 0.25;
  const TrainResult r = train(init_network({2, 5, 2}, 2), data, cfg);
  const std::span<const Sample> all(data);
  CHECK(r.record.final_train_loss() == doctest::Approx(mean_squared_error(r.params, all.subspan(0, 30))).epsilon(1e-13));
  CHECK(r.record.final_validation_loss() == doctest::Approx(mean_squared_error(r.params, all.subspan(30))).epsilon(1e-13));
}

TEST_CASE("single batch epoch equals one Adam step") {
  const auto data = random_samples(10, 1, 1, 12);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  cfg.validation_fraction = 0.0;
  const MlpParams p = init_network({1, 3, 1}, 7);
  const TrainResult r = train(p, data, cfg);
  // First Adam step with bias correction moves each parameter by lr * g / (|g| + eps').
  const auto g = flatten(loss_and_gradients(p, data).gradient);
  const auto before = flatten(p);
  const auto after = flatten(r.params);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expected = before[i] - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8 / std::sqrt(1.0 - 0.999));
    CHECK(after[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("divergent training is reported, not thrown") {
  const auto data = random_samples(30, 1, 1, 2);
  std::vector<Sample> scaled = data;
  for (auto& s : scaled) s.target *= 1e200;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e10;
  cfg.validation_fraction = 0.0;
  const TrainResult r = train(init_network({1, 4, 1}, 1), scaled, cfg);
  CHECK(r.record.failed);
  CHECK_FALSE(r.record.failure.empty());
}

TEST_CASE("training config validation") {
  const auto data = random_samples(10, 1, 1, 2);
  const MlpParams p = init_network({1, 2, 1}, 1);
  TrainConfig cfg;
  cfg.batch_size = 11;
  CHECK_THROWS_AS((void)train(p, data, cfg), std::invalid_argument);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS((void)train(p, data, cfg), std::invalid_argument);
  cfg = {};
  cfg.lr_decay = 0.0;
  CHECK_THROWS_AS((void)train(p, data, cfg), std::invalid_argument);
  cfg = {};
  cfg.validation_fraction = 1.0;
  CHECK_THROWS_AS((void)train(p, data, cfg), std::invalid_argument);
  cfg = {};
  cfg.epochs = -1;
  CHECK_THROWS_AS((void)train(p, data, cfg), std::invalid_argument);
  CHECK(validation_count(10000, 0.1) == 1000);
  CHECK(validation_count(7, 0.1) == 0);
}

TEST_CASE("network text round-trip is exact") {
  MlpParams p = randomize_biases(init_network({2, 7, 3, 2}, 11), 12);
  std::stringstream buf;
  save_mlp(buf, p);
  CHECK(load_mlp(buf) == p);
  set_normalization(p, Box{{{-1, 3}, {2, 5}}}, vec({0.1, 7.0}));
  std::stringstream buf2;
  save_mlp(buf2, p);
  const MlpParams back = load_mlp(buf2);
  CHECK(back == p);
  CHECK(back.has_normalization());
  std::istringstream truncated("2 3 2\n1 2\n");
  CHECK_THROWS_AS((void)load_mlp(truncated), FormatError);
  std::istringstream empty("");
  CHECK_THROWS_AS((void)load_mlp(empty), FormatError);
}

TEST_CASE("flat parameter access") {
  MlpParams p = init_network({2, 3, 1}, 1);
  std::vector<double> theta(p.parameter_count());
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = static_cast<double>(i);
  assign_flat(p, theta);
  CHECK(flatten(p) == theta);
  CHECK_THROWS_AS(assign_flat(p, std::vector<double>(3)), DimensionError);
}
