#include "flowmap/gresnet.hpp"

#include "flowmap/ode_suite.hpp"
#include "flowmap/prior_models.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace flowmap;

namespace {

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

SnapshotPairSet sample(const std::string& system, std::size_t count, std::uint64_t seed) {
  SamplingConfig cfg;
  cfg.num_pairs = count;
  cfg.seed = seed;
  return generate_pairs(builtin_system(system), cfg);
}

// L(x) = 0, for exercising the residue definition.
class ZeroPrior final : public PriorOperator {
 public:
  explicit ZeroPrior(std::size_t n) : n_(n) {}
  std::size_t dim() const override { return n_; }
  PriorKind kind() const override { return PriorKind::Identity; }
  void save(std::ostream&) const override {}

 protected:
  StateVector evaluate(const StateVector& x) const override { return StateVector::Zero(x.size()); }

 private:
  std::size_t n_;
};

Box unit_box(std::size_t n) { return Box{std::vector<std::pair<double, double>>(n, {-1.0, 1.0})}; }

}  // namespace

TEST_CASE("identity-prior residues are the ResNet targets bit for bit") {
  const auto data = sample("linear2", 50, 1);
  const auto residues = compute_residues(IdentityPrior(2), data);
  for (std::size_t j = 0; j < data.size(); ++j) {
    const StateVector expected = data[j].x2 - data[j].x1;
    CHECK(residues[j].input == data[j].x1);
    for (Eigen::Index i = 0; i < 2; ++i) {
      CHECK(std::bit_cast<std::uint64_t>(residues[j].target[i]) == std::bit_cast<std::uint64_t>(expected[i]));
    }
  }
}

TEST_CASE("zero-prior residues are the end states") {
  const auto data = sample("pendulum", 20, 2);
  const auto residues = compute_residues(ZeroPrior(2), data);
  for (std::size_t j = 0; j < data.size(); ++j) CHECK(residues[j].target == data[j].x2);
  CHECK_THROWS_AS((void)compute_residues(ZeroPrior(3), data), DimensionError);
}

TEST_CASE("exact-affine data leaves no residue after its own mdmd fit") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Matrix2d A = (Eigen::Matrix2d() << 0.9, 0.2, -0.1, 1.1).finished();
  std::vector<SnapshotPair> pairs;
  for (int j = 0; j < 60; ++j) {
    const StateVector x = vec({g(rng), g(rng)});
    pairs.push_back({x, A * x + vec({0.3, -0.7})});
  }
  const SnapshotPairSet data(pairs, 0.1);
  const AffinePrior prior(fit_mdmd(data).map, PriorKind::Mdmd);
  for (const auto& r : compute_residues(prior, data)) CHECK(r.target.norm() < 1e-10);
}

TEST_CASE("identity-prior gResNet reproduces the standalone ResNet path") {
  const auto data = sample("linear2", 300, 3);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.init_seed = 5;
  cfg.shuffle_seed = 6;
  const GResNetFit g = train_gresnet(std::make_shared<IdentityPrior>(2), data, {30, 30, 30}, cfg);
  const ResNetFit r = train_standard_resnet(data, {30, 30, 30}, cfg);
  CHECK(g.model.correction() == r.result.params);
  CHECK(g.record.train_loss == r.result.record.train_loss);
  CHECK(g.record.validation_loss == r.result.record.validation_loss);
}

TEST_CASE("direct loss equals residue-form loss") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    const int n = 2 + static_cast<int>(draw % 3);
    const Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return g(rng); });
    const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return g(rng); });
    const AffinePrior prior(AffineMap{A, b, 0.1}, PriorKind::Mdmd);
    std::vector<SnapshotPair> pairs;
    for (int j = 0; j < 25; ++j) {
      pairs.push_back({StateVector::NullaryExpr(n, [&](Eigen::Index) { return g(rng); }),
                       StateVector::NullaryExpr(n, [&](Eigen::Index) { return g(rng); })});
    }
    const SnapshotPairSet data(pairs, 0.1);
    const MlpParams net = init_network({n, 6, 6, n}, draw);
    const double direct = direct_loss(prior, net, data);
    const double residue_form = mean_squared_error(net, compute_residues(prior, data));
    CHECK(std::abs(direct - residue_form) <= 1e-14 * std::max(1.0, direct));
  }
}

TEST_CASE("predict_step with trivial components") {
  SUBCASE("identity prior, zero correction") {
    const GResNetModel m(std::make_shared<IdentityPrior>(2), zero_network({2, 4, 2}), 0.1, unit_box(2));
    CHECK(predict_step(m, vec({0.3, -4.0})) == vec({0.3, -4.0}));
  }
  SUBCASE("affine prior, zero correction") {
    const Eigen::Matrix2d A = (Eigen::Matrix2d() << 1.1, 0.1, 0.1, 0.9).finished();
    const AffineMap map{A, vec({-0.2, -0.01}), 0.1};
    const GResNetModel m(std::make_shared<AffinePrior>(map, PriorKind::Mdmd), zero_network({2, 4, 2}), 0.1,
                         unit_box(2));
    const StateVector x = vec({1.5, 0.0});
    CHECK(predict_step(m, x) == A * x + vec({-0.2, -0.01}));
  }
}

TEST_CASE("model construction is validated") {
  CHECK_THROWS_AS(GResNetModel(std::make_shared<IdentityPrior>(2), zero_network({3, 4, 3}), 0.1, unit_box(2)),
                  DimensionError);
  CHECK_THROWS_AS(GResNetModel(std::make_shared<IdentityPrior>(2), zero_network({2, 4, 2}), 0.0, unit_box(2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(GResNetModel(nullptr, zero_network({2, 4, 2}), 0.1, unit_box(2)), std::invalid_argument);
}

TEST_CASE("rollout basics") {
  const GResNetModel m(std::make_shared<IdentityPrior>(2), zero_network({2, 4, 2}), 0.1, unit_box(2));
  const auto zero_steps = rollout(m, vec({0.5, 0.5}), 0);
  REQUIRE(zero_steps.trajectory.size() == 1);
  CHECK(zero_steps.trajectory.states[0] == vec({0.5, 0.5}));
  const auto constant = rollout(m, vec({0.5, 0.5}), 20);
  REQUIRE(constant.trajectory.size() == 21);
  CHECK_FALSE(constant.blew_up);
  for (const auto& s : constant.trajectory.states) CHECK(s == vec({0.5, 0.5}));
  CHECK(constant.trajectory.times.back() == doctest::Approx(2.0));
  CHECK_THROWS_AS((void)rollout(m, vec({1.0}), 3), DimensionError);
}

TEST_CASE("mdmd prior alone reproduces the Example 2 flow") {
  const auto data = sample("linear2", 100, 7);
  const AffinePrior prior(fit_mdmd(data).map, PriorKind::Mdmd);
  const GResNetModel m(std::make_shared<AffinePrior>(prior), zero_network({2, 4, 2}), 0.1,
                       builtin_system("linear2").domain);
  const auto run = rollout(m, vec({1.5, 0.0}), 20);
  REQUIRE_FALSE(run.blew_up);
  for (std::size_t k = 0; k < run.trajectory.size(); ++k) {
    const StateVector exact = oracle::affine_flow(oracle::example2_matrix(), vec({-2, 0}), vec({1.5, 0}),
                                                  run.trajectory.times[k]);
    CHECK((run.trajectory.states[k] - exact).norm() < 1e-5);
  }
}

TEST_CASE("unstable rollouts are truncated and flagged") {
  const AffineMap expanding{2.0 * Eigen::MatrixXd::Identity(1, 1), vec({0.0}), 0.1};
  const GResNetModel m(std::make_shared<AffinePrior>(expanding, PriorKind::Dmd), zero_network({1, 2, 1}), 0.1,
                       Box{{{-1.0, 1.0}}});
  const auto run = rollout(m, vec({1.0}), 50);
  CHECK(run.blew_up);
  CHECK(run.trajectory.size() < 51);
  CHECK(run.reason.find("guard") != std::string::npos);
  for (const auto& s : run.trajectory.states) CHECK(std::abs(s[0]) <= 100.0);
  const auto prior_only = rollout_prior(m.prior(), 0.1, vec({1.0}), 50, Box{{{-10.0, 10.0}}});
  CHECK(prior_only.blew_up);
  CHECK(prior_only.trajectory.size() == 4);
}

TEST_CASE("correction options") {
  const auto data = sample("linear2", 120, 8);
  TrainConfig cfg;
  cfg.epochs = 0;
  SUBCASE("zero init with no training is the prior") {
    const GResNetFit fit = train_gresnet(std::make_shared<IdentityPrior>(2), data, {5}, cfg, {true, false});
    CHECK(predict_step(fit.model, vec({1.0, 0.5})) == vec({1.0, 0.5}));
    CHECK(fit.record.network_norm == 0.0);
  }
  SUBCASE("normalization scales outputs to the residue size") {
    cfg.epochs = 2;
    const GResNetFit fit = train_gresnet(std::make_shared<IdentityPrior>(2), data, {8}, cfg, {false, true});
    CHECK(fit.model.correction().has_normalization());
    CHECK_FALSE(fit.record.failed);
    CHECK(fit.record.network_norm > 0.0);
  }
}

TEST_CASE("model bundle round-trip") {
  const auto data = sample("linear2", 60, 9);
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto prior = std::make_shared<AffinePrior>(fit_mdmd(data).map, PriorKind::Mdmd);
  const GResNetFit fit = train_gresnet(prior, data, {6, 6}, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "flowmap_bundle_test";
  std::filesystem::remove_all(dir);
  save_model_bundle(dir, fit.model, cfg, R"({"note": "test"})");
  const GResNetModel back = load_model_bundle(dir);
  CHECK(back.correction() == fit.model.correction());
  CHECK(back.lag() == fit.model.lag());
  CHECK(back.prior().kind() == PriorKind::Mdmd);
  CHECK(back.domain().bounds == fit.model.domain().bounds);
  const StateVector x = vec({0.7, 1.3});
  CHECK(predict_step(back, x) == predict_step(fit.model, x));
  CHECK(read_text(dir / "metadata.json").find("\"note\"") != std::string::npos);
  std::filesystem::remove_all(dir);
}
