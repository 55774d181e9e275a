#include <doctest.h>

#include <cmath>
#include <random>

#include <covshift/error.hpp>
#include <covshift/inference.hpp>

#include "support/oracles.hpp"

using namespace covshift;

namespace {

Dataset one_two_three() {
  return Dataset(Eigen::MatrixXd::Zero(3, 1), {1, 1, 1}, {0, 0, 0}, {1.0, 2.0, 3.0});
}

Eigen::VectorXd weighted_mean_outcome(const BootstrapSample& s) {
  double num = 0;
  double den = 0;
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    num += s.weights[i] * *s.data.outcome(i);
    den += s.weights[i];
  }
  return Eigen::VectorXd::Constant(1, num / den);
}

Dataset small_trial(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  std::vector<std::uint8_t> s(n);
  std::vector<std::optional<int>> a(n);
  std::vector<std::optional<double>> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = u(rng);
    x(r, 1) = u(rng);
    s[i] = u(rng) < 0.3 + 0.3 * x(r, 0) ? 1 : 0;
    if (s[i]) {
      a[i] = static_cast<int>(rng() % 2);
      y[i] = x(r, 0) + *a[i] * (1 + x(r, 0)) + z(rng);
    }
  }
  return Dataset(x, s, a, y, 2);
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("bootstrap standard error of a mean") {
  BootstrapSpec spec;
  spec.replicates = 4000;
  spec.seed = 3;
  const auto r = bootstrap(weighted_mean_outcome, one_two_three(), spec);
  const double expected = std::sqrt(2.0 / 3.0) / std::sqrt(3.0);
  CHECK(std::abs(r.se(0) - expected) / expected < 0.1);
  CHECK(r.dropped.empty());
}

TEST_CASE("constant statistic has zero spread") {
  for (auto kind : {BootstrapKind::nonparametric, BootstrapKind::bayesian}) {
    BootstrapSpec spec;
    spec.kind = kind;
    spec.replicates = 50;
    const auto r = bootstrap([](const BootstrapSample&) { return Eigen::VectorXd::Constant(2, 7.0); },
                             one_two_three(), spec);
    CHECK(r.se(0) == 0.0);
    CHECK(r.ci[1].lo == 7.0);
    CHECK(r.ci[1].hi == 7.0);
  }
}

TEST_CASE("draws depend only on seed, B and kind") {
  for (auto kind : {BootstrapKind::nonparametric, BootstrapKind::bayesian}) {
    BootstrapSpec spec;
    spec.kind = kind;
    spec.replicates = 64;
    spec.seed = 17;
    const auto a = bootstrap(weighted_mean_outcome, one_two_three(), spec);
    spec.threads = 4;
    const auto b = bootstrap(weighted_mean_outcome, one_two_three(), spec);
    CHECK(a.draws == b.draws);
    spec.seed = 18;
    const auto c = bootstrap(weighted_mean_outcome, one_two_three(), spec);
    CHECK(a.draws != c.draws);
  }
}

TEST_CASE("Bayesian weights are positive with unit mean") {
  for (std::uint64_t b = 0; b < 50; ++b) {
    const auto w = bayesian_weights(37 + b, 5, b);
    double total = 0;
    for (double v : w) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total / static_cast<double>(w.size()) - 1.0) < 1e-12);
  }
}

TEST_CASE("standard error is the column sample SD and percentile bounds are quantiles") {
  BootstrapSpec spec;
  spec.replicates = 101;
  spec.ci_level = 0.9;
  const auto r = bootstrap(weighted_mean_outcome, one_two_three(), spec);
  oracle::Vec col(r.draws.col(0).data(), r.draws.col(0).data() + r.draws.rows());
  CHECK(r.se(0) == doctest::Approx(std::sqrt(oracle::variance(col))).epsilon(1e-12));
  CHECK(r.ci[0].lo == empirical_quantile(col, 0.05));
  CHECK(r.ci[0].hi == empirical_quantile(col, 0.95));
}

TEST_CASE("type-7 quantiles") {
  CHECK(empirical_quantile({4, 1, 3, 2}, 0.5) == 2.5);
  CHECK(empirical_quantile({4, 1, 3, 2}, 0.25) == 1.75);
  CHECK(empirical_quantile({4, 1, 3, 2}, 0.0) == 1.0);
  CHECK(empirical_quantile({4, 1, 3, 2}, 1.0) == 4.0);
}

TEST_CASE("degenerate replicates are dropped and then rejected") {
  BootstrapSpec spec;
  spec.replicates = 20;
  int calls = 0;
  const Statistic sometimes = [&](const BootstrapSample& s) -> Eigen::VectorXd {
    if (s.replicate == 3) throw DataError("EmptyArm", "test");
    return Eigen::VectorXd::Constant(1, 1.0);
  };
  const auto r = bootstrap(sometimes, one_two_three(), spec);
  CHECK(r.dropped == std::vector<int>{3});
  CHECK(r.draws.rows() == 19);
  const Statistic always = [&](const BootstrapSample&) -> Eigen::VectorXd {
    ++calls;
    throw DataError("EmptyArm", "test");
  };
  try {
    bootstrap(always, one_two_three(), spec);
    FAIL("expected DegenerateReplicate");
  } catch (const NumericalError& e) {
    CHECK(e.name() == "DegenerateReplicate");
  }
}

TEST_CASE("stratified resampling keeps stratum and arm counts") {
  const Dataset d = small_trial(120, 2);
  BootstrapSpec spec;
  spec.replicates = 30;
  spec.stratified = true;
  const auto counts = [&](const Dataset& x) {
    std::vector<std::size_t> c(3, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!x.in_study(i)) ++c[2];
      else ++c[static_cast<std::size_t>(*x.treatment(i))];
    }
    return c;
  };
  const auto expected = counts(d);
  bool all_equal = true;
  bootstrap([&](const BootstrapSample& s) {
    if (counts(s.data) != expected) all_equal = false;
    return Eigen::VectorXd::Constant(1, 0.0);
  }, d, spec);
  CHECK(all_equal);
}

TEST_CASE("estimator statistic layout and attach") {
  const Dataset d = small_trial(300, 4);
  NuisanceConfig cfg;
  cfg.set_lambda_grid({1.0, 0.1});
  cfg.set_cv_folds(3);
  cfg.folds = 3;
  cfg.lambda_selection = LambdaSelection::shared;
  const auto fits = fit_nuisances(d, cfg);
  auto est = estimate_isw(d, fits, Estimand::transport).result;
  BootstrapSpec spec;
  spec.replicates = 40;
  spec.ci_method = CiMethod::normal;
  const auto stat = estimator_statistic(EstimatorKind::isw, Estimand::transport, false, cfg, NuisanceMode::fixed, &fits);
  const auto boot = bootstrap(stat, d, spec);
  CHECK(boot.draws.cols() == 3);
  attach_bootstrap(est, boot);
  CHECK(est.se_method == "bootstrap");
  CHECK(*est.se[1] == boot.se(1));
  CHECK(*est.contrasts[0].se == boot.se(2));
  const double z = normal_critical_value(0.95);
  CHECK(est.ci[0]->lo == doctest::Approx(est.psi(0) - z * boot.se(0)));
  CHECK_THROWS_AS(estimator_statistic(EstimatorKind::isw, Estimand::transport, false, cfg, NuisanceMode::fixed),
                  ConfigError);
}

TEST_CASE("refit statistic is deterministic across threads") {
  const Dataset d = small_trial(200, 5);
  NuisanceConfig cfg;
  cfg.set_lambda_grid({1.0, 0.1});
  cfg.set_cv_folds(3);
  cfg.folds = 3;
  BootstrapSpec spec;
  spec.replicates = 8;
  spec.kind = BootstrapKind::bayesian;
  const auto stat = estimator_statistic(EstimatorKind::aisw, Estimand::generalize, false, cfg, NuisanceMode::refit);
  const auto a = bootstrap(stat, d, spec);
  spec.threads = 3;
  const auto b = bootstrap(stat, d, spec);
  CHECK(a.draws == b.draws);
}

TEST_CASE("bootstrap spec validation") {
  BootstrapSpec spec;
  spec.replicates = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.replicates = 2;
  spec.ci_level = 1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK(bootstrap_kind_from_string("bayes") == BootstrapKind::bayesian);
  CHECK(ci_method_from_string("normal") == CiMethod::normal);
  CHECK_THROWS_AS(bootstrap_kind_from_string("wild"), ConfigError);
}

}  // TEST_SUITE
