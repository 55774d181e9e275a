#include <doctest.h>

#include <cmath>

#include <covshift/error.hpp>
#include <covshift/random.hpp>
#include <covshift/report.hpp>
#include <covshift/simulation.hpp>

#include "support/oracles.hpp"

using namespace covshift;

namespace {

ScenarioSpec with_cate(Polynomial cate) {
  auto s = ScenarioSpec::named("ll", 100, 1);
  s.cate = std::move(cate);
  return s;
}

const CellSummary& cell(const ScenarioReport& r, SimEstimator e) {
  for (const auto& c : r.cells) {
    if (c.estimator == e) return c;
  }
  throw std::runtime_error("missing cell");
}

StudyOptions quick_options() {
  StudyOptions o;
  o.nuisance.set_lambda_grid({1.0, 0.1, 0.01});
  o.nuisance.set_cv_folds(3);
  o.nuisance.folds = 3;
  return o;
}

}  // namespace

TEST_SUITE("simulation") {

TEST_CASE("covariates stay on the unit cube") {
  for (const char* name : {"ll", "ln", "nl", "nn"}) {
    const auto g = generate(ScenarioSpec::named(name, 3000, 5));
    CHECK(g.data.covariates().cwiseAbs().maxCoeff() <= 1.0);
    CHECK(g.data.num_covariates() == 10);
  }
}

TEST_CASE("treatment share among study rows is one half") {
  const auto g = generate(ScenarioSpec::named("ll", 5000, 11));
  double treated = 0;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    if (g.data.in_study(i)) treated += *g.data.treatment(i);
  }
  const double share = treated / static_cast<double>(g.data.num_study());
  CHECK(std::abs(share - 0.5) <= 0.03);
}

TEST_CASE("generation is deterministic in the seed") {
  const auto spec = ScenarioSpec::named("nn", 500, 9);
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(a.data.covariates() == b.data.covariates());
  CHECK(a.data.selection() == b.data.selection());
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data.outcome(i) == b.data.outcome(i));
  auto other = spec;
  other.seed = 10;
  CHECK(generate(other).data.covariates() != a.data.covariates());
}

TEST_CASE("study rows follow the structural equations") {
  const auto g = generate(ScenarioSpec::named("nl", 400, 3));
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    CHECK(g.truth.y1(r) - g.truth.y0(r) == doctest::Approx(g.truth.cate(r)));
    if (g.data.in_study(i)) {
      const double y = *g.data.treatment(i) == 1 ? g.truth.y1(r) : g.truth.y0(r);
      CHECK(*g.data.outcome(i) == y);
    } else {
      CHECK_FALSE(g.data.outcome(i).has_value());
    }
  }
}

TEST_CASE("analytic PATE examples") {
  CHECK(true_pate(with_cate({{{1.0, {}}}})) == 1.0);
  CHECK(true_pate(with_cate({{{1.0, {}}, {2.0, {0}}}})) == 1.0);
  CHECK(true_pate(with_cate({{{1.0, {}}, {3.0, {0, 0}}}})) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(true_pate(ScenarioSpec::named("ll")) == 1.0);
  CHECK(true_pate(ScenarioSpec::named("nn")) == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("analytic PATE agrees with Monte Carlo") {
  const auto [m, se] = oracle::uniform_mc_mean(
      [](const oracle::Vec& x) { return 1.0 + x[0] + x[1] + 2.0 * x[0] * x[0]; }, 10, 10'000'000, 2024);
  CHECK(std::abs(m - true_pate(ScenarioSpec::named("ln"))) < 3 * se);
  const auto [m3, se3] = oracle::uniform_mc_mean(
      [](const oracle::Vec& x) { return 1.0 + 3.0 * x[0] * x[0]; }, 1, 10'000'000, 7);
  CHECK(std::abs(m3 - 2.0) < 3 * se3);
}

TEST_CASE("scenario validation") {
  auto s = ScenarioSpec::named("ll");
  s.treat_prob = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = ScenarioSpec::named("ll");
  s.cate.terms.push_back({1.0, {12}});
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(ScenarioSpec::named("xx"), ConfigError);
  CHECK(sim_estimator_from_string("aisw_hajek") == SimEstimator::aisw_hajek);
}

TEST_CASE("oracle estimator is exact") {
  const auto r = run_study({ScenarioSpec::named("ll", 200)}, {SimEstimator::oracle}, 20, 3);
  const auto& c = r.scenarios[0].cells[0];
  CHECK(c.bias == 0.0);
  CHECK(c.rmse == 0.0);
  CHECK(*c.coverage == 1.0);
  CHECK(c.ok == 20);
}

TEST_CASE("report invariants and thread invariance") {
  auto opts = quick_options();
  const std::vector<ScenarioSpec> specs{ScenarioSpec::named("ll", 300), ScenarioSpec::named("nn", 300)};
  const auto a = run_study(specs, default_sim_estimators(), 6, 21, opts);
  opts.threads = 3;
  const auto b = run_study(specs, default_sim_estimators(), 6, 21, opts);
  CHECK(dump(report_json(a)) == dump(report_json(b)));
  for (const auto& s : a.scenarios) {
    CHECK(s.spec.seed == derive_seed(21, static_cast<std::uint64_t>(&s - a.scenarios.data())));
    for (const auto& c : s.cells) {
      CHECK(c.rmse * c.rmse - c.bias * c.bias >= -1e-12);
      if (c.coverage) {
        CHECK(*c.coverage >= 0.0);
        CHECK(*c.coverage <= 1.0);
      }
      CHECK(c.ok + c.failed == 6);
    }
  }
}

TEST_CASE("bootstrap intervals give weighting estimators coverage") {
  auto opts = quick_options();
  opts.bootstrap_replicates = 20;
  const auto r = run_study({ScenarioSpec::named("ll", 300)}, {SimEstimator::om, SimEstimator::isw}, 3, 4, opts);
  for (const auto& c : r.scenarios[0].cells) CHECK(c.coverage.has_value());
  opts.bootstrap_replicates = 0;
  const auto none = run_study({ScenarioSpec::named("ll", 300)}, {SimEstimator::om}, 3, 4, opts);
  CHECK_FALSE(none.scenarios[0].cells[0].coverage.has_value());
}

TEST_CASE("without covariate-dependent selection the naive estimate is unbiased") {
  auto spec = ScenarioSpec::named("ll", 2000);
  spec.selection = Polynomial{{{-0.5, {}}}};
  const auto r = run_study({spec}, {SimEstimator::naive_sate}, 500, 8);
  const auto& c = r.scenarios[0].cells[0];
  // Three Monte Carlo standard errors: a 2-SE bound fails one run in twenty.
  CHECK(std::abs(c.bias) < 3 * c.mc_se);
}

TEST_CASE("augmented error shrinks with more data") {
  const auto opts = StudyOptions{};
  const auto small = run_study({ScenarioSpec::named("ll", 1000)}, {SimEstimator::aisw}, 200, 5, opts);
  const auto large = run_study({ScenarioSpec::named("ll", 4000)}, {SimEstimator::aisw}, 200, 5, opts);
  CHECK(cell(large.scenarios[0], SimEstimator::aisw).rmse <= cell(small.scenarios[0], SimEstimator::aisw).rmse);
}

TEST_CASE("too many failures abort the study") {
  auto spec = ScenarioSpec::named("ll", 6);
  try {
    run_study({spec}, {SimEstimator::aisw}, 10, 1, quick_options());
    FAIL("expected TooManyFailures");
  } catch (const NumericalError& e) {
    CHECK(e.name() == "TooManyFailures");
  }
}

TEST_CASE("compensated summation") {
  std::vector<double> v{1.0, 1e100, 1.0, -1e100};
  CHECK(compensated_sum(v) == 2.0);
}

}  // TEST_SUITE
