#include <map>

#include <benchmark/benchmark.h>

#include <covshift/calibration.hpp>
#include <covshift/estimators.hpp>
#include <covshift/glm.hpp>
#include <covshift/nuisance.hpp>
#include <covshift/simulation.hpp>

using namespace covshift;

namespace {

const Generated& scenario(std::size_t n) {
  static std::map<std::size_t, Generated> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, generate(ScenarioSpec::named("nn", n, 3))).first;
  return it->second;
}

void BM_GlmPath(benchmark::State& state) {
  const auto& g = scenario(static_cast<std::size_t>(state.range(0)));
  const Eigen::MatrixXd x = expand_features(g.data.covariates(), FeatureMap::quadratic);
  Eigen::VectorXd s(g.data.size());
  for (std::size_t i = 0; i < g.data.size(); ++i) s(static_cast<Eigen::Index>(i)) = g.data.in_study(i);
  const auto grid = default_lambda_grid();
  for (auto _ : state) benchmark::DoNotOptimize(fit_regularized_glm_path(x, s, Family::binomial, grid));
}
BENCHMARK(BM_GlmPath)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_FitNuisances(benchmark::State& state) {
  const auto& g = scenario(static_cast<std::size_t>(state.range(0)));
  const auto cfg = StudyOptions::default_study_nuisance();
  for (auto _ : state) benchmark::DoNotOptimize(fit_nuisances(g.data, cfg));
}
BENCHMARK(BM_FitNuisances)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_Aisw(benchmark::State& state) {
  const auto& g = scenario(static_cast<std::size_t>(state.range(0)));
  const auto fits = fit_nuisances(g.data, StudyOptions::default_study_nuisance());
  for (auto _ : state) benchmark::DoNotOptimize(estimate_aisw(g.data, fits, Estimand::transport));
}
BENCHMARK(BM_Aisw)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_EntropyBalance(benchmark::State& state) {
  const auto& g = scenario(static_cast<std::size_t>(state.range(0)));
  std::vector<std::size_t> study, external;
  for (std::size_t i = 0; i < g.data.size(); ++i) (g.data.in_study(i) ? study : external).push_back(i);
  Eigen::MatrixXd xs(static_cast<Eigen::Index>(study.size()), static_cast<Eigen::Index>(g.data.num_covariates()));
  for (std::size_t r = 0; r < study.size(); ++r)
    xs.row(static_cast<Eigen::Index>(r)) = g.data.covariates().row(static_cast<Eigen::Index>(study[r]));
  Eigen::MatrixXd xe(static_cast<Eigen::Index>(external.size()), static_cast<Eigen::Index>(g.data.num_covariates()));
  for (std::size_t r = 0; r < external.size(); ++r)
    xe.row(static_cast<Eigen::Index>(r)) = g.data.covariates().row(static_cast<Eigen::Index>(external[r]));
  const auto target = sample_moments(xe, MomentFeatures::first_and_second, {});
  for (auto _ : state) benchmark::DoNotOptimize(entropy_balance(xs, target));
}
BENCHMARK(BM_EntropyBalance)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
