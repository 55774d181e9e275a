#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covshift/dataset.hpp"
#include "covshift/estimators.hpp"
#include "covshift/nuisance.hpp"

namespace covshift {

enum class BootstrapKind { nonparametric, bayesian };
enum class CiMethod { percentile, normal };

std::string to_string(BootstrapKind kind);
std::string to_string(CiMethod method);
BootstrapKind bootstrap_kind_from_string(const std::string& name);  // "np" | "bayes"
CiMethod ci_method_from_string(const std::string& name);

struct BootstrapSpec {
  BootstrapKind kind = BootstrapKind::nonparametric;
  int replicates = 200;
  std::uint64_t seed = 1;
  CiMethod ci_method = CiMethod::percentile;
  double ci_level = 0.95;
  // Resample within (S, A) cells so every replicate keeps the original
  // stratum and arm counts.
  bool stratified = false;
  int threads = 1;

  // B >= 2 and ci_level in (0, 1) (InvalidBootstrap).
  void validate() const;
};

// What a statistic sees for one replicate.
//   nonparametric: `data` is the resampled dataset, `rows` maps each of its
//                  rows to the original row, `weights` are all 1.
//   bayesian:      `data` is the original dataset, `rows` is the identity,
//                  `weights` are positive with mean 1.
// `seed` is unique to the replicate, for statistics that need randomness
// (e.g. cross-fitting folds).
struct BootstrapSample {
  const Dataset& data;
  std::span<const std::size_t> rows;
  std::span<const double> weights;
  std::uint64_t seed;
  int replicate;
};

using Statistic = std::function<Eigen::VectorXd(const BootstrapSample&)>;

struct BootstrapResult {
  Eigen::MatrixXd draws;            // kept replicates x statistics
  Eigen::VectorXd se;               // column sample standard deviations
  std::vector<Interval> ci;
  BootstrapSpec spec;
  std::vector<int> dropped;         // replicate indices that were degenerate
};

// Replicates are independent: replicate b draws from make_rng(seed, b), so
// draws do not depend on thread count. A replicate whose statistic throws a
// DataError, or which loses an S stratum present in the original data, is
// dropped and recorded; more than 10% dropped raises DegenerateReplicate.
BootstrapResult bootstrap(const Statistic& statistic, const Dataset& data, const BootstrapSpec& spec);

// Positive weights with mean exactly 1 (normalized standard exponentials).
std::vector<double> bayesian_weights(std::size_t n, std::uint64_t seed, std::uint64_t replicate);

// Nuisance handling inside each replicate.
//   refit: nuisances are refit on the replicate (default).
//   fixed: the full-sample nuisances are reused. Faster, but ignores
//          nuisance estimation error in the intervals.
enum class NuisanceMode { refit, fixed };

std::string to_string(NuisanceMode mode);
NuisanceMode nuisance_mode_from_string(const std::string& name);

// Statistic vector: psi per arm followed by tau(a, b) for every a > b,
// matching EstimateResult::contrasts ordering.
Statistic estimator_statistic(EstimatorKind kind, Estimand estimand, bool hajek,
                              const NuisanceConfig& config, NuisanceMode mode,
                              const NuisanceFits* full_sample_fits = nullptr);

// Copies bootstrap SEs and intervals into an estimate.
void attach_bootstrap(EstimateResult& result, const BootstrapResult& boot);

// Type-7 empirical quantile.
double empirical_quantile(std::vector<double> values, double prob);

}  // namespace covshift
