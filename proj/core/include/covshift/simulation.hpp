#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covshift/dataset.hpp"
#include "covshift/estimators.hpp"
#include "covshift/nuisance.hpp"

namespace covshift {

// coef * prod_{v in vars} x_v. Repeated indices are powers; vars are
// 0-based covariate indices.
struct Monomial {
  double coef = 0.0;
  std::vector<int> vars;
};

struct Polynomial {
  std::vector<Monomial> terms;

  double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  // E[p(X)] for X ~ U[-1, 1]^p iid: odd powers integrate to 0 and x^k to
  // 1 / (k + 1) for even k.
  double uniform_mean() const;
  int max_variable() const;  // -1 for a constant
};

enum class Form { linear, nonlinear };

std::string to_string(Form form);

struct ScenarioSpec {
  std::string name = "ll";
  Form selection_form = Form::linear;
  Form outcome_form = Form::linear;
  std::size_t n = 2000;
  int p = 10;
  double treat_prob = 0.5;
  Polynomial selection;  // logit P(S = 1 | x)
  Polynomial outcome;    // m(x)
  Polynomial cate;       // tau(x)
  std::uint64_t seed = 1;

  // Default coefficient sets for the four (selection / outcome) designs:
  //   g(x)   = -0.5 + x1 + x2              (+ 1.5 x1^2 + x1 x2 if nonlinear)
  //   m(x)   = x1 + ... + xp              (+ x1^2 + x2 x3 if nonlinear)
  //   tau(x) = 1 + x1 + x2                (+ 2 x1^2 if nonlinear outcome)
  static ScenarioSpec preset(Form selection, Form outcome, std::size_t n = 2000,
                             std::uint64_t seed = 1, int p = 10);
  // "ll", "ln", "nl" or "nn" (selection letter first).
  static ScenarioSpec named(const std::string& name, std::size_t n = 2000, std::uint64_t seed = 1);

  // Errors: InvalidScenario (treat_prob outside (0, 1), p < 1, n < 1,
  // polynomial referencing a missing covariate).
  void validate() const;
};

// Everything the emitted Dataset hides.
struct Truth {
  Eigen::VectorXd y0;    // potential outcomes, all rows
  Eigen::VectorXd y1;
  Eigen::VectorXd cate;  // tau(x_i)
  Eigen::VectorXd selection_probability;
  std::vector<int> treatment;  // drawn for every row
  double pate = 0.0;           // analytic
  double sate = 0.0;           // mean tau over study rows
};

struct Generated {
  Dataset data;
  Truth truth;
};

// X ~ U[-1, 1]^p, A ~ Bernoulli(treat_prob), S ~ Bernoulli(expit(g(X))),
// Y = m(X) + tau(X) A + N(0, 1). A and Y are kept only for S = 1 rows.
Generated generate(const ScenarioSpec& spec);

double true_pate(const ScenarioSpec& spec);

enum class SimEstimator { naive_sate, om, isw, isw_hajek, aisw, aisw_hajek, oracle };

std::string to_string(SimEstimator estimator);
SimEstimator sim_estimator_from_string(const std::string& name);
std::vector<SimEstimator> default_sim_estimators();

struct StudyOptions {
  // Cross-fitted nuisances per replication. The default uses quadratic
  // features for outcome and selection and the shared penalty selection.
  NuisanceConfig nuisance = default_study_nuisance();
  double ci_level = 0.95;
  int threads = 1;
  double max_failure_rate = 0.05;
  // When > 0, OM and ISW get fixed-nuisance bootstrap intervals with this
  // many replicates; otherwise they report no coverage.
  int bootstrap_replicates = 0;

  static NuisanceConfig default_study_nuisance();
};

struct CellSummary {
  SimEstimator estimator = SimEstimator::aisw;
  std::size_t ok = 0;
  std::size_t failed = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double mc_se = 0.0;  // sd of estimates / sqrt(ok)
  std::optional<double> coverage;
  std::optional<double> mean_se;
  double mean_runtime_seconds = 0.0;
};

struct ScenarioReport {
  ScenarioSpec spec;  // seed is the scenario seed derived from the master seed
  double pate = 0.0;
  std::vector<CellSummary> cells;
  std::vector<int> failed_replications;
};

struct SimulationReport {
  std::size_t replications = 0;
  std::uint64_t master_seed = 0;
  double ci_level = 0.95;
  std::vector<SimEstimator> estimators;
  std::vector<ScenarioReport> scenarios;
};

// One replication of one scenario, before aggregation.
struct ReplicationRecord {
  bool ok = false;
  std::string error;
  std::vector<double> estimate;
  std::vector<std::optional<Interval>> ci;
  std::vector<std::optional<double>> se;
  std::vector<double> runtime;
};

ReplicationRecord run_replication(const ScenarioSpec& spec, const std::vector<SimEstimator>& estimators,
                                  const StudyOptions& options);

// Replication r of scenario s uses data seed derive_seed(scenario seed, r)
// with scenario seed = derive_seed(master_seed, s). Errors:
// TooManyFailures when more than max_failure_rate of replications throw.
SimulationReport run_study(const std::vector<ScenarioSpec>& specs,
                           const std::vector<SimEstimator>& estimators, std::size_t replications,
                           std::uint64_t master_seed, const StudyOptions& options = {});

// Index-order Neumaier summation.
double compensated_sum(const std::vector<double>& values);

}  // namespace covshift
