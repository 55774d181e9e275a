#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covshift/dataset.hpp"
#include "covshift/estimators.hpp"
#include "covshift/nuisance.hpp"

namespace covshift {

// ---------------------------------------------------------------------------
// Covariate balance
// ---------------------------------------------------------------------------

struct SmdEntry {
  std::string covariate;
  double mean_study = 0.0;
  double mean_target = 0.0;
  double sd_pooled = 0.0;
  // Absent when sd_pooled == 0 (zero-variance covariate).
  std::optional<double> smd_unweighted;
  std::optional<double> mean_study_weighted;
  std::optional<double> smd_weighted;
  bool undefined = false;
};

// smd = (mean_study - mean_target) / sqrt((var_study + var_target) / 2).
// The pooled SD always comes from unweighted variances, so weighted and
// unweighted SMDs share a denominator.
struct BalanceReport {
  std::vector<SmdEntry> entries;  // sorted by |smd_unweighted| descending
  std::string target = "external";
  std::string weight_scheme = "none";
};

// Balance between two samples. Optional weights apply to the first sample.
BalanceReport smd_between(const Eigen::MatrixXd& study, const Eigen::MatrixXd& target,
                          const std::vector<std::string>& names,
                          const std::optional<Eigen::VectorXd>& study_weights = std::nullopt);

// Study rows against the target population: external rows (transport) or
// all rows (generalize). `study_weights` align with data.study_rows().
// Errors: SingleStratum.
BalanceReport smd_report(const Dataset& data,
                         const std::optional<Eigen::VectorXd>& study_weights = std::nullopt,
                         Estimand target = Estimand::transport,
                         const std::string& weight_scheme = "weighted");

// Selection weights implied by fitted nuisances on study rows: 1 / rho for
// generalize, (1 - rho) / rho for transport.
Eigen::VectorXd selection_weights(const Dataset& data, const NuisanceFits& fits, Estimand estimand);

// ---------------------------------------------------------------------------
// Overlap
// ---------------------------------------------------------------------------

struct OverlapThresholds {
  double lo = 0.01;
  double hi = 0.99;
  int bins = 20;
};

struct Histogram {
  std::vector<double> edges;           // bins + 1 values on [0, 1]
  std::vector<std::size_t> study;      // counts of rho among S = 1 rows
  std::vector<std::size_t> external;   // counts of rho among S = 0 rows
};

struct OverlapReport {
  OverlapThresholds thresholds;
  std::vector<std::size_t> rho_flagged_rows;  // rho at or beyond a bound
  std::vector<std::size_t> pi_flagged_rows;   // study rows with any pi_a at a bound
  double rho_min = 0.0;
  double rho_max = 0.0;
  Histogram rho_histogram;
  std::vector<std::string> warnings;
};

OverlapReport overlap_report(const Dataset& data, const NuisanceFits& fits,
                             const std::optional<OverlapThresholds>& thresholds = std::nullopt);

// ---------------------------------------------------------------------------
// Effect heterogeneity
// ---------------------------------------------------------------------------

struct HeterogeneityTest {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  std::size_t n = 0;
  std::string label = "omnibus heterogeneity test (simplified)";
};

// Doubly robust pseudo-outcome for contrast (arm, reference) on study rows:
//   mu_a - mu_b + 1{A = a}(Y - mu_a) / pi_a - 1{A = b}(Y - mu_b) / pi_b
Eigen::VectorXd pseudo_outcomes(const Dataset& data, const NuisanceFits& fits, int arm, int reference);

// Regresses the study-row pseudo-outcomes on [1, X] and Wald-tests that all
// slopes are zero with an HC1 covariance. Errors: RankDeficientDesign,
// ArmOutOfRange.
HeterogeneityTest heterogeneity_test(const Dataset& data, const NuisanceFits& fits, int arm,
                                     int reference);

// ---------------------------------------------------------------------------
// Bias decomposition over discrete strata
// ---------------------------------------------------------------------------

struct StratifiedDistribution {
  std::vector<double> strata;  // covariate value per stratum
  std::vector<double> p_study;
  std::vector<double> p_target;
  std::vector<double> tau;     // per-stratum CATE

  // Equal lengths (MisalignedStrata); nonnegative probabilities summing to
  // 1 within 1e-12 (InvalidDistribution).
  void validate() const;
};

struct BiasDecomposition {
  // p_s (p_t / p_s - 1) tau for strata with p_s > 0; 0 elsewhere.
  std::vector<double> terms;
  std::vector<bool> unrepresented;  // p_s == 0
  // sum over p_s == 0 of p_t * tau. Not correctable by reweighting.
  double unrepresented_mass = 0.0;
  double tate = 0.0;
  double sate = 0.0;
  double gap = 0.0;  // tate - sate
};

BiasDecomposition bias_decomposition(const StratifiedDistribution& dist);

// Strata from the distinct values of one covariate column. p_study and
// p_target are empirical shares among study and external rows. tau is the
// mean pseudo-outcome within the stratum's study rows; strata without study
// rows fall back to the mean outcome-model contrast over their external
// rows.
StratifiedDistribution stratify(const Dataset& data, const NuisanceFits& fits, std::size_t column,
                                int arm, int reference);

}  // namespace covshift
