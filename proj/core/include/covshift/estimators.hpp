#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "covshift/dataset.hpp"
#include "covshift/nuisance.hpp"

namespace covshift {

// Target population: the overall sample (study and external rows) or the
// external sample alone.
enum class Estimand { generalize, transport };
enum class EstimatorKind { om, isw, aisw };

std::string to_string(Estimand estimand);
std::string to_string(EstimatorKind kind);
Estimand estimand_from_string(const std::string& name);
EstimatorKind estimator_from_string(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct ContrastEstimate {
  int arm = 0;
  int reference = 0;
  double tau = 0.0;               // psi[arm] - psi[reference]
  std::optional<double> se;
  std::optional<Interval> ci;
};

struct EstimateResult {
  EstimatorKind estimator = EstimatorKind::aisw;
  Estimand estimand = Estimand::generalize;
  bool hajek = false;
  double ci_level = 0.95;
  Eigen::VectorXd psi;                      // marginal mean per arm
  std::vector<std::optional<double>> se;    // per arm
  std::vector<std::optional<Interval>> ci;  // per arm
  std::vector<ContrastEstimate> contrasts;  // all (a, b) with a > b
  std::size_t n = 0;
  std::size_t n_study = 0;
  std::size_t n_external = 0;
  std::string se_method = "none";           // "influence", "bootstrap" or "none"
};

// Per-row terms whose column means are the reported marginal means.
struct InfluenceMatrix {
  Eigen::MatrixXd phi;  // n x (K+1)
  Estimand estimand = Estimand::generalize;
  EstimatorKind estimator = EstimatorKind::aisw;
  bool hajek = false;
};

struct Estimate {
  EstimateResult result;
  InfluenceMatrix influence;
};

struct EstimatorOptions {
  bool hajek = false;
  double ci_level = 0.95;
};

// Outcome modeling. Generalize: mean of mu over all rows. Transport: mean
// of mu over external rows. SEs are left to the bootstrap.
Estimate estimate_om(const Dataset& data, const NuisanceFits& fits, Estimand estimand,
                     const EstimatorOptions& options = {});

// Inverse selection weighting with study-row weights
//   generalize: S / rho * 1{A = a} / pi_a
//   transport:  S (1 - rho) / rho * 1{A = a} / pi_a, scaled by 1 / P(S = 0)
// Horvitz-Thompson (divide by n) unless options.hajek, which divides each
// arm by its realized weight sum. SEs are left to the bootstrap.
Estimate estimate_isw(const Dataset& data, const NuisanceFits& fits, Estimand estimand,
                      const EstimatorOptions& options = {});

// Augmented ISW: outcome model plus weighted residuals. SE per arm is
// sqrt(var(phi_a) / n) from the influence column; contrasts use the
// variance of the column difference.
Estimate estimate_aisw(const Dataset& data, const NuisanceFits& fits, Estimand estimand,
                       const EstimatorOptions& options = {});

Estimate estimate(EstimatorKind kind, const Dataset& data, const NuisanceFits& fits,
                  Estimand estimand, const EstimatorOptions& options = {});

// Marginal means only, with optional positive row weights replacing the
// uniform 1/n (used by the Bayesian bootstrap).
Eigen::VectorXd point_estimates(EstimatorKind kind, const Dataset& data, const NuisanceFits& fits,
                                Estimand estimand, bool hajek,
                                std::span<const double> row_weights = {});

struct Contrast {
  double tau = 0.0;
  std::optional<double> se;
  std::optional<Interval> ci;
};

// tau = mean(phi_a - phi_b). SE and CI only for AISW influence matrices.
// Errors: ArmOutOfRange.
Contrast contrast(const InfluenceMatrix& influence, int arm, int reference, double ci_level = 0.95);

// Difference of arm means among study rows with the unequal-variance
// two-sample normal interval.
Contrast naive_sate(const Dataset& data, int arm, int reference, double ci_level = 0.95);

// Two-sided normal critical value z_{(1 + level) / 2}.
double normal_critical_value(double ci_level);

// Sample variance with the n - 1 denominator.
double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace covshift
