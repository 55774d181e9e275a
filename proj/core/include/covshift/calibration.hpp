#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covshift/dataset.hpp"
#include "covshift/estimators.hpp"

namespace covshift {

// Moment functions balanced by calibration: raw means, optionally followed
// by raw second moments E[x_j^2].
enum class MomentFeatures { first, first_and_second };

std::string to_string(MomentFeatures features);

Eigen::MatrixXd moment_features(const Eigen::MatrixXd& x, MomentFeatures features);
std::vector<std::string> moment_names(const std::vector<std::string>& covariates,
                                      MomentFeatures features);

// Target population summary: one value per moment function.
struct MomentTarget {
  Eigen::VectorXd values;
  MomentFeatures features = MomentFeatures::first;
  std::vector<std::string> names;

  void validate(std::size_t covariates) const;
};

// Target moments of a sample, e.g. the external rows of a dataset.
MomentTarget sample_moments(const Eigen::MatrixXd& x, MomentFeatures features,
                            const std::vector<std::string>& covariates = {});

// Reads "name,value" lines. Names must be covariate names (first moments)
// or "name^2" (second moments); every declared moment must appear once.
MomentTarget read_moment_target(const std::string& path, const std::vector<std::string>& covariates,
                                char delimiter = ',');

// Same rules for already-parsed (name, value) pairs.
MomentTarget moment_target_from_entries(const std::map<std::string, double>& entries,
                                        const std::vector<std::string>& covariates);

struct CalibrationOptions {
  std::optional<Eigen::VectorXd> base_weights;  // positive; normalized internally
  double tolerance = 1e-8;
  int max_iterations = 200;
};

struct CalibrationWeights {
  Eigen::VectorXd w;     // over source rows, positive, sums to 1
  Eigen::VectorXd dual;  // Lagrange multipliers on the original feature scale
  bool converged = false;
  int iterations = 0;
  double max_moment_violation = 0.0;
};

// Entropy balancing: minimizes sum w log(w / base) subject to
// sum w f(x) = target and sum w = 1. Solved through the dual
//   log sum base * exp(dual' (f - target))
// with damped Newton steps on standardized features.
// Errors: Infeasible (target outside the feature range, or the dual
// diverges without progress), NonConvergence.
CalibrationWeights entropy_balance(const Eigen::MatrixXd& x_source, const MomentTarget& target,
                                   const CalibrationOptions& options = {});

// w proportional to base * exp(dual' f(x)), normalized to sum 1.
Eigen::VectorXd weights_from_dual(const Eigen::MatrixXd& x_source, const MomentTarget& target,
                                  const Eigen::VectorXd& dual,
                                  const std::optional<Eigen::VectorXd>& base_weights = std::nullopt);

struct CalibratedEstimate {
  Eigen::VectorXd psi;                      // per arm
  std::vector<ContrastEstimate> contrasts;  // all (a, b) with a > b, no SE
};

// Weighting estimator with calibration weights in place of selection
// weights, Hajek-normalized within arm:
//   psi_a = sum w 1{A = a} Y / pi_a  /  sum w 1{A = a} / pi_a
// `weights` are aligned with data.study_rows(); `propensity` is
// (num study rows) x (K + 1). Errors: EmptyArmUnderWeights(a).
CalibratedEstimate calibrated_estimate(const Dataset& data, const Eigen::VectorXd& weights,
                                       const Eigen::MatrixXd& propensity);

// Arm shares among study rows, repeated for every study row (known
// randomization design).
Eigen::MatrixXd empirical_arm_propensity(const Dataset& data);

}  // namespace covshift
