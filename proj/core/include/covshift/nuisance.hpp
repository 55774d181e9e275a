#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covshift/dataset.hpp"
#include "covshift/folds.hpp"
#include "covshift/glm.hpp"

namespace covshift {

struct Trim {
  double lo = 0.01;
  double hi = 0.99;
  // Requires 0 < lo < hi < 1 (InvalidTrim).
  void validate() const;
};

// How the ridge penalty is chosen for cross-fitted nuisances.
//   nested: inner K-fold CV on each cross-fitting training set, so fold f
//           predictions never depend on fold f rows.
//   shared: one CV curve computed on the cross-fitting folds themselves and
//           a single penalty applied to all folds. About cv_folds times
//           cheaper; the penalty (a single scalar) sees every row.
enum class LambdaSelection { nested, shared };

std::string to_string(LambdaSelection selection);
LambdaSelection lambda_selection_from_string(const std::string& name);

struct NuisanceModelConfig {
  RegularizationConfig regularization;
  FeatureMap features = FeatureMap::linear;
};

struct NuisanceConfig {
  int folds = 5;
  Trim trim;
  std::uint64_t seed = 1;
  NuisanceModelConfig outcome{{default_lambda_grid(), 5, Family::gaussian, true}, FeatureMap::linear};
  NuisanceModelConfig treatment{{default_lambda_grid(), 5, Family::multinomial, true},
                                FeatureMap::linear};
  NuisanceModelConfig selection{{default_lambda_grid(), 5, Family::binomial, true},
                                FeatureMap::linear};
  LambdaSelection lambda_selection = LambdaSelection::nested;
  int threads = 1;

  // Same grid and CV folds for all three models.
  void set_lambda_grid(const std::vector<double>& grid);
  void set_cv_folds(int k);
  void set_features(FeatureMap map);
  void validate() const;
};

struct NuisanceTimings {
  double outcome_seconds = 0.0;
  double treatment_seconds = 0.0;
  double selection_seconds = 0.0;
};

// Cross-fitted nuisance predictions for every row. Row i's values come
// from models fit without the rows of fold folds.fold_of[i].
//
// Plain aggregate so that estimators can also be fed hand-supplied values.
struct NuisanceFits {
  Eigen::MatrixXd mu;             // n x (K+1), outcome model per arm
  Eigen::MatrixXd pi;             // n x (K+1), trimmed, rows sum to 1
  Eigen::VectorXd rho;            // n, trimmed selection propensity
  Eigen::MatrixXd pi_untrimmed;   // multinomial head output
  Eigen::VectorXd rho_untrimmed;
  Trim trim;
  FoldAssignment folds;
  // Selected penalty per fold (outcome: per arm, then per fold).
  std::vector<std::vector<double>> lambda_mu;
  std::vector<double> lambda_pi;
  std::vector<double> lambda_rho;
  std::size_t trimmed_pi = 0;   // entries moved by trimming
  std::size_t trimmed_rho = 0;
  NuisanceTimings timings;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(rho.size()); }
  int num_arms() const noexcept { return static_cast<int>(mu.cols()); }
  // Rows restricted (with repeats) to `rows`, e.g. for a bootstrap
  // replicate that keeps nuisances fixed.
  NuisanceFits subset(std::span<const std::size_t> rows) const;
};

// Maps a probability row into {p : sum p = 1, lo <= p_a <= hi} as
// clamp(c p_a, lo, hi) with the common factor c chosen to restore the sum.
Eigen::RowVectorXd clip_to_simplex(const Eigen::RowVectorXd& probabilities, double lo, double hi);

// Outcome model: one gaussian ridge fit per arm on study rows of that arm.
// Treatment model: multinomial ridge over A on study rows.
// Selection model: binomial ridge over S on all rows.
// Every model is trained outside fold f and predicts all rows of fold f.
// Errors: EmptyTrainingCell(fold, arm) and propagated GLM errors.
NuisanceFits fit_nuisances(const Dataset& data, const FoldAssignment& folds,
                           const NuisanceConfig& config, std::span<const double> row_weights = {});

// Builds folds with make_folds(n, config.folds, config.seed) first.
NuisanceFits fit_nuisances(const Dataset& data, const NuisanceConfig& config,
                           std::span<const double> row_weights = {});

// Columns: row_id, rho, pi_0..pi_K, mu_0..mu_K.
void write_nuisance_audit(const std::string& path, const NuisanceFits& fits, char delimiter = ',');

}  // namespace covshift
