#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace covshift {

enum class Family { gaussian, binomial, multinomial };

std::string to_string(Family family);

// Basis applied to raw covariates before fitting.
//   linear:    x_1..x_p
//   quadratic: x_1..x_p, then x_i * x_j for i <= j
enum class FeatureMap { linear, quadratic };

std::string to_string(FeatureMap map);
FeatureMap feature_map_from_string(const std::string& name);

Eigen::MatrixXd expand_features(const Eigen::MatrixXd& x, FeatureMap map);

// 13 log-spaced values from 1 down to 1e-4.
std::vector<double> default_lambda_grid();

struct RegularizationConfig {
  std::vector<double> lambda_grid = default_lambda_grid();  // strictly descending
  int cv_folds = 5;
  Family family = Family::gaussian;
  bool intercept = true;  // unpenalized

  // Throws ConfigError("InvalidRegularization") on an empty, non-positive
  // or unsorted grid, or cv_folds < 2.
  void validate() const;
};

struct GlmOptions {
  // Class count for the multinomial family; 0 means max(y) + 1.
  int num_classes = 0;
  bool intercept = true;
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
};

// Ridge-penalized GLM fit. Covariates are standardized internally with
// (weighted) training statistics; the penalty acts on the standardized
// slopes. coefficients() maps back to the original scale.
//
// Linear predictors: one column for gaussian/binomial; for multinomial,
// columns for classes 1..m-1 against reference class 0.
class GlmFit {
 public:
  Family family = Family::gaussian;
  double lambda = 0.0;
  int num_classes = 1;
  bool intercept = true;
  Eigen::RowVectorXd center;
  Eigen::RowVectorXd scale;
  // (intercept + p) x columns, standardized scale; row 0 is the intercept
  // when present.
  Eigen::MatrixXd standardized;
  // Set when the response carried no information (e.g. binomial y all 0 or
  // all 1). Holds the fitted mean response, which predict() returns for
  // every row.
  std::optional<Eigen::RowVectorXd> constant_mean;
  int iterations = 0;
  double gradient_norm = 0.0;

  // (1 + p) x columns on the original covariate scale, row 0 intercept.
  Eigen::MatrixXd coefficients() const;
  Eigen::MatrixXd linear_predictor(const Eigen::MatrixXd& x) const;
  // gaussian: n x 1 mean; binomial: n x 1 P(y = 1); multinomial: n x m
  // class probabilities.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;
};

// Minimizes (weighted negative log-likelihood) / (sum of weights)
//   + lambda * ||slopes||^2 / 2.
// Gaussian uses the closed form; binomial and multinomial use damped Newton
// until the gradient norm drops below options.gradient_tolerance.
// Errors: DimensionMismatch, InvalidResponse, NonConvergence.
GlmFit fit_regularized_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                           double lambda, std::span<const double> weights = {},
                           const GlmOptions& options = {});

// Fits along a descending grid, reusing the Gram matrix (gaussian) or the
// previous solution as a warm start (binomial, multinomial).
std::vector<GlmFit> fit_regularized_glm_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                             Family family, std::span<const double> lambdas,
                                             std::span<const double> weights = {},
                                             const GlmOptions& options = {});

// Weighted held-out loss: mean squared error (gaussian) or mean deviance
// (binomial, multinomial). `prediction` is GlmFit::predict output.
double prediction_loss(Family family, const Eigen::MatrixXd& prediction,
                       const Eigen::VectorXd& y, std::span<const double> weights = {});

struct CvResult {
  double lambda = 0.0;
  std::size_t index = 0;
  std::vector<double> cv_loss;  // aligned with the grid
};

// K-fold CV over config.lambda_grid. The minimizing grid value wins; exact
// ties go to the larger lambda. Requires n >= 2 * cv_folds.
CvResult select_lambda_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const RegularizationConfig& config, std::uint64_t seed,
                          std::span<const double> weights = {}, const GlmOptions& options = {});

}  // namespace covshift
