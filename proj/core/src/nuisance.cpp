#include "covshift/nuisance.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>

#include "covshift/error.hpp"
#include "covshift/parallel.hpp"
#include "covshift/random.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd take_rows(const MatrixXd& m, std::span<const std::size_t> rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(static_cast<Index>(rows[r]));
  return out;
}

VectorXd take(const VectorXd& v, std::span<const std::size_t> rows) {
  VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(static_cast<Index>(rows[r]));
  return out;
}

std::vector<double> take(const std::vector<double>& v, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = v[rows[r]];
  return out;
}

// One nuisance regression to cross-fit: rows with `eligible` set carry a
// response and may be used for training.
struct CrossFitTask {
  const MatrixXd* features = nullptr;
  VectorXd response;
  std::vector<std::uint8_t> eligible;
  const std::vector<double>* weights = nullptr;
  Family family = Family::gaussian;
  int num_classes = 1;
  const RegularizationConfig* regularization = nullptr;
  std::uint64_t seed = 0;
  int arm = -1;  // for error messages
};

struct CrossFitResult {
  MatrixXd prediction;             // n x columns
  std::vector<double> lambda;      // per fold
};

struct FoldSplit {
  std::vector<std::size_t> train;  // eligible rows outside the fold
  std::vector<std::size_t> test;   // every row in the fold
};

FoldSplit split_fold(const CrossFitTask& task, const FoldAssignment& folds, int f) {
  FoldSplit split;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (folds.fold_of[i] == f) {
      split.test.push_back(i);
    } else if (task.eligible[i]) {
      split.train.push_back(i);
    }
  }
  if (split.train.empty()) {
    throw DataError("EmptyTrainingCell", "fold " + std::to_string(f) +
                                             (task.arm >= 0 ? ", arm " + std::to_string(task.arm) : ""));
  }
  return split;
}

int prediction_columns(Family family, int classes) {
  return family == Family::multinomial ? classes : 1;
}

CrossFitResult crossfit_nested(const CrossFitTask& task, const FoldAssignment& folds, int threads) {
  const auto& reg = *task.regularization;
  CrossFitResult out;
  out.prediction = MatrixXd::Zero(static_cast<Index>(folds.size()),
                                  prediction_columns(task.family, task.num_classes));
  out.lambda.assign(static_cast<std::size_t>(folds.k), 0.0);
  GlmOptions opts;
  opts.num_classes = task.num_classes;
  opts.intercept = reg.intercept;

  std::vector<FoldSplit> splits;
  for (int f = 0; f < folds.k; ++f) splits.push_back(split_fold(task, folds, f));

  parallel_for(static_cast<std::size_t>(folds.k), threads, [&](std::size_t fi) {
    const auto& split = splits[fi];
    const MatrixXd xt = take_rows(*task.features, split.train);
    const VectorXd yt = take(task.response, split.train);
    std::vector<double> wt;
    if (task.weights) wt = take(*task.weights, split.train);
    double lambda = reg.lambda_grid.front();
    if (reg.lambda_grid.size() > 1) {
      lambda = select_lambda_cv(xt, yt, reg, derive_seed(task.seed, fi), wt, opts).lambda;
    }
    const GlmFit fit = fit_regularized_glm(xt, yt, task.family, lambda, wt, opts);
    const MatrixXd pred = fit.predict(take_rows(*task.features, split.test));
    for (std::size_t r = 0; r < split.test.size(); ++r) {
      out.prediction.row(static_cast<Index>(split.test[r])) = pred.row(static_cast<Index>(r));
    }
    out.lambda[fi] = lambda;
  });
  return out;
}

CrossFitResult crossfit_shared(const CrossFitTask& task, const FoldAssignment& folds, int threads) {
  const auto& reg = *task.regularization;
  const std::size_t g = reg.lambda_grid.size();
  GlmOptions opts;
  opts.num_classes = task.num_classes;
  opts.intercept = reg.intercept;

  std::vector<FoldSplit> splits;
  for (int f = 0; f < folds.k; ++f) splits.push_back(split_fold(task, folds, f));
  // Per fold: predictions on the fold's rows for every grid value, plus the
  // weighted held-out loss on its eligible rows.
  std::vector<std::vector<MatrixXd>> preds(static_cast<std::size_t>(folds.k));
  std::vector<std::vector<double>> losses(static_cast<std::size_t>(folds.k), std::vector<double>(g, 0.0));

  parallel_for(static_cast<std::size_t>(folds.k), threads, [&](std::size_t fi) {
    const auto& split = splits[fi];
    const MatrixXd xt = take_rows(*task.features, split.train);
    const VectorXd yt = take(task.response, split.train);
    std::vector<double> wt;
    if (task.weights) wt = take(*task.weights, split.train);
    const auto path = fit_regularized_glm_path(xt, yt, task.family, reg.lambda_grid, wt, opts);
    const MatrixXd xv = take_rows(*task.features, split.test);
    std::vector<std::size_t> scored;
    for (std::size_t r = 0; r < split.test.size(); ++r) {
      if (task.eligible[split.test[r]]) scored.push_back(r);
    }
    VectorXd yv(static_cast<Index>(scored.size()));
    std::vector<double> wv(scored.size(), 1.0);
    double weight = 0.0;
    for (std::size_t s = 0; s < scored.size(); ++s) {
      const auto row = split.test[scored[s]];
      yv(static_cast<Index>(s)) = task.response(static_cast<Index>(row));
      if (task.weights) wv[s] = (*task.weights)[row];
      weight += wv[s];
    }
    for (std::size_t l = 0; l < g; ++l) {
      MatrixXd p = path[l].predict(xv);
      if (!scored.empty() && weight > 0) {
        MatrixXd ps(static_cast<Index>(scored.size()), p.cols());
        for (std::size_t s = 0; s < scored.size(); ++s) ps.row(static_cast<Index>(s)) = p.row(static_cast<Index>(scored[s]));
        losses[fi][l] = weight * prediction_loss(task.family, ps, yv, wv);
      }
      preds[fi].push_back(std::move(p));
    }
  });

  std::size_t best = 0;
  std::vector<double> total(g, 0.0);
  for (std::size_t l = 0; l < g; ++l) {
    for (const auto& fold_loss : losses) total[l] += fold_loss[l];
    if (total[l] < total[best]) best = l;
  }
  CrossFitResult out;
  out.prediction = MatrixXd::Zero(static_cast<Index>(folds.size()),
                                  prediction_columns(task.family, task.num_classes));
  out.lambda.assign(static_cast<std::size_t>(folds.k), reg.lambda_grid[best]);
  for (std::size_t fi = 0; fi < splits.size(); ++fi) {
    const auto& test = splits[fi].test;
    for (std::size_t r = 0; r < test.size(); ++r) {
      out.prediction.row(static_cast<Index>(test[r])) = preds[fi][best].row(static_cast<Index>(r));
    }
  }
  return out;
}

CrossFitResult crossfit(const CrossFitTask& task, const FoldAssignment& folds,
                        LambdaSelection selection, int threads) {
  return selection == LambdaSelection::nested ? crossfit_nested(task, folds, threads)
                                              : crossfit_shared(task, folds, threads);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_number(std::ostream& os, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, ptr - buf);
}

}  // namespace

void Trim::validate() const {
  if (!(lo > 0.0 && lo < hi && hi < 1.0)) {
    throw ConfigError("InvalidTrim", "need 0 < trim_lo < trim_hi < 1");
  }
}

std::string to_string(LambdaSelection selection) {
  return selection == LambdaSelection::nested ? "nested" : "shared";
}

LambdaSelection lambda_selection_from_string(const std::string& name) {
  if (name == "nested") return LambdaSelection::nested;
  if (name == "shared") return LambdaSelection::shared;
  throw ConfigError("InvalidLambdaSelection", "expected nested or shared, got '" + name + "'");
}

void NuisanceConfig::set_lambda_grid(const std::vector<double>& grid) {
  outcome.regularization.lambda_grid = grid;
  treatment.regularization.lambda_grid = grid;
  selection.regularization.lambda_grid = grid;
}

void NuisanceConfig::set_cv_folds(int k) {
  outcome.regularization.cv_folds = k;
  treatment.regularization.cv_folds = k;
  selection.regularization.cv_folds = k;
}

void NuisanceConfig::set_features(FeatureMap map) {
  outcome.features = map;
  treatment.features = map;
  selection.features = map;
}

void NuisanceConfig::validate() const {
  if (folds < 2) throw ConfigError("InvalidFoldCount", "folds must be >= 2");
  trim.validate();
  outcome.regularization.validate();
  treatment.regularization.validate();
  selection.regularization.validate();
}

NuisanceFits NuisanceFits::subset(std::span<const std::size_t> rows) const {
  NuisanceFits out;
  out.mu = take_rows(mu, rows);
  out.pi = take_rows(pi, rows);
  out.rho = take(rho, rows);
  if (pi_untrimmed.rows() == mu.rows()) out.pi_untrimmed = take_rows(pi_untrimmed, rows);
  if (rho_untrimmed.size() == rho.size()) out.rho_untrimmed = take(rho_untrimmed, rows);
  out.trim = trim;
  out.folds.k = folds.k;
  out.folds.seed = folds.seed;
  if (folds.size() == this->rows()) {
    for (auto r : rows) out.folds.fold_of.push_back(folds.fold_of[r]);
  }
  out.lambda_mu = lambda_mu;
  out.lambda_pi = lambda_pi;
  out.lambda_rho = lambda_rho;
  return out;
}

Eigen::RowVectorXd clip_to_simplex(const Eigen::RowVectorXd& probabilities, double lo, double hi) {
  const Index m = probabilities.size();
  if (m == 1) return Eigen::RowVectorXd::Ones(1);
  if (m * lo > 1.0 + 1e-12 || m * hi < 1.0 - 1e-12) {
    throw ConfigError("InvalidTrim", "trim bounds infeasible for " + std::to_string(m) + " arms");
  }
  // Find c with sum_a clamp(c p_a, lo, hi) = 1. The sum is piecewise linear
  // and nondecreasing in c, with kinks at lo / p_a and hi / p_a.
  const auto total = [&](double c) {
    double s = 0.0;
    for (Index a = 0; a < m; ++a) s += std::clamp(c * probabilities(a), lo, hi);
    return s;
  };
  std::vector<double> kinks{0.0};
  for (Index a = 0; a < m; ++a) {
    if (probabilities(a) > 0) {
      kinks.push_back(lo / probabilities(a));
      kinks.push_back(hi / probabilities(a));
    }
  }
  std::sort(kinks.begin(), kinks.end());
  Eigen::RowVectorXd out(m);
  std::size_t k = 1;
  while (k < kinks.size() && total(kinks[k]) < 1.0) ++k;
  if (k == kinks.size()) {
    // Every arm with positive probability sits at hi; zero-probability arms
    // share the remainder.
    Index zeros = 0;
    double fixed = 0.0;
    for (Index a = 0; a < m; ++a) {
      if (probabilities(a) > 0) fixed += (out(a) = hi);
      else ++zeros;
    }
    for (Index a = 0; a < m; ++a) {
      if (probabilities(a) <= 0) out(a) = (1.0 - fixed) / static_cast<double>(zeros);
    }
    return out;
  }
  // Linear on [kinks[k-1], kinks[k]]: arms clamped at the midpoint stay
  // clamped, the rest scale with c.
  const double mid = 0.5 * (kinks[k - 1] + kinks[k]);
  double clamped = 0.0;
  double slope = 0.0;
  for (Index a = 0; a < m; ++a) {
    const double v = mid * probabilities(a);
    if (v <= lo) clamped += lo;
    else if (v >= hi) clamped += hi;
    else slope += probabilities(a);
  }
  const double c = slope > 0 ? (1.0 - clamped) / slope : kinks[k];
  for (Index a = 0; a < m; ++a) {
    const double v = mid * probabilities(a);
    out(a) = v <= lo ? lo : v >= hi ? hi : c * probabilities(a);
  }
  return out;
}

NuisanceFits fit_nuisances(const Dataset& data, const FoldAssignment& folds,
                           const NuisanceConfig& config, std::span<const double> row_weights) {
  config.validate();
  const std::size_t n = data.size();
  if (folds.size() != n) throw DataError("DimensionMismatch", "folds do not cover the dataset");
  if (!row_weights.empty() && row_weights.size() != n) {
    throw DataError("DimensionMismatch", "row weight count does not match rows");
  }
  const int arms = data.num_arms();
  std::optional<std::vector<double>> weights;
  if (!row_weights.empty()) weights.emplace(row_weights.begin(), row_weights.end());
  const std::vector<double>* wptr = weights ? &*weights : nullptr;

  NuisanceFits fits;
  fits.trim = config.trim;
  fits.folds = folds;

  // Selection: binomial over S on all rows.
  auto start = std::chrono::steady_clock::now();
  {
    const MatrixXd features = expand_features(data.covariates(), config.selection.features);
    CrossFitTask task;
    task.features = &features;
    task.response.resize(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) task.response(static_cast<Index>(i)) = data.selection()[i];
    task.eligible.assign(n, 1);
    task.weights = wptr;
    task.family = Family::binomial;
    task.num_classes = 2;
    task.regularization = &config.selection.regularization;
    task.seed = derive_seed(config.seed, 101);
    auto result = crossfit(task, folds, config.lambda_selection, config.threads);
    fits.rho_untrimmed = result.prediction.col(0);
    fits.lambda_rho = std::move(result.lambda);
  }
  fits.timings.selection_seconds = seconds_since(start);

  // Treatment: multinomial over A on study rows.
  start = std::chrono::steady_clock::now();
  {
    const MatrixXd features = expand_features(data.covariates(), config.treatment.features);
    CrossFitTask task;
    task.features = &features;
    task.response = VectorXd::Zero(static_cast<Index>(n));
    task.eligible.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (auto a = data.treatment(i)) {
        task.response(static_cast<Index>(i)) = *a;
        task.eligible[i] = 1;
      }
    }
    task.weights = wptr;
    task.family = Family::multinomial;
    task.num_classes = arms;
    task.regularization = &config.treatment.regularization;
    task.seed = derive_seed(config.seed, 202);
    // Every arm must be present in every training fold.
    for (int f = 0; f < folds.k; ++f) {
      std::vector<std::size_t> count(static_cast<std::size_t>(arms), 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (folds.fold_of[i] != f && task.eligible[i]) ++count[static_cast<std::size_t>(task.response(static_cast<Index>(i)))];
      }
      for (int a = 0; a < arms; ++a) {
        if (count[static_cast<std::size_t>(a)] == 0) {
          throw DataError("EmptyTrainingCell", "fold " + std::to_string(f) + ", arm " + std::to_string(a));
        }
      }
    }
    auto result = crossfit(task, folds, config.lambda_selection, config.threads);
    fits.pi_untrimmed = result.prediction;
    fits.lambda_pi = std::move(result.lambda);
  }
  fits.timings.treatment_seconds = seconds_since(start);

  // Outcome: gaussian per arm on study rows of that arm.
  start = std::chrono::steady_clock::now();
  {
    const MatrixXd features = expand_features(data.covariates(), config.outcome.features);
    fits.mu.resize(static_cast<Index>(n), arms);
    for (int a = 0; a < arms; ++a) {
      CrossFitTask task;
      task.features = &features;
      task.response = VectorXd::Zero(static_cast<Index>(n));
      task.eligible.assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (data.has_arm(i, a)) {
          task.response(static_cast<Index>(i)) = *data.outcome(i);
          task.eligible[i] = 1;
        }
      }
      task.weights = wptr;
      task.family = Family::gaussian;
      task.regularization = &config.outcome.regularization;
      task.seed = derive_seed(config.seed, 303 + static_cast<std::uint64_t>(a));
      task.arm = a;
      auto result = crossfit(task, folds, config.lambda_selection, config.threads);
      fits.mu.col(a) = result.prediction.col(0);
      fits.lambda_mu.push_back(std::move(result.lambda));
    }
  }
  fits.timings.outcome_seconds = seconds_since(start);

  const double lo = config.trim.lo;
  const double hi = config.trim.hi;
  fits.rho.resize(static_cast<Index>(n));
  fits.pi.resize(static_cast<Index>(n), arms);
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double r = fits.rho_untrimmed(i);
    fits.rho(i) = std::clamp(r, lo, hi);
    if (fits.rho(i) != r) ++fits.trimmed_rho;
    const Eigen::RowVectorXd row = fits.pi_untrimmed.row(i);
    fits.pi.row(i) = clip_to_simplex(row, lo, hi);
    if (arms > 1) {
      for (Index a = 0; a < arms; ++a) {
        if (row(a) < lo || row(a) > hi) ++fits.trimmed_pi;
      }
    }
  }
  return fits;
}

NuisanceFits fit_nuisances(const Dataset& data, const NuisanceConfig& config,
                           std::span<const double> row_weights) {
  return fit_nuisances(data, make_folds(data.size(), config.folds, config.seed), config, row_weights);
}

void write_nuisance_audit(const std::string& path, const NuisanceFits& fits, char delimiter) {
  std::ofstream out(path);
  if (!out) throw ConfigError("FileNotWritable", path);
  const int arms = fits.num_arms();
  out << "row_id" << delimiter << "rho";
  for (int a = 0; a < arms; ++a) out << delimiter << "pi_" << a;
  for (int a = 0; a < arms; ++a) out << delimiter << "mu_" << a;
  out << '\n';
  for (std::size_t i = 0; i < fits.rows(); ++i) {
    const auto r = static_cast<Index>(i);
    out << i << delimiter;
    write_number(out, fits.rho(r));
    for (int a = 0; a < arms; ++a) {
      out << delimiter;
      write_number(out, fits.pi(r, a));
    }
    for (int a = 0; a < arms; ++a) {
      out << delimiter;
      write_number(out, fits.mu(r, a));
    }
    out << '\n';
  }
}

}  // namespace covshift
