#include "covshift/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "covshift/error.hpp"
#include "covshift/folds.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

double softplus(double eta) {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

double expit(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

VectorXd resolve_weights(std::span<const double> weights, Index n) {
  if (weights.empty()) return VectorXd::Ones(n);
  if (static_cast<Index>(weights.size()) != n) {
    throw DataError("DimensionMismatch", "weight count does not match rows");
  }
  VectorXd w(n);
  for (Index i = 0; i < n; ++i) {
    if (!(weights[static_cast<std::size_t>(i)] >= 0.0) ||
        !std::isfinite(weights[static_cast<std::size_t>(i)])) {
      throw DataError("InvalidWeights", "weights must be finite and nonnegative");
    }
    w(i) = weights[static_cast<std::size_t>(i)];
  }
  return w;
}

// Standardized design with a leading column of ones when an intercept is
// fitted.
struct Design {
  MatrixXd z;
  RowVectorXd center;
  RowVectorXd scale;
  VectorXd penalty;  // 0 for intercept, 1 for slopes
  bool intercept = true;
};

Design standardize(const MatrixXd& x, const VectorXd& w, bool intercept) {
  const Index n = x.rows();
  const Index p = x.cols();
  const double sw = w.sum();
  Design d;
  d.intercept = intercept;
  d.center = RowVectorXd::Zero(p);
  d.scale = RowVectorXd::Ones(p);
  if (intercept) d.center = (w.transpose() * x) / sw;
  for (Index j = 0; j < p; ++j) {
    const double ss = (w.array() * (x.col(j).array() - d.center(j)).square()).sum() / sw;
    const double sd = std::sqrt(ss);
    d.scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  const Index off = intercept ? 1 : 0;
  d.z.resize(n, p + off);
  if (intercept) d.z.col(0).setOnes();
  d.z.rightCols(p) = (x.rowwise() - d.center).array().rowwise() / d.scale.array();
  d.penalty = VectorXd::Ones(p + off);
  if (intercept) d.penalty(0) = 0.0;
  return d;
}

void check_inputs(const MatrixXd& x, const VectorXd& y, Family family, int num_classes) {
  if (x.rows() != y.size()) throw DataError("DimensionMismatch", "X rows != y length");
  if (x.rows() == 0) throw DataError("DimensionMismatch", "empty design");
  if (!x.allFinite() || !y.allFinite()) throw DataError("NonFinite", "X and y must be finite");
  if (family == Family::binomial) {
    for (Index i = 0; i < y.size(); ++i) {
      if (y(i) != 0.0 && y(i) != 1.0) throw DataError("InvalidResponse", "binomial y not in {0,1}");
    }
  } else if (family == Family::multinomial) {
    for (Index i = 0; i < y.size(); ++i) {
      if (y(i) < 0 || y(i) >= num_classes || std::floor(y(i)) != y(i)) {
        throw DataError("InvalidResponse", "multinomial y not in {0..K}");
      }
    }
  }
}

int resolve_classes(Family family, const VectorXd& y, const GlmOptions& options) {
  if (family == Family::binomial) return 2;
  if (family == Family::gaussian) return 1;
  if (options.num_classes > 0) return options.num_classes;
  return static_cast<int>(y.maxCoeff()) + 1;
}

// Objective, gradient and Hessian of the penalized likelihood for the
// binomial / multinomial families in standardized coordinates.
class LogisticProblem {
 public:
  LogisticProblem(const Design& design, const VectorXd& y, const VectorXd& w, int classes,
                  double lambda)
      : d_(design), w_(w / w.sum()), classes_(classes), lambda_(lambda) {
    const Index n = y.size();
    cols_ = classes - 1;
    onehot_ = MatrixXd::Zero(n, cols_);
    for (Index i = 0; i < n; ++i) {
      const int c = static_cast<int>(y(i));
      if (c > 0) onehot_(i, c - 1) = 1.0;
    }
  }

  Index dim() const { return d_.z.cols() * cols_; }
  Index cols() const { return cols_; }

  MatrixXd unpack(const VectorXd& theta) const {
    return Eigen::Map<const MatrixXd>(theta.data(), d_.z.cols(), cols_);
  }

  // Row-wise probabilities of classes 1..m-1 and the per-row loss.
  void probabilities(const MatrixXd& eta, MatrixXd& prob, VectorXd& loss) const {
    const Index n = eta.rows();
    prob.resize(n, cols_);
    loss.resize(n);
    for (Index i = 0; i < n; ++i) {
      if (cols_ == 1) {
        const double e = eta(i, 0);
        prob(i, 0) = expit(e);
        loss(i) = softplus(e) - onehot_(i, 0) * e;
        continue;
      }
      const double m = std::max(0.0, eta.row(i).maxCoeff());
      double denom = std::exp(-m);
      for (Index c = 0; c < cols_; ++c) denom += std::exp(eta(i, c) - m);
      const double lse = m + std::log(denom);
      double observed = 0.0;
      for (Index c = 0; c < cols_; ++c) {
        prob(i, c) = std::exp(eta(i, c) - lse);
        observed += onehot_(i, c) * eta(i, c);
      }
      loss(i) = lse - observed;
    }
  }

  double objective(const VectorXd& theta) const {
    const MatrixXd b = unpack(theta);
    MatrixXd prob;
    VectorXd loss;
    probabilities(d_.z * b, prob, loss);
    double pen = 0.0;
    for (Index c = 0; c < cols_; ++c) {
      pen += (d_.penalty.array() * b.col(c).array().square()).sum();
    }
    return w_.dot(loss) + 0.5 * lambda_ * pen;
  }

  void gradient_hessian(const VectorXd& theta, VectorXd& grad, MatrixXd* hess) const {
    const MatrixXd b = unpack(theta);
    MatrixXd prob;
    VectorXd loss;
    probabilities(d_.z * b, prob, loss);
    const Index dz = d_.z.cols();
    grad.resize(dim());
    const MatrixXd resid = (prob - onehot_).array().colwise() * w_.array();
    for (Index c = 0; c < cols_; ++c) {
      grad.segment(c * dz, dz) =
          d_.z.transpose() * resid.col(c) + lambda_ * (d_.penalty.array() * b.col(c).array()).matrix();
    }
    if (!hess) return;
    hess->setZero(dim(), dim());
    for (Index c = 0; c < cols_; ++c) {
      for (Index c2 = c; c2 < cols_; ++c2) {
        VectorXd v = (c == c2) ? VectorXd(w_.array() * prob.col(c).array() * (1.0 - prob.col(c).array()))
                               : VectorXd(-w_.array() * prob.col(c).array() * prob.col(c2).array());
        MatrixXd block;
        if (c == c2) {
          const MatrixXd zs = d_.z.array().colwise() * v.array().sqrt();
          block = MatrixXd::Zero(dz, dz);
          block.selfadjointView<Eigen::Lower>().rankUpdate(zs.transpose());
          block = block.selfadjointView<Eigen::Lower>();
          block.diagonal() += lambda_ * d_.penalty;
        } else {
          block = d_.z.transpose() * (d_.z.array().colwise() * v.array()).matrix();
        }
        hess->block(c * dz, c2 * dz, dz, dz) = block;
        if (c != c2) hess->block(c2 * dz, c * dz, dz, dz) = block.transpose();
      }
    }
  }

 private:
  const Design& d_;
  VectorXd w_;
  int classes_;
  Index cols_ = 1;
  double lambda_;
  MatrixXd onehot_;
};

VectorXd initial_theta(const Design& d, const VectorXd& y, const VectorXd& w, int classes) {
  const Index dz = d.z.cols();
  VectorXd theta = VectorXd::Zero(dz * (classes - 1));
  if (!d.intercept) return theta;
  std::vector<double> share(static_cast<std::size_t>(classes), 0.0);
  for (Index i = 0; i < y.size(); ++i) share[static_cast<std::size_t>(y(i))] += w(i);
  for (int c = 1; c < classes; ++c) {
    theta((c - 1) * dz) = std::log(share[static_cast<std::size_t>(c)] / share[0]);
  }
  return theta;
}

GlmFit make_fit(const Design& d, Family family, double lambda, int classes) {
  GlmFit fit;
  fit.family = family;
  fit.lambda = lambda;
  fit.num_classes = classes;
  fit.intercept = d.intercept;
  fit.center = d.center;
  fit.scale = d.scale;
  return fit;
}

// Response carries no information: only one class has positive weight.
std::optional<RowVectorXd> degenerate_mean(Family family, const VectorXd& y, const VectorXd& w,
                                           int classes) {
  if (family == Family::gaussian) return std::nullopt;
  std::vector<double> share(static_cast<std::size_t>(classes), 0.0);
  for (Index i = 0; i < y.size(); ++i) share[static_cast<std::size_t>(y(i))] += w(i);
  int present = 0;
  int last = 0;
  for (int c = 0; c < classes; ++c) {
    if (share[static_cast<std::size_t>(c)] > 0) {
      ++present;
      last = c;
    }
  }
  if (present > 1) {
    if (present < classes) {
      throw DataError("EmptyClass", "a response class has no training rows");
    }
    return std::nullopt;
  }
  if (family == Family::binomial) return RowVectorXd::Constant(1, static_cast<double>(last));
  RowVectorXd mean = RowVectorXd::Zero(classes);
  mean(last) = 1.0;
  return mean;
}

void solve_logistic(const Design& d, const VectorXd& y, const VectorXd& w, int classes,
                    double lambda, VectorXd& theta, const GlmOptions& options, GlmFit& fit) {
  LogisticProblem problem(d, y, w, classes, lambda);
  VectorXd grad;
  MatrixXd hess;
  double f = problem.objective(theta);
  int iter = 0;
  for (;; ++iter) {
    problem.gradient_hessian(theta, grad, &hess);
    const double gnorm = grad.norm();
    fit.gradient_norm = gnorm;
    if (gnorm < options.gradient_tolerance) break;
    if (iter >= options.max_iterations) {
      throw NumericalError("NonConvergence", "iterations=" + std::to_string(iter) +
                                                 " grad_norm=" + std::to_string(gnorm));
    }
    Eigen::LDLT<MatrixXd> ldlt(hess);
    VectorXd step = ldlt.solve(-grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || grad.dot(step) >= 0) {
      hess.diagonal().array() += 1e-10 + 1e-8 * hess.diagonal().cwiseAbs().maxCoeff();
      step = hess.ldlt().solve(-grad);
      if (!step.allFinite() || grad.dot(step) >= 0) step = -grad;
    }
    double t = 1.0;
    const double slope = grad.dot(step);
    if (-slope <= 1e-12 * (1.0 + std::abs(f))) {
      // Predicted decrease is below the objective's rounding, so the line
      // search cannot see it; the full Newton step is safe this close in.
      theta += step;
      f = problem.objective(theta);
      continue;
    }
    double f_new = problem.objective(theta + step);
    int halvings = 0;
    while (!(f_new <= f + 1e-4 * t * slope) && halvings < 60) {
      t *= 0.5;
      f_new = problem.objective(theta + t * step);
      ++halvings;
    }
    if (halvings == 60) {
      // No decrease representable at this precision; accept the point if
      // the gradient is already tiny relative to the objective scale.
      if (gnorm < 1e3 * options.gradient_tolerance) break;
      throw NumericalError("NonConvergence", "line search failed, grad_norm=" +
                                                 std::to_string(gnorm));
    }
    theta += t * step;
    f = f_new;
  }
  fit.iterations = iter;
  fit.standardized = problem.unpack(theta);
}

std::vector<GlmFit> fit_path(const MatrixXd& x, const VectorXd& y, Family family,
                             std::span<const double> lambdas, const VectorXd& w,
                             const GlmOptions& options) {
  const int classes = resolve_classes(family, y, options);
  check_inputs(x, y, family, classes);
  if (!(w.sum() > 0)) throw DataError("InvalidWeights", "weights sum to zero");
  for (double l : lambdas) {
    if (!(l > 0) || !std::isfinite(l)) throw ConfigError("InvalidRegularization", "lambda must be > 0");
  }
  const Design d = standardize(x, w, options.intercept);
  std::vector<GlmFit> fits;
  fits.reserve(lambdas.size());

  if (auto constant = degenerate_mean(family, y, w, classes)) {
    for (double l : lambdas) {
      GlmFit fit = make_fit(d, family, l, classes);
      fit.standardized = MatrixXd::Zero(d.z.cols(), std::max(classes - 1, 1));
      fit.constant_mean = *constant;
      fits.push_back(std::move(fit));
    }
    return fits;
  }

  if (family == Family::gaussian) {
    const double sw = w.sum();
    const MatrixXd zw = d.z.array().colwise() * (w.array() / sw).sqrt();
    MatrixXd gram = MatrixXd::Zero(d.z.cols(), d.z.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(zw.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
    const VectorXd rhs = d.z.transpose() * (w.array() * y.array()).matrix() / sw;
    for (double l : lambdas) {
      MatrixXd a = gram;
      a.diagonal() += l * d.penalty;
      Eigen::LDLT<MatrixXd> ldlt(a);
      VectorXd beta = ldlt.solve(rhs);
      if (ldlt.info() != Eigen::Success || !beta.allFinite()) {
        throw NumericalError("Singular", "penalized normal equations are singular");
      }
      // One step of iterative refinement.
      VectorXd g = a * beta - rhs;
      beta -= ldlt.solve(g);
      g = a * beta - rhs;
      GlmFit fit = make_fit(d, family, l, classes);
      fit.standardized = beta;
      fit.gradient_norm = g.norm();
      fit.iterations = 1;
      if (!(fit.gradient_norm < std::max(options.gradient_tolerance,
                                         1e-12 * (1.0 + rhs.norm())))) {
        throw NumericalError("NonConvergence",
                             "grad_norm=" + std::to_string(fit.gradient_norm));
      }
      fits.push_back(std::move(fit));
    }
    return fits;
  }

  VectorXd theta = initial_theta(d, y, w, classes);
  for (double l : lambdas) {
    GlmFit fit = make_fit(d, family, l, classes);
    solve_logistic(d, y, w, classes, l, theta, options, fit);
    fits.push_back(std::move(fit));
  }
  return fits;
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::gaussian: return "gaussian";
    case Family::binomial: return "binomial";
    case Family::multinomial: return "multinomial";
  }
  return "unknown";
}

std::string to_string(FeatureMap map) {
  return map == FeatureMap::linear ? "linear" : "quadratic";
}

FeatureMap feature_map_from_string(const std::string& name) {
  if (name == "linear") return FeatureMap::linear;
  if (name == "quadratic") return FeatureMap::quadratic;
  throw ConfigError("InvalidFeatureMap", "expected linear or quadratic, got '" + name + "'");
}

Eigen::MatrixXd expand_features(const Eigen::MatrixXd& x, FeatureMap map) {
  if (map == FeatureMap::linear) return x;
  const Index p = x.cols();
  MatrixXd out(x.rows(), p + p * (p + 1) / 2);
  out.leftCols(p) = x;
  Index k = p;
  for (Index i = 0; i < p; ++i) {
    for (Index j = i; j < p; ++j) out.col(k++) = x.col(i).cwiseProduct(x.col(j));
  }
  return out;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 12; ++k) grid.push_back(std::pow(10.0, -k / 3.0));
  return grid;
}

void RegularizationConfig::validate() const {
  if (lambda_grid.empty()) throw ConfigError("InvalidRegularization", "empty lambda grid");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > 0) || !std::isfinite(lambda_grid[i])) {
      throw ConfigError("InvalidRegularization", "lambda values must be positive");
    }
    if (i > 0 && !(lambda_grid[i] < lambda_grid[i - 1])) {
      throw ConfigError("InvalidRegularization", "lambda grid must be strictly descending");
    }
  }
  if (cv_folds < 2) throw ConfigError("InvalidRegularization", "cv_folds must be >= 2");
}

Eigen::MatrixXd GlmFit::coefficients() const {
  const Index p = center.size();
  const Index cols = standardized.cols();
  MatrixXd out = MatrixXd::Zero(p + 1, cols);
  const Index off = intercept ? 1 : 0;
  for (Index c = 0; c < cols; ++c) {
    double icpt = intercept ? standardized(0, c) : 0.0;
    for (Index j = 0; j < p; ++j) {
      const double slope = standardized(off + j, c) / scale(j);
      out(1 + j, c) = slope;
      icpt -= slope * center(j);
    }
    out(0, c) = icpt;
  }
  return out;
}

Eigen::MatrixXd GlmFit::linear_predictor(const Eigen::MatrixXd& x) const {
  if (x.cols() != center.size()) throw DataError("DimensionMismatch", "predict: column count");
  const MatrixXd z = (x.rowwise() - center).array().rowwise() / scale.array();
  MatrixXd eta = z * standardized.bottomRows(center.size());
  if (intercept) eta.rowwise() += standardized.row(0);
  return eta;
}

Eigen::MatrixXd GlmFit::predict(const Eigen::MatrixXd& x) const {
  if (constant_mean) return constant_mean->replicate(x.rows(), 1);
  MatrixXd eta = linear_predictor(x);
  if (family == Family::gaussian) return eta;
  if (family == Family::binomial) return eta.unaryExpr([](double e) { return expit(e); });
  MatrixXd prob(x.rows(), num_classes);
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = std::max(0.0, eta.row(i).maxCoeff());
    double denom = std::exp(-m);
    for (Index c = 0; c < eta.cols(); ++c) denom += std::exp(eta(i, c) - m);
    prob(i, 0) = std::exp(-m) / denom;
    for (Index c = 0; c < eta.cols(); ++c) prob(i, c + 1) = std::exp(eta(i, c) - m) / denom;
  }
  return prob;
}

GlmFit fit_regularized_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                           double lambda, std::span<const double> weights,
                           const GlmOptions& options) {
  const double grid[] = {lambda};
  return fit_path(x, y, family, grid, resolve_weights(weights, x.rows()), options).front();
}

std::vector<GlmFit> fit_regularized_glm_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                             Family family, std::span<const double> lambdas,
                                             std::span<const double> weights,
                                             const GlmOptions& options) {
  return fit_path(x, y, family, lambdas, resolve_weights(weights, x.rows()), options);
}

double prediction_loss(Family family, const Eigen::MatrixXd& prediction, const Eigen::VectorXd& y,
                       std::span<const double> weights) {
  const VectorXd w = resolve_weights(weights, y.size());
  constexpr double eps = 1e-15;
  double total = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    double l = 0.0;
    switch (family) {
      case Family::gaussian: {
        const double r = y(i) - prediction(i, 0);
        l = r * r;
        break;
      }
      case Family::binomial: {
        const double p = std::clamp(prediction(i, 0), eps, 1.0 - eps);
        l = -2.0 * (y(i) * std::log(p) + (1.0 - y(i)) * std::log(1.0 - p));
        break;
      }
      case Family::multinomial: {
        const double p = std::max(prediction(i, static_cast<Index>(y(i))), eps);
        l = -2.0 * std::log(p);
        break;
      }
    }
    total += w(i) * l;
  }
  return total / w.sum();
}

CvResult select_lambda_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const RegularizationConfig& config, std::uint64_t seed,
                          std::span<const double> weights, const GlmOptions& options) {
  config.validate();
  const Index n = x.rows();
  if (n < 2 * config.cv_folds) {
    throw DataError("TooFewRows", "cross-validation needs n >= 2 * cv_folds");
  }
  const VectorXd w = resolve_weights(weights, n);
  GlmOptions opts = options;
  opts.intercept = config.intercept;
  opts.num_classes = resolve_classes(config.family, y, options);

  const FoldAssignment folds = make_folds(static_cast<std::size_t>(n), config.cv_folds, seed);
  const std::size_t g = config.lambda_grid.size();
  std::vector<double> loss_sum(g, 0.0);
  double weight_sum = 0.0;
  for (int f = 0; f < folds.k; ++f) {
    const auto train = folds.rows_not_in(f);
    const auto test = folds.rows_in(f);
    MatrixXd xt(static_cast<Index>(train.size()), x.cols());
    VectorXd yt(static_cast<Index>(train.size()));
    std::vector<double> wt(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) {
      xt.row(static_cast<Index>(r)) = x.row(static_cast<Index>(train[r]));
      yt(static_cast<Index>(r)) = y(static_cast<Index>(train[r]));
      wt[r] = w(static_cast<Index>(train[r]));
    }
    MatrixXd xv(static_cast<Index>(test.size()), x.cols());
    VectorXd yv(static_cast<Index>(test.size()));
    std::vector<double> wv(test.size());
    double fold_weight = 0.0;
    for (std::size_t r = 0; r < test.size(); ++r) {
      xv.row(static_cast<Index>(r)) = x.row(static_cast<Index>(test[r]));
      yv(static_cast<Index>(r)) = y(static_cast<Index>(test[r]));
      wv[r] = w(static_cast<Index>(test[r]));
      fold_weight += wv[r];
    }
    const auto path = fit_regularized_glm_path(xt, yt, config.family, config.lambda_grid, wt, opts);
    for (std::size_t l = 0; l < g; ++l) {
      if (fold_weight > 0) {
        loss_sum[l] += fold_weight * prediction_loss(config.family, path[l].predict(xv), yv, wv);
      }
    }
    weight_sum += fold_weight;
  }

  CvResult result;
  result.cv_loss.resize(g);
  for (std::size_t l = 0; l < g; ++l) result.cv_loss[l] = loss_sum[l] / weight_sum;
  // Grid is descending: strict improvement is required to move to a
  // smaller lambda, so ties keep the larger one.
  std::size_t best = 0;
  for (std::size_t l = 1; l < g; ++l) {
    if (result.cv_loss[l] < result.cv_loss[best]) best = l;
  }
  result.index = best;
  result.lambda = config.lambda_grid[best];
  return result;
}

}  // namespace covshift
