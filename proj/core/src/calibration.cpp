#include "covshift/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "covshift/error.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd normalized_base(const std::optional<VectorXd>& base, Index n) {
  if (!base) return VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  if (base->size() != n) throw DataError("DimensionMismatch", "base weight count");
  if ((base->array() <= 0.0).any() || !base->allFinite()) {
    throw DataError("InvalidWeights", "base weights must be positive and finite");
  }
  return *base / base->sum();
}

// Weights proportional to base * exp(eta), computed stably.
VectorXd softmax_weights(const VectorXd& log_base, const VectorXd& eta) {
  VectorXd e = log_base + eta;
  const double m = e.maxCoeff();
  VectorXd w = (e.array() - m).exp();
  return w / w.sum();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string to_string(MomentFeatures features) {
  return features == MomentFeatures::first ? "first" : "first_and_second";
}

Eigen::MatrixXd moment_features(const Eigen::MatrixXd& x, MomentFeatures features) {
  if (features == MomentFeatures::first) return x;
  MatrixXd out(x.rows(), 2 * x.cols());
  out.leftCols(x.cols()) = x;
  out.rightCols(x.cols()) = x.array().square().matrix();
  return out;
}

std::vector<std::string> moment_names(const std::vector<std::string>& covariates,
                                      MomentFeatures features) {
  std::vector<std::string> names = covariates;
  if (features == MomentFeatures::first_and_second) {
    for (const auto& c : covariates) names.push_back(c + "^2");
  }
  return names;
}

void MomentTarget::validate(std::size_t covariates) const {
  const std::size_t q = features == MomentFeatures::first ? covariates : 2 * covariates;
  if (values.size() < 1 || static_cast<std::size_t>(values.size()) != q) {
    throw ConfigError("InvalidTarget", "expected " + std::to_string(q) + " target moments, got " +
                                           std::to_string(values.size()));
  }
  if (!values.allFinite()) throw ConfigError("InvalidTarget", "target moments must be finite");
}

MomentTarget sample_moments(const Eigen::MatrixXd& x, MomentFeatures features,
                            const std::vector<std::string>& covariates) {
  if (x.rows() == 0) throw DataError("EmptySample", "no rows to summarize");
  MomentTarget t;
  t.features = features;
  t.values = moment_features(x, features).colwise().mean().transpose();
  if (!covariates.empty()) t.names = moment_names(covariates, features);
  return t;
}

MomentTarget read_moment_target(const std::string& path, const std::vector<std::string>& covariates,
                                char delimiter) {
  std::ifstream in(path);
  if (!in) throw ConfigError("FileNotFound", path);
  std::map<std::string, double> entries;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto pos = line.find(delimiter);
    if (pos == std::string::npos) throw ConfigError("InvalidTarget", "expected name,value: " + line);
    const std::string name(trim(std::string_view(line).substr(0, pos)));
    const auto text = trim(std::string_view(line).substr(pos + 1));
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      if (first) {  // header row
        first = false;
        continue;
      }
      throw ConfigError("InvalidTarget", "not a number: " + std::string(text));
    }
    first = false;
    if (!entries.emplace(name, value).second) throw ConfigError("InvalidTarget", "duplicate " + name);
  }
  return moment_target_from_entries(entries, covariates);
}

MomentTarget moment_target_from_entries(const std::map<std::string, double>& entries,
                                        const std::vector<std::string>& covariates) {
  bool second = false;
  for (const auto& [name, value] : entries) {
    if (name.size() > 2 && name.ends_with("^2")) second = true;
  }
  MomentTarget t;
  t.features = second ? MomentFeatures::first_and_second : MomentFeatures::first;
  t.names = moment_names(covariates, t.features);
  t.values.resize(static_cast<Index>(t.names.size()));
  for (std::size_t j = 0; j < t.names.size(); ++j) {
    auto it = entries.find(t.names[j]);
    if (it == entries.end()) throw ConfigError("InvalidTarget", "missing moment " + t.names[j]);
    t.values(static_cast<Index>(j)) = it->second;
  }
  if (entries.size() != t.names.size()) throw ConfigError("InvalidTarget", "unknown moment names");
  return t;
}

Eigen::VectorXd weights_from_dual(const Eigen::MatrixXd& x_source, const MomentTarget& target,
                                  const Eigen::VectorXd& dual,
                                  const std::optional<Eigen::VectorXd>& base_weights) {
  const MatrixXd f = moment_features(x_source, target.features);
  if (dual.size() != f.cols()) throw DataError("DimensionMismatch", "dual length");
  const VectorXd base = normalized_base(base_weights, f.rows());
  const VectorXd eta = (f.rowwise() - target.values.transpose()) * dual;
  return softmax_weights(base.array().log().matrix(), eta);
}

CalibrationWeights entropy_balance(const Eigen::MatrixXd& x_source, const MomentTarget& target,
                                   const CalibrationOptions& options) {
  target.validate(static_cast<std::size_t>(x_source.cols()));
  if (x_source.rows() < 1) throw DataError("EmptySample", "no source rows");
  const MatrixXd f = moment_features(x_source, target.features);
  const Index n = f.rows();
  const Index q = f.cols();
  const VectorXd base = normalized_base(options.base_weights, n);
  const VectorXd log_base = base.array().log().matrix();
  const VectorXd& t = target.values;

  for (Index j = 0; j < q; ++j) {
    const double lo = f.col(j).minCoeff();
    const double hi = f.col(j).maxCoeff();
    if (t(j) < lo - options.tolerance || t(j) > hi + options.tolerance) {
      throw NumericalError("Infeasible", "target moment " + std::to_string(j) +
                                             " lies outside the source feature range");
    }
  }

  // Standardized, target-centered features.
  const VectorXd center = f.transpose() * base;
  VectorXd scale(q);
  for (Index j = 0; j < q; ++j) {
    const double var = (base.array() * (f.col(j).array() - center(j)).square()).sum();
    scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  const MatrixXd g = (f.rowwise() - t.transpose()).array().rowwise() / scale.transpose().array();

  auto objective = [&](const VectorXd& lambda) {
    const VectorXd e = log_base + g * lambda;
    const double m = e.maxCoeff();
    return m + std::log((e.array() - m).exp().sum());
  };
  auto violation = [&](const VectorXd& w) {
    return (f.transpose() * w - t).cwiseAbs().maxCoeff();
  };

  CalibrationWeights out;
  VectorXd lambda = VectorXd::Zero(q);
  VectorXd w = base;
  double best_violation = violation(w);
  int last_improvement = 0;
  double value = objective(lambda);

  for (int iter = 0;; ++iter) {
    out.iterations = iter;
    const double viol = violation(w);
    if (viol <= options.tolerance) {
      out.converged = true;
      break;
    }
    if (viol < best_violation) {
      best_violation = viol;
      last_improvement = iter;
    }
    const VectorXd original_dual = lambda.cwiseQuotient(scale);
    if (original_dual.norm() > 1e6 && iter - last_improvement >= 25) {
      throw NumericalError("Infeasible", "dual diverged without reducing moment violation");
    }
    if (iter >= options.max_iterations) {
      throw NumericalError("NonConvergence", "max_iter=" + std::to_string(options.max_iterations) +
                                                 " violation=" + std::to_string(viol));
    }
    const VectorXd grad = g.transpose() * w;
    const MatrixXd gc = g.rowwise() - grad.transpose();
    MatrixXd hess = gc.transpose() * (gc.array().colwise() * w.array()).matrix();
    Eigen::LDLT<MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
      hess.diagonal().array() += 1e-12;
      ldlt.compute(hess);
    }
    VectorXd step = -ldlt.solve(grad);
    if (!step.allFinite() || grad.dot(step) >= 0.0) step = -grad;
    double s = 1.0;
    const double slope = grad.dot(step);
    double next = objective(lambda + step);
    int halvings = 0;
    while (!(next <= value + 1e-4 * s * slope) && halvings < 50) {
      s *= 0.5;
      next = objective(lambda + s * step);
      ++halvings;
    }
    lambda += s * step;
    value = next;
    w = softmax_weights(log_base, g * lambda);
  }

  out.dual = lambda.cwiseQuotient(scale);
  out.w = weights_from_dual(x_source, target, out.dual, options.base_weights);
  out.max_moment_violation = violation(out.w);
  return out;
}

CalibratedEstimate calibrated_estimate(const Dataset& data, const Eigen::VectorXd& weights,
                                       const Eigen::MatrixXd& propensity) {
  const auto study = data.study_rows();
  const int arms = data.num_arms();
  if (static_cast<std::size_t>(weights.size()) != study.size() ||
      static_cast<std::size_t>(propensity.rows()) != study.size() || propensity.cols() != arms) {
    throw DataError("DimensionMismatch", "weights and propensity must align with study rows");
  }
  if ((weights.array() < 0.0).any()) throw DataError("InvalidWeights", "weights must be nonnegative");
  CalibratedEstimate out;
  out.psi.resize(arms);
  for (int a = 0; a < arms; ++a) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t r = 0; r < study.size(); ++r) {
      if (!data.has_arm(study[r], a)) continue;
      const double p = propensity(static_cast<Index>(r), a);
      if (!(p > 0.0)) throw NumericalError("ZeroPropensity", "study row " + std::to_string(r));
      const double v = weights(static_cast<Index>(r)) / p;
      num += v * *data.outcome(study[r]);
      den += v;
    }
    if (!(den > 0.0)) throw DataError("EmptyArmUnderWeights", "arm " + std::to_string(a));
    out.psi(a) = num / den;
  }
  for (int a = 1; a < arms; ++a) {
    for (int b = 0; b < a; ++b) {
      ContrastEstimate c;
      c.arm = a;
      c.reference = b;
      c.tau = out.psi(a) - out.psi(b);
      out.contrasts.push_back(c);
    }
  }
  return out;
}

Eigen::MatrixXd empirical_arm_propensity(const Dataset& data) {
  const int arms = data.num_arms();
  Eigen::RowVectorXd share = Eigen::RowVectorXd::Zero(arms);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (auto a = data.treatment(i)) share(*a) += 1.0;
  }
  share /= static_cast<double>(data.num_study());
  return share.replicate(static_cast<Index>(data.num_study()), 1);
}

}  // namespace covshift
