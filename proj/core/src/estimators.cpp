#include "covshift/estimators.hpp"

#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "covshift/error.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Core {
  VectorXd psi;
  MatrixXd phi;
};

void check_alignment(const Dataset& data, const NuisanceFits& fits) {
  const auto n = static_cast<Index>(data.size());
  if (fits.mu.rows() != n || fits.pi.rows() != n || fits.rho.size() != n) {
    throw DataError("DimensionMismatch", "nuisance fits are not aligned with the dataset");
  }
  if (fits.mu.cols() != data.num_arms() || fits.pi.cols() != data.num_arms()) {
    throw DataError("DimensionMismatch", "nuisance arm count does not match the dataset");
  }
}

void check_positive(const NuisanceFits& fits, const Dataset& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.in_study(i)) continue;
    const auto r = static_cast<Index>(i);
    if (!(fits.rho(r) > 0.0)) throw NumericalError("ZeroPropensity", "rho at row " + std::to_string(i));
    const int a = *data.treatment(i);
    if (!(fits.pi(r, a) > 0.0)) throw NumericalError("ZeroPropensity", "pi at row " + std::to_string(i));
  }
}

VectorXd resolve_row_weights(std::span<const double> row_weights, std::size_t n) {
  if (row_weights.empty()) return VectorXd::Ones(static_cast<Index>(n));
  if (row_weights.size() != n) throw DataError("DimensionMismatch", "row weight count");
  return Eigen::Map<const VectorXd>(row_weights.data(), static_cast<Index>(n));
}

// Study-row weight for arm a: 1{A = a} / pi_a times S / rho (generalize)
// or S (1 - rho) / rho (transport). Zero on external rows.
double arm_weight(const Dataset& data, const NuisanceFits& fits, Estimand estimand, std::size_t i,
                  int a) {
  if (!data.has_arm(i, a)) return 0.0;
  const auto r = static_cast<Index>(i);
  const double rho = fits.rho(r);
  const double selection = estimand == Estimand::generalize ? 1.0 / rho : (1.0 - rho) / rho;
  return selection / fits.pi(r, a);
}

double outcome_or_zero(const Dataset& data, std::size_t i) {
  const auto y = data.outcome(i);
  return y ? *y : 0.0;
}

Core compute(EstimatorKind kind, const Dataset& data, const NuisanceFits& fits, Estimand estimand,
             bool hajek, const VectorXd& v) {
  check_alignment(data, fits);
  if (kind != EstimatorKind::om) check_positive(fits, data);
  const std::size_t n = data.size();
  const int arms = data.num_arms();
  const double total = v.sum();

  // Weighted external share, P(S = 0).
  double external = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!data.in_study(i)) external += v(static_cast<Index>(i));
  }
  const double q = external / total;
  if (estimand == Estimand::transport && !(external > 0.0)) {
    throw DataError("NoExternalRows", "transport requires at least one S = 0 row");
  }

  Core core;
  core.psi.resize(arms);
  core.phi.resize(static_cast<Index>(n), arms);

  for (int a = 0; a < arms; ++a) {
    VectorXd w(static_cast<Index>(n));
    VectorXd y(static_cast<Index>(n));
    VectorXd mu = fits.mu.col(a);
    VectorXd ext(static_cast<Index>(n));  // 1 - S
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Index>(i);
      w(r) = arm_weight(data, fits, estimand, i, a);
      y(r) = outcome_or_zero(data, i);
      ext(r) = data.in_study(i) ? 0.0 : 1.0;
    }
    const VectorXd resid = y - mu;
    const double weight_mean = v.dot(w) / total;
    if (hajek && kind != EstimatorKind::om && !(weight_mean > 0.0)) {
      throw NumericalError("ZeroWeightSum", "arm " + std::to_string(a));
    }
    auto col = core.phi.col(a);
    double psi = 0.0;

    if (kind == EstimatorKind::om) {
      if (estimand == Estimand::generalize) {
        col = mu;
      } else {
        col = ext.cwiseProduct(mu) / q;
      }
      psi = v.dot(col) / total;
    } else if (kind == EstimatorKind::isw) {
      const double scale = estimand == Estimand::generalize ? 1.0 : q;
      if (!hajek) {
        col = w.cwiseProduct(y) / scale;
        psi = v.dot(col) / total;
      } else {
        psi = v.dot(w.cwiseProduct(y)) / (weight_mean * total);
        col = (w.array() * (y.array() - psi) / weight_mean + psi).matrix();
      }
    } else if (estimand == Estimand::generalize) {
      if (!hajek) {
        col = mu + w.cwiseProduct(resid);
        psi = v.dot(col) / total;
      } else {
        const double rbar = v.dot(w.cwiseProduct(resid)) / (weight_mean * total);
        psi = v.dot(mu) / total + rbar;
        col = (mu.array() + rbar + w.array() * (resid.array() - rbar) / weight_mean).matrix();
      }
    } else {
      if (!hajek) {
        psi = (v.dot(ext.cwiseProduct(mu)) + v.dot(w.cwiseProduct(resid))) / (total * q);
        // Centered so the variance reflects estimation of P(S = 0).
        col = (psi + (ext.array() * (mu.array() - psi) + w.array() * resid.array()) / q).matrix();
      } else {
        const double om = v.dot(ext.cwiseProduct(mu)) / external;
        const double rbar = v.dot(w.cwiseProduct(resid)) / (weight_mean * total);
        psi = om + rbar;
        col = (psi + ext.array() * (mu.array() - om) / q +
               w.array() * (resid.array() - rbar) / weight_mean)
                  .matrix();
      }
    }
    core.psi(a) = psi;
  }
  if (!core.phi.allFinite() || !core.psi.allFinite()) {
    throw NumericalError("NonFiniteEstimate", "estimator produced non-finite values");
  }
  return core;
}

Estimate assemble(EstimatorKind kind, const Dataset& data, const NuisanceFits& fits,
                  Estimand estimand, const EstimatorOptions& options) {
  if (!(options.ci_level > 0.0 && options.ci_level < 1.0)) {
    throw ConfigError("InvalidCiLevel", "ci_level must be in (0, 1)");
  }
  const VectorXd ones = VectorXd::Ones(static_cast<Index>(data.size()));
  Core core = compute(kind, data, fits, estimand, options.hajek, ones);

  Estimate out;
  out.influence.phi = std::move(core.phi);
  out.influence.estimand = estimand;
  out.influence.estimator = kind;
  out.influence.hajek = options.hajek;

  auto& r = out.result;
  r.estimator = kind;
  r.estimand = estimand;
  r.hajek = options.hajek;
  r.ci_level = options.ci_level;
  r.psi = std::move(core.psi);
  r.n = data.size();
  r.n_study = data.num_study();
  r.n_external = data.num_external();
  const int arms = data.num_arms();
  r.se.assign(static_cast<std::size_t>(arms), std::nullopt);
  r.ci.assign(static_cast<std::size_t>(arms), std::nullopt);
  if (kind == EstimatorKind::aisw) {
    r.se_method = "influence";
    const double z = normal_critical_value(options.ci_level);
    const double n = static_cast<double>(data.size());
    for (int a = 0; a < arms; ++a) {
      const double se = std::sqrt(sample_variance(out.influence.phi.col(a)) / n);
      r.se[static_cast<std::size_t>(a)] = se;
      r.ci[static_cast<std::size_t>(a)] = Interval{r.psi(a) - z * se, r.psi(a) + z * se};
    }
  }
  for (int a = 1; a < arms; ++a) {
    for (int b = 0; b < a; ++b) {
      const Contrast c = contrast(out.influence, a, b, options.ci_level);
      ContrastEstimate ce;
      ce.arm = a;
      ce.reference = b;
      ce.tau = r.psi(a) - r.psi(b);
      ce.se = c.se;
      if (c.se) {
        const double z = normal_critical_value(options.ci_level);
        ce.ci = Interval{ce.tau - z * *c.se, ce.tau + z * *c.se};
      }
      r.contrasts.push_back(ce);
    }
  }
  return out;
}

}  // namespace

std::string to_string(Estimand estimand) {
  return estimand == Estimand::generalize ? "generalize" : "transport";
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::om: return "om";
    case EstimatorKind::isw: return "isw";
    case EstimatorKind::aisw: return "aisw";
  }
  return "unknown";
}

Estimand estimand_from_string(const std::string& name) {
  if (name == "generalize") return Estimand::generalize;
  if (name == "transport") return Estimand::transport;
  throw ConfigError("InvalidEstimand", "expected generalize or transport, got '" + name + "'");
}

EstimatorKind estimator_from_string(const std::string& name) {
  if (name == "om") return EstimatorKind::om;
  if (name == "isw") return EstimatorKind::isw;
  if (name == "aisw") return EstimatorKind::aisw;
  throw ConfigError("InvalidEstimator", "expected om, isw or aisw, got '" + name + "'");
}

Estimate estimate_om(const Dataset& data, const NuisanceFits& fits, Estimand estimand,
                     const EstimatorOptions& options) {
  return assemble(EstimatorKind::om, data, fits, estimand, options);
}

Estimate estimate_isw(const Dataset& data, const NuisanceFits& fits, Estimand estimand,
                      const EstimatorOptions& options) {
  return assemble(EstimatorKind::isw, data, fits, estimand, options);
}

Estimate estimate_aisw(const Dataset& data, const NuisanceFits& fits, Estimand estimand,
                       const EstimatorOptions& options) {
  return assemble(EstimatorKind::aisw, data, fits, estimand, options);
}

Estimate estimate(EstimatorKind kind, const Dataset& data, const NuisanceFits& fits,
                  Estimand estimand, const EstimatorOptions& options) {
  return assemble(kind, data, fits, estimand, options);
}

Eigen::VectorXd point_estimates(EstimatorKind kind, const Dataset& data, const NuisanceFits& fits,
                                Estimand estimand, bool hajek, std::span<const double> row_weights) {
  return compute(kind, data, fits, estimand, hajek, resolve_row_weights(row_weights, data.size())).psi;
}

Contrast contrast(const InfluenceMatrix& influence, int arm, int reference, double ci_level) {
  const auto arms = static_cast<int>(influence.phi.cols());
  if (arm < 0 || arm >= arms || reference < 0 || reference >= arms) {
    throw ConfigError("ArmOutOfRange", "contrast arms must be in {0.." + std::to_string(arms - 1) + "}");
  }
  const VectorXd diff = influence.phi.col(arm) - influence.phi.col(reference);
  Contrast c;
  c.tau = diff.mean();
  if (influence.estimator == EstimatorKind::aisw) {
    const double se = std::sqrt(sample_variance(diff) / static_cast<double>(diff.size()));
    const double z = normal_critical_value(ci_level);
    c.se = se;
    c.ci = Interval{c.tau - z * se, c.tau + z * se};
  }
  return c;
}

Contrast naive_sate(const Dataset& data, int arm, int reference, double ci_level) {
  if (arm < 0 || arm >= data.num_arms() || reference < 0 || reference >= data.num_arms()) {
    throw ConfigError("ArmOutOfRange", "naive_sate arms out of range");
  }
  auto arm_stats = [&](int a) {
    std::vector<double> ys;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.has_arm(i, a)) ys.push_back(*data.outcome(i));
    }
    if (ys.size() < 2) throw DataError("EmptyArm", "naive SATE needs two rows per arm");
    const VectorXd v = Eigen::Map<const VectorXd>(ys.data(), static_cast<Index>(ys.size()));
    return std::pair{v.mean(), sample_variance(v) / static_cast<double>(ys.size())};
  };
  const auto [m1, v1] = arm_stats(arm);
  const auto [m0, v0] = arm_stats(reference);
  Contrast c;
  c.tau = m1 - m0;
  c.se = std::sqrt(v1 + v0);
  const double z = normal_critical_value(ci_level);
  c.ci = Interval{c.tau - z * *c.se, c.tau + z * *c.se};
  return c;
}

double normal_critical_value(double ci_level) {
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("InvalidCiLevel", "ci_level must be in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + ci_level));
}

double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& values) {
  const Index n = values.size();
  if (n < 2) return 0.0;
  const double mean = values.mean();
  return (values.array() - mean).square().sum() / static_cast<double>(n - 1);
}

}  // namespace covshift
