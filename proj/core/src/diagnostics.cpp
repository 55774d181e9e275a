#include "covshift/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>

#include "covshift/error.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd rows_of(const MatrixXd& x, const std::vector<std::size_t>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(static_cast<Index>(rows[r]));
  return out;
}

double column_variance(const MatrixXd& x, Index j) {
  if (x.rows() < 2) return 0.0;
  const double m = x.col(j).mean();
  return (x.col(j).array() - m).square().sum() / static_cast<double>(x.rows() - 1);
}

}  // namespace

BalanceReport smd_between(const Eigen::MatrixXd& study, const Eigen::MatrixXd& target,
                          const std::vector<std::string>& names,
                          const std::optional<Eigen::VectorXd>& study_weights) {
  if (study.rows() == 0 || target.rows() == 0) {
    throw DataError("SingleStratum", "balance needs rows in both samples");
  }
  if (study.cols() != target.cols() || names.size() != static_cast<std::size_t>(study.cols())) {
    throw DataError("DimensionMismatch", "covariate columns do not match");
  }
  std::optional<VectorXd> w;
  if (study_weights) {
    if (study_weights->size() != study.rows()) throw DataError("DimensionMismatch", "weight count");
    if (!(study_weights->sum() > 0.0)) throw DataError("InvalidWeights", "weights sum to zero");
    w = *study_weights / study_weights->sum();
  }
  BalanceReport report;
  for (Index j = 0; j < study.cols(); ++j) {
    SmdEntry e;
    e.covariate = names[static_cast<std::size_t>(j)];
    e.mean_study = study.col(j).mean();
    e.mean_target = target.col(j).mean();
    e.sd_pooled = std::sqrt(0.5 * (column_variance(study, j) + column_variance(target, j)));
    if (w) e.mean_study_weighted = w->dot(study.col(j));
    if (e.sd_pooled > 0.0) {
      e.smd_unweighted = (e.mean_study - e.mean_target) / e.sd_pooled;
      if (w) e.smd_weighted = (*e.mean_study_weighted - e.mean_target) / e.sd_pooled;
    } else {
      e.undefined = true;
    }
    report.entries.push_back(std::move(e));
  }
  std::stable_sort(report.entries.begin(), report.entries.end(), [](const SmdEntry& a, const SmdEntry& b) {
    const double x = a.smd_unweighted ? std::abs(*a.smd_unweighted) : -1.0;
    const double y = b.smd_unweighted ? std::abs(*b.smd_unweighted) : -1.0;
    return x > y;
  });
  if (study_weights) report.weight_scheme = "weighted";
  return report;
}

BalanceReport smd_report(const Dataset& data, const std::optional<Eigen::VectorXd>& study_weights,
                         Estimand target, const std::string& weight_scheme) {
  if (data.num_study() == 0 || data.num_external() == 0) {
    throw DataError("SingleStratum", "balance needs both study and external rows");
  }
  const auto study = data.study_rows();
  std::vector<std::size_t> target_rows;
  if (target == Estimand::transport) {
    target_rows = data.external_rows();
  } else {
    target_rows.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) target_rows[i] = i;
  }
  BalanceReport report = smd_between(rows_of(data.covariates(), study),
                                     rows_of(data.covariates(), target_rows),
                                     data.covariate_names(), study_weights);
  report.target = target == Estimand::transport ? "external" : "overall";
  report.weight_scheme = study_weights ? weight_scheme : "none";
  return report;
}

Eigen::VectorXd selection_weights(const Dataset& data, const NuisanceFits& fits, Estimand estimand) {
  const auto study = data.study_rows();
  VectorXd w(static_cast<Index>(study.size()));
  for (std::size_t r = 0; r < study.size(); ++r) {
    const double rho = fits.rho(static_cast<Index>(study[r]));
    w(static_cast<Index>(r)) = estimand == Estimand::generalize ? 1.0 / rho : (1.0 - rho) / rho;
  }
  return w;
}

OverlapReport overlap_report(const Dataset& data, const NuisanceFits& fits,
                             const std::optional<OverlapThresholds>& thresholds) {
  if (fits.rows() != data.size()) throw DataError("DimensionMismatch", "fits do not match data");
  OverlapReport report;
  report.thresholds = thresholds.value_or(OverlapThresholds{fits.trim.lo, fits.trim.hi, 20});
  const double lo = report.thresholds.lo;
  const double hi = report.thresholds.hi;
  const int bins = std::max(1, report.thresholds.bins);
  // Values produced by clamping sit exactly on the bound.
  auto at_bound = [&](double v) { return v <= lo || v >= hi; };

  report.rho_min = fits.rho.minCoeff();
  report.rho_max = fits.rho.maxCoeff();
  Histogram& h = report.rho_histogram;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / bins;
  h.study.assign(static_cast<std::size_t>(bins), 0);
  h.external.assign(static_cast<std::size_t>(bins), 0);

  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Index>(i);
    const double rho = fits.rho(r);
    if (at_bound(rho)) report.rho_flagged_rows.push_back(i);
    const auto bin = static_cast<std::size_t>(std::clamp(static_cast<int>(rho * bins), 0, bins - 1));
    (data.in_study(i) ? h.study : h.external)[bin] += 1;
    if (data.in_study(i) && fits.pi.cols() > 1) {
      for (Index a = 0; a < fits.pi.cols(); ++a) {
        if (at_bound(fits.pi(r, a))) {
          report.pi_flagged_rows.push_back(i);
          break;
        }
      }
    }
  }
  if (data.num_external() == 0) {
    report.warnings.push_back(
        "no external rows: the generalization target is the study sample itself, so "
        "estimates reduce to the sample average effect (SATE)");
  }
  if (!report.rho_flagged_rows.empty()) {
    report.warnings.push_back(std::to_string(report.rho_flagged_rows.size()) +
                              " rows have selection propensity at a trim bound");
  }
  if (!report.pi_flagged_rows.empty()) {
    report.warnings.push_back(std::to_string(report.pi_flagged_rows.size()) +
                              " study rows have a treatment propensity at a trim bound");
  }
  return report;
}

Eigen::VectorXd pseudo_outcomes(const Dataset& data, const NuisanceFits& fits, int arm, int reference) {
  const int arms = data.num_arms();
  if (arm < 0 || arm >= arms || reference < 0 || reference >= arms) {
    throw ConfigError("ArmOutOfRange", "arms must be in {0.." + std::to_string(arms - 1) + "}");
  }
  const auto study = data.study_rows();
  VectorXd gamma(static_cast<Index>(study.size()));
  for (std::size_t r = 0; r < study.size(); ++r) {
    const auto i = study[r];
    const auto ri = static_cast<Index>(i);
    const double y = *data.outcome(i);
    double g = fits.mu(ri, arm) - fits.mu(ri, reference);
    if (data.has_arm(i, arm)) g += (y - fits.mu(ri, arm)) / fits.pi(ri, arm);
    if (data.has_arm(i, reference)) g -= (y - fits.mu(ri, reference)) / fits.pi(ri, reference);
    gamma(static_cast<Index>(r)) = g;
  }
  return gamma;
}

HeterogeneityTest heterogeneity_test(const Dataset& data, const NuisanceFits& fits, int arm,
                                     int reference) {
  const VectorXd gamma = pseudo_outcomes(data, fits, arm, reference);
  const auto study = data.study_rows();
  const Index n = static_cast<Index>(study.size());
  const Index p = static_cast<Index>(data.num_covariates());
  const Index k = p + 1;
  if (p == 0 || n <= k) throw DataError("RankDeficientDesign", "too few study rows for the test");
  MatrixXd z(n, k);
  z.col(0).setOnes();
  z.rightCols(p) = rows_of(data.covariates(), study);

  Eigen::ColPivHouseholderQR<MatrixXd> qr(z);
  if (qr.rank() < k) throw DataError("RankDeficientDesign", "design matrix rank " + std::to_string(qr.rank()));
  const VectorXd beta = qr.solve(gamma);
  const VectorXd resid = gamma - z * beta;

  const MatrixXd bread = (z.transpose() * z).inverse();
  const MatrixXd meat = z.transpose() * (z.array().colwise() * resid.array().square()).matrix();
  MatrixXd cov = bread * meat * bread;
  cov *= static_cast<double>(n) / static_cast<double>(n - k);

  const VectorXd slopes = beta.tail(p);
  const MatrixXd cov_s = cov.bottomRightCorner(p, p);
  Eigen::LDLT<MatrixXd> ldlt(cov_s);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
    throw DataError("RankDeficientDesign", "robust covariance of slopes is singular");
  }
  HeterogeneityTest t;
  t.statistic = slopes.dot(ldlt.solve(slopes));
  t.dof = static_cast<int>(p);
  t.n = static_cast<std::size_t>(n);
  const boost::math::chi_squared_distribution<double> chi(static_cast<double>(p));
  t.p_value = std::clamp(boost::math::cdf(boost::math::complement(chi, std::max(t.statistic, 0.0))), 0.0, 1.0);
  return t;
}

void StratifiedDistribution::validate() const {
  const std::size_t m = p_study.size();
  if (p_target.size() != m || tau.size() != m || (!strata.empty() && strata.size() != m) || m == 0) {
    throw DataError("MisalignedStrata", "p_study, p_target and tau must have equal length");
  }
  double ss = 0.0;
  double st = 0.0;
  for (std::size_t s = 0; s < m; ++s) {
    if (p_study[s] < 0.0 || p_target[s] < 0.0 || !std::isfinite(tau[s])) {
      throw DataError("InvalidDistribution", "negative probability or non-finite tau");
    }
    ss += p_study[s];
    st += p_target[s];
  }
  if (std::abs(ss - 1.0) > 1e-12 || std::abs(st - 1.0) > 1e-12) {
    throw DataError("InvalidDistribution", "probabilities must sum to 1");
  }
}

BiasDecomposition bias_decomposition(const StratifiedDistribution& dist) {
  dist.validate();
  BiasDecomposition out;
  const std::size_t m = dist.p_study.size();
  out.terms.assign(m, 0.0);
  out.unrepresented.assign(m, false);
  for (std::size_t s = 0; s < m; ++s) {
    const double ps = dist.p_study[s];
    const double pt = dist.p_target[s];
    out.tate += pt * dist.tau[s];
    out.sate += ps * dist.tau[s];
    if (ps > 0.0) {
      out.terms[s] = ps * (pt / ps - 1.0) * dist.tau[s];
    } else {
      out.unrepresented[s] = true;
      out.unrepresented_mass += pt * dist.tau[s];
    }
  }
  out.gap = out.tate - out.sate;
  return out;
}

StratifiedDistribution stratify(const Dataset& data, const NuisanceFits& fits, std::size_t column,
                                int arm, int reference) {
  if (column >= data.num_covariates()) throw ConfigError("InvalidColumn", "stratum column out of range");
  if (data.num_external() == 0) throw DataError("SingleStratum", "stratification needs external rows");
  const VectorXd gamma = pseudo_outcomes(data, fits, arm, reference);
  struct Cell {
    double study = 0, target = 0, gamma_sum = 0, mu_sum = 0;
  };
  std::map<double, Cell> cells;
  std::size_t r = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ri = static_cast<Index>(i);
    Cell& c = cells[data.covariates()(ri, static_cast<Index>(column))];
    if (data.in_study(i)) {
      c.study += 1;
      c.gamma_sum += gamma(static_cast<Index>(r++));
    } else {
      c.target += 1;
      c.mu_sum += fits.mu(ri, arm) - fits.mu(ri, reference);
    }
  }
  StratifiedDistribution dist;
  const double ns = static_cast<double>(data.num_study());
  const double nt = static_cast<double>(data.num_external());
  for (const auto& [value, c] : cells) {
    dist.strata.push_back(value);
    dist.p_study.push_back(c.study / ns);
    dist.p_target.push_back(c.target / nt);
    dist.tau.push_back(c.study > 0 ? c.gamma_sum / c.study : c.mu_sum / c.target);
  }
  return dist;
}

}  // namespace covshift
