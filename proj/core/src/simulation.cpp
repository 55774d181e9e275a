#include "covshift/simulation.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "covshift/error.hpp"
#include "covshift/inference.hpp"
#include "covshift/parallel.hpp"
#include "covshift/random.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Box-Muller with the cosine branch only; 1 - u keeps the log finite.
double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Monomial term(double coef, std::vector<int> vars) { return Monomial{coef, std::move(vars)}; }

double mean_of(const std::vector<double>& values) {
  return compensated_sum(values) / static_cast<double>(values.size());
}

}  // namespace

double Polynomial::operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  double total = 0.0;
  for (const auto& t : terms) {
    double v = t.coef;
    for (int j : t.vars) v *= x(j);
    total += v;
  }
  return total;
}

double Polynomial::uniform_mean() const {
  double total = 0.0;
  for (const auto& t : terms) {
    std::vector<int> powers(static_cast<std::size_t>(max_variable() + 1), 0);
    for (int j : t.vars) powers[static_cast<std::size_t>(j)] += 1;
    double v = t.coef;
    for (int k : powers) v *= (k % 2 == 1) ? 0.0 : 1.0 / (k + 1);
    total += v;
  }
  return total;
}

int Polynomial::max_variable() const {
  int m = -1;
  for (const auto& t : terms) {
    for (int j : t.vars) m = std::max(m, j);
  }
  return m;
}

std::string to_string(Form form) { return form == Form::linear ? "linear" : "nonlinear"; }

ScenarioSpec ScenarioSpec::preset(Form selection, Form outcome, std::size_t n, std::uint64_t seed, int p) {
  if (p < 3) throw ConfigError("InvalidScenario", "preset scenarios need p >= 3");
  ScenarioSpec s;
  s.name = std::string(selection == Form::linear ? "l" : "n") + (outcome == Form::linear ? "l" : "n");
  s.selection_form = selection;
  s.outcome_form = outcome;
  s.n = n;
  s.p = p;
  s.seed = seed;
  s.selection.terms = {term(-0.5, {}), term(1.0, {0}), term(1.0, {1})};
  if (selection == Form::nonlinear) {
    s.selection.terms.push_back(term(1.5, {0, 0}));
    s.selection.terms.push_back(term(1.0, {0, 1}));
  }
  for (int j = 0; j < p; ++j) s.outcome.terms.push_back(term(1.0, {j}));
  s.cate.terms = {term(1.0, {}), term(1.0, {0}), term(1.0, {1})};
  if (outcome == Form::nonlinear) {
    s.outcome.terms.push_back(term(1.0, {0, 0}));
    s.outcome.terms.push_back(term(1.0, {1, 2}));
    s.cate.terms.push_back(term(2.0, {0, 0}));
  }
  return s;
}

ScenarioSpec ScenarioSpec::named(const std::string& name, std::size_t n, std::uint64_t seed) {
  if (name.size() != 2 || (name[0] != 'l' && name[0] != 'n') || (name[1] != 'l' && name[1] != 'n')) {
    throw ConfigError("InvalidScenario", "expected ll, ln, nl or nn, got '" + name + "'");
  }
  return preset(name[0] == 'l' ? Form::linear : Form::nonlinear,
                name[1] == 'l' ? Form::linear : Form::nonlinear, n, seed);
}

void ScenarioSpec::validate() const {
  if (!(treat_prob > 0.0 && treat_prob < 1.0)) {
    throw ConfigError("InvalidScenario", "treat_prob must be in (0, 1)");
  }
  if (p < 1) throw ConfigError("InvalidScenario", "p must be >= 1");
  if (n < 1) throw ConfigError("InvalidScenario", "n must be >= 1");
  for (const Polynomial* poly : {&selection, &outcome, &cate}) {
    if (poly->max_variable() >= p) {
      throw ConfigError("InvalidScenario", "polynomial references x" +
                                               std::to_string(poly->max_variable() + 1) + " but p = " +
                                               std::to_string(p));
    }
    for (const auto& t : poly->terms) {
      for (int j : t.vars) {
        if (j < 0) throw ConfigError("InvalidScenario", "negative covariate index");
      }
    }
  }
}

double true_pate(const ScenarioSpec& spec) {
  spec.validate();
  return spec.cate.uniform_mean();
}

Generated generate(const ScenarioSpec& spec) {
  spec.validate();
  const auto n = static_cast<Index>(spec.n);
  auto rng = make_rng(spec.seed, 0);
  MatrixXd x(n, spec.p);
  std::vector<std::uint8_t> s(spec.n);
  std::vector<std::optional<int>> a(spec.n);
  std::vector<std::optional<double>> y(spec.n);
  Truth truth;
  truth.y0.resize(n);
  truth.y1.resize(n);
  truth.cate.resize(n);
  truth.selection_probability.resize(n);
  truth.treatment.resize(spec.n);
  double sate_sum = 0.0;
  std::size_t n_study = 0;
  for (Index i = 0; i < n; ++i) {
    for (int j = 0; j < spec.p; ++j) x(i, j) = 2.0 * uniform01(rng) - 1.0;
    const double u_select = uniform01(rng);
    const double u_treat = uniform01(rng);
    const double eps = standard_normal(rng);
    const auto row = x.row(i);
    const double prob = 1.0 / (1.0 + std::exp(-spec.selection(row)));
    const double m = spec.outcome(row);
    const double tau = spec.cate(row);
    const int arm = u_treat < spec.treat_prob ? 1 : 0;
    const auto k = static_cast<std::size_t>(i);
    truth.selection_probability(i) = prob;
    truth.cate(i) = tau;
    truth.y0(i) = m + eps;
    truth.y1(i) = m + tau + eps;
    truth.treatment[k] = arm;
    s[k] = u_select < prob ? 1 : 0;
    if (s[k]) {
      a[k] = arm;
      y[k] = arm == 1 ? truth.y1(i) : truth.y0(i);
      sate_sum += tau;
      ++n_study;
    }
  }
  truth.pate = spec.cate.uniform_mean();
  truth.sate = n_study > 0 ? sate_sum / static_cast<double>(n_study) : 0.0;
  return Generated{Dataset(std::move(x), std::move(s), std::move(a), std::move(y), 2), std::move(truth)};
}

std::string to_string(SimEstimator estimator) {
  switch (estimator) {
    case SimEstimator::naive_sate: return "naive_sate";
    case SimEstimator::om: return "om";
    case SimEstimator::isw: return "isw";
    case SimEstimator::isw_hajek: return "isw_hajek";
    case SimEstimator::aisw: return "aisw";
    case SimEstimator::aisw_hajek: return "aisw_hajek";
    case SimEstimator::oracle: return "oracle";
  }
  return "unknown";
}

SimEstimator sim_estimator_from_string(const std::string& name) {
  for (auto e : {SimEstimator::naive_sate, SimEstimator::om, SimEstimator::isw, SimEstimator::isw_hajek,
                 SimEstimator::aisw, SimEstimator::aisw_hajek, SimEstimator::oracle}) {
    if (to_string(e) == name) return e;
  }
  throw ConfigError("InvalidEstimator", "unknown simulation estimator '" + name + "'");
}

std::vector<SimEstimator> default_sim_estimators() {
  return {SimEstimator::naive_sate, SimEstimator::om,   SimEstimator::isw,
          SimEstimator::isw_hajek,  SimEstimator::aisw, SimEstimator::aisw_hajek};
}

NuisanceConfig StudyOptions::default_study_nuisance() {
  NuisanceConfig c;
  c.outcome.features = FeatureMap::quadratic;
  c.selection.features = FeatureMap::quadratic;
  c.treatment.features = FeatureMap::linear;
  c.lambda_selection = LambdaSelection::shared;
  return c;
}

double compensated_sum(const std::vector<double>& values) {
  double sum = 0.0;
  double carry = 0.0;
  for (double v : values) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return sum + carry;
}

ReplicationRecord run_replication(const ScenarioSpec& spec, const std::vector<SimEstimator>& estimators,
                                  const StudyOptions& options) {
  ReplicationRecord rec;
  const std::size_t m = estimators.size();
  rec.estimate.assign(m, 0.0);
  rec.ci.assign(m, std::nullopt);
  rec.se.assign(m, std::nullopt);
  rec.runtime.assign(m, 0.0);
  try {
    const Generated gen = generate(spec);
    const Dataset& data = gen.data;
    const double z = normal_critical_value(options.ci_level);

    bool needs_fits = false;
    for (auto e : estimators) {
      needs_fits = needs_fits || (e != SimEstimator::naive_sate && e != SimEstimator::oracle);
    }
    std::optional<NuisanceFits> fits;
    if (needs_fits) {
      NuisanceConfig cfg = options.nuisance;
      cfg.seed = derive_seed(spec.seed, 1);
      fits = fit_nuisances(data, cfg);
    }
    const NuisanceTimings t = fits ? fits->timings : NuisanceTimings{};

    for (std::size_t k = 0; k < m; ++k) {
      const SimEstimator e = estimators[k];
      const auto start = Clock::now();
      double nuisance_seconds = 0.0;
      if (e == SimEstimator::naive_sate) {
        const Contrast c = naive_sate(data, 1, 0, options.ci_level);
        rec.estimate[k] = c.tau;
        rec.se[k] = c.se;
        rec.ci[k] = c.ci;
      } else if (e == SimEstimator::oracle) {
        rec.estimate[k] = gen.truth.pate;
        rec.se[k] = 1.0;
        rec.ci[k] = Interval{gen.truth.pate - z, gen.truth.pate + z};
      } else {
        const bool hajek = e == SimEstimator::isw_hajek || e == SimEstimator::aisw_hajek;
        const EstimatorKind kind = e == SimEstimator::om ? EstimatorKind::om
                                   : (e == SimEstimator::isw || e == SimEstimator::isw_hajek)
                                       ? EstimatorKind::isw
                                       : EstimatorKind::aisw;
        const Estimate est = estimate(kind, data, *fits, Estimand::generalize,
                                      EstimatorOptions{hajek, options.ci_level});
        const Contrast c = contrast(est.influence, 1, 0, options.ci_level);
        rec.estimate[k] = c.tau;
        rec.se[k] = c.se;
        rec.ci[k] = c.ci;
        if (kind != EstimatorKind::aisw && options.bootstrap_replicates > 0) {
          BootstrapSpec bs;
          bs.replicates = options.bootstrap_replicates;
          bs.seed = derive_seed(spec.seed, 2 + k);
          bs.ci_method = CiMethod::percentile;
          bs.ci_level = options.ci_level;
          const auto stat =
              estimator_statistic(kind, Estimand::generalize, hajek, options.nuisance, NuisanceMode::fixed, &*fits);
          const BootstrapResult boot = bootstrap(stat, data, bs);
          // Columns: psi_0, psi_1, then the 1 - 0 contrast.
          rec.se[k] = boot.se(2);
          rec.ci[k] = boot.ci[2];
        }
        nuisance_seconds = kind == EstimatorKind::om    ? t.outcome_seconds
                           : kind == EstimatorKind::isw ? t.treatment_seconds + t.selection_seconds
                                                        : t.outcome_seconds + t.treatment_seconds +
                                                              t.selection_seconds;
      }
      rec.runtime[k] = seconds_since(start) + nuisance_seconds;
    }
    rec.ok = true;
  } catch (const Error& err) {
    rec.ok = false;
    rec.error = err.what();
  }
  return rec;
}

SimulationReport run_study(const std::vector<ScenarioSpec>& specs,
                           const std::vector<SimEstimator>& estimators, std::size_t replications,
                           std::uint64_t master_seed, const StudyOptions& options) {
  if (replications < 1) throw ConfigError("InvalidStudy", "R must be >= 1");
  if (estimators.empty()) throw ConfigError("InvalidStudy", "no estimators requested");
  if (specs.empty()) throw ConfigError("InvalidStudy", "no scenarios requested");
  options.nuisance.validate();
  for (const auto& s : specs) s.validate();

  SimulationReport report;
  report.replications = replications;
  report.master_seed = master_seed;
  report.ci_level = options.ci_level;
  report.estimators = estimators;

  const std::size_t m = estimators.size();
  for (std::size_t si = 0; si < specs.size(); ++si) {
    ScenarioReport sr;
    sr.spec = specs[si];
    sr.spec.seed = derive_seed(master_seed, si);
    sr.pate = true_pate(sr.spec);

    std::vector<ReplicationRecord> records(replications);
    parallel_for(replications, options.threads, [&](std::size_t r) {
      ScenarioSpec rep = sr.spec;
      rep.seed = derive_seed(sr.spec.seed, r);
      records[r] = run_replication(rep, estimators, options);
    });

    std::vector<std::size_t> ok_rows;
    for (std::size_t r = 0; r < replications; ++r) {
      if (records[r].ok) {
        ok_rows.push_back(r);
      } else {
        sr.failed_replications.push_back(static_cast<int>(r));
      }
    }
    const auto failed = sr.failed_replications.size();
    if (ok_rows.empty() || static_cast<double>(failed) > options.max_failure_rate * static_cast<double>(replications)) {
      const std::string first = failed > 0 ? records[static_cast<std::size_t>(sr.failed_replications.front())].error : "";
      throw NumericalError("TooManyFailures", std::to_string(failed) + " of " + std::to_string(replications) +
                                                  " replications failed in scenario " + sr.spec.name +
                                                  (first.empty() ? "" : " (first: " + first + ")"));
    }

    for (std::size_t k = 0; k < m; ++k) {
      CellSummary cell;
      cell.estimator = estimators[k];
      cell.ok = ok_rows.size();
      cell.failed = failed;
      std::vector<double> est, err, sq, rt, cover, se;
      bool has_ci = true;
      bool has_se = true;
      for (std::size_t r : ok_rows) {
        const auto& rec = records[r];
        est.push_back(rec.estimate[k]);
        err.push_back(rec.estimate[k] - sr.pate);
        sq.push_back((rec.estimate[k] - sr.pate) * (rec.estimate[k] - sr.pate));
        rt.push_back(rec.runtime[k]);
        if (rec.ci[k]) {
          cover.push_back(rec.ci[k]->lo <= sr.pate && sr.pate <= rec.ci[k]->hi ? 1.0 : 0.0);
        } else {
          has_ci = false;
        }
        if (rec.se[k]) {
          se.push_back(*rec.se[k]);
        } else {
          has_se = false;
        }
      }
      cell.mean_estimate = mean_of(est);
      cell.bias = mean_of(err);
      const double mse = mean_of(sq);
      cell.rmse = std::sqrt(mse);
      if (est.size() > 1) {
        std::vector<double> dev;
        for (double v : est) dev.push_back((v - cell.mean_estimate) * (v - cell.mean_estimate));
        const double var = compensated_sum(dev) / static_cast<double>(est.size() - 1);
        cell.mc_se = std::sqrt(var / static_cast<double>(est.size()));
      }
      if (has_ci) cell.coverage = mean_of(cover);
      if (has_se) cell.mean_se = mean_of(se);
      cell.mean_runtime_seconds = mean_of(rt);
      sr.cells.push_back(cell);
    }
    report.scenarios.push_back(std::move(sr));
  }
  return report;
}

}  // namespace covshift
