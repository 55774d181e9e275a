#include "covshift/report.hpp"

#include <charconv>
#include <cmath>

namespace covshift {

namespace {

Json optional_number(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

Json interval_json(const std::optional<Interval>& ci) {
  if (!ci) return nullptr;
  return Json{{"lo", ci->lo}, {"hi", ci->hi}};
}

Json model_json(const NuisanceModelConfig& m) {
  return Json{{"family", to_string(m.regularization.family)},
              {"features", to_string(m.features)},
              {"cv_folds", m.regularization.cv_folds},
              {"lambda_grid", m.regularization.lambda_grid}};
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json report_json(const EstimateResult& r) {
  Json arms = Json::array();
  for (Eigen::Index a = 0; a < r.psi.size(); ++a) {
    const auto k = static_cast<std::size_t>(a);
    arms.push_back(Json{{"arm", a},
                        {"psi", r.psi(a)},
                        {"se", optional_number(r.se[k])},
                        {"ci", interval_json(r.ci[k])}});
  }
  Json contrasts = Json::array();
  for (const auto& c : r.contrasts) {
    contrasts.push_back(Json{{"arm", c.arm},
                             {"reference", c.reference},
                             {"tau", c.tau},
                             {"se", optional_number(c.se)},
                             {"ci", interval_json(c.ci)}});
  }
  return Json{{"estimator", to_string(r.estimator)},
              {"estimand", to_string(r.estimand)},
              {"hajek", r.hajek},
              {"ci_level", r.ci_level},
              {"se_method", r.se_method},
              {"n", r.n},
              {"n_study", r.n_study},
              {"n_external", r.n_external},
              {"arms", arms},
              {"contrasts", contrasts}};
}

Json report_json(const NuisanceConfig& c) {
  return Json{{"folds", c.folds},
              {"seed", c.seed},
              {"trim", Json{{"lo", c.trim.lo}, {"hi", c.trim.hi}}},
              {"lambda_selection", to_string(c.lambda_selection)},
              {"outcome", model_json(c.outcome)},
              {"treatment", model_json(c.treatment)},
              {"selection", model_json(c.selection)}};
}

Json report_json(const NuisanceFits& f) {
  return Json{{"trim", Json{{"lo", f.trim.lo}, {"hi", f.trim.hi}}},
              {"folds", f.folds.k},
              {"fold_seed", f.folds.seed},
              {"lambda_mu", f.lambda_mu},
              {"lambda_pi", f.lambda_pi},
              {"lambda_rho", f.lambda_rho},
              {"trimmed_pi", f.trimmed_pi},
              {"trimmed_rho", f.trimmed_rho}};
}

Json report_json(const BootstrapSpec& s) {
  return Json{{"kind", to_string(s.kind)},
              {"replicates", s.replicates},
              {"seed", s.seed},
              {"ci_method", to_string(s.ci_method)},
              {"ci_level", s.ci_level},
              {"stratified", s.stratified}};
}

Json report_json(const BootstrapResult& r) {
  return Json{{"spec", report_json(r.spec)},
              {"kept", r.draws.rows()},
              {"dropped", r.dropped}};
}

Json report_json(const BalanceReport& r) {
  Json rows = Json::array();
  for (const auto& e : r.entries) {
    rows.push_back(Json{{"covariate", e.covariate},
                        {"mean_study", e.mean_study},
                        {"mean_target", e.mean_target},
                        {"sd_pooled", e.sd_pooled},
                        {"smd_unweighted", optional_number(e.smd_unweighted)},
                        {"mean_study_weighted", optional_number(e.mean_study_weighted)},
                        {"smd_weighted", optional_number(e.smd_weighted)},
                        {"undefined", e.undefined}});
  }
  return Json{{"target", r.target}, {"weight_scheme", r.weight_scheme}, {"covariates", rows}};
}

Json report_json(const OverlapReport& r) {
  return Json{{"thresholds", Json{{"lo", r.thresholds.lo}, {"hi", r.thresholds.hi}, {"bins", r.thresholds.bins}}},
              {"rho_min", r.rho_min},
              {"rho_max", r.rho_max},
              {"rho_flagged", r.rho_flagged_rows.size()},
              {"rho_flagged_rows", r.rho_flagged_rows},
              {"pi_flagged", r.pi_flagged_rows.size()},
              {"pi_flagged_rows", r.pi_flagged_rows},
              {"rho_histogram", Json{{"edges", r.rho_histogram.edges},
                                     {"study", r.rho_histogram.study},
                                     {"external", r.rho_histogram.external}}},
              {"warnings", r.warnings}};
}

Json report_json(const HeterogeneityTest& t) {
  return Json{{"label", t.label}, {"statistic", t.statistic}, {"dof", t.dof}, {"p_value", t.p_value}, {"n", t.n}};
}

Json report_json(const StratifiedDistribution& d, const BiasDecomposition& b) {
  Json strata = Json::array();
  for (std::size_t s = 0; s < d.p_study.size(); ++s) {
    strata.push_back(Json{{"value", d.strata.empty() ? Json(nullptr) : Json(d.strata[s])},
                          {"p_study", d.p_study[s]},
                          {"p_target", d.p_target[s]},
                          {"tau", d.tau[s]},
                          {"term", b.terms[s]},
                          {"unrepresented", static_cast<bool>(b.unrepresented[s])}});
  }
  return Json{{"strata", strata},
              {"unrepresented_mass", b.unrepresented_mass},
              {"tate", b.tate},
              {"sate", b.sate},
              {"gap", b.gap}};
}

Json report_json(const CalibrationWeights& w, const MomentTarget& target) {
  Json moments = Json::array();
  for (std::size_t j = 0; j < static_cast<std::size_t>(target.values.size()); ++j) {
    moments.push_back(Json{{"name", j < target.names.size() ? target.names[j] : std::to_string(j)},
                           {"target", target.values(static_cast<Eigen::Index>(j))},
                           {"dual", w.dual(static_cast<Eigen::Index>(j))}});
  }
  return Json{{"features", to_string(target.features)},
              {"converged", w.converged},
              {"iterations", w.iterations},
              {"max_moment_violation", w.max_moment_violation},
              {"effective_sample_size", 1.0 / w.w.squaredNorm()},
              {"moments", moments}};
}

namespace {

Json polynomial_json(const Polynomial& p) {
  Json terms = Json::array();
  for (const auto& t : p.terms) terms.push_back(Json{{"coef", t.coef}, {"vars", t.vars}});
  return terms;
}

}  // namespace

Json report_json(const ScenarioSpec& s) {
  return Json{{"name", s.name},
              {"selection_form", to_string(s.selection_form)},
              {"outcome_form", to_string(s.outcome_form)},
              {"n", s.n},
              {"p", s.p},
              {"treat_prob", s.treat_prob},
              {"seed", s.seed},
              {"selection", polynomial_json(s.selection)},
              {"outcome", polynomial_json(s.outcome)},
              {"cate", polynomial_json(s.cate)}};
}

Json report_json(const SimulationReport& r, bool include_runtime) {
  Json estimators = Json::array();
  for (auto e : r.estimators) estimators.push_back(to_string(e));
  Json scenarios = Json::array();
  for (const auto& s : r.scenarios) {
    Json cells = Json::array();
    for (const auto& c : s.cells) {
      Json cell{{"estimator", to_string(c.estimator)},
                {"ok", c.ok},
                {"failed", c.failed},
                {"mean_estimate", c.mean_estimate},
                {"bias", c.bias},
                {"rmse", c.rmse},
                {"mc_se", c.mc_se},
                {"coverage", optional_number(c.coverage)},
                {"mean_se", optional_number(c.mean_se)}};
      if (include_runtime) cell["mean_runtime_seconds"] = c.mean_runtime_seconds;
      cells.push_back(std::move(cell));
    }
    scenarios.push_back(Json{{"scenario", report_json(s.spec)},
                             {"pate", s.pate},
                             {"failed_replications", s.failed_replications},
                             {"results", cells}});
  }
  return Json{{"replications", r.replications},
              {"master_seed", r.master_seed},
              {"ci_level", r.ci_level},
              {"estimators", estimators},
              {"scenarios", scenarios}};
}

std::string long_table(const SimulationReport& r, bool include_runtime, char delimiter) {
  const std::string d(1, delimiter);
  std::string out = "scenario" + d + "estimator" + d + "metric" + d + "value\n";
  auto row = [&](const std::string& s, const std::string& e, const std::string& metric, double v) {
    out += s + d + e + d + metric + d + format_double(v) + "\n";
  };
  for (const auto& s : r.scenarios) {
    for (const auto& c : s.cells) {
      const std::string e = to_string(c.estimator);
      row(s.spec.name, e, "bias", c.bias);
      row(s.spec.name, e, "rmse", c.rmse);
      row(s.spec.name, e, "mc_se", c.mc_se);
      if (c.coverage) row(s.spec.name, e, "coverage", *c.coverage);
      if (include_runtime) row(s.spec.name, e, "runtime_seconds", c.mean_runtime_seconds);
    }
  }
  return out;
}

}  // namespace covshift
