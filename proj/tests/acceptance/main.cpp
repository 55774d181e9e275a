// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <covshift/calibration.hpp>
#include <covshift/diagnostics.hpp>
#include <covshift/estimators.hpp>
#include <covshift/inference.hpp>
#include <covshift/parallel.hpp>
#include <covshift/random.hpp>
#include <covshift/report.hpp>
#include <covshift/simulation.hpp>

#include "cli.hpp"
#include "support/fixtures.hpp"

using namespace covshift;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates failed checks and a short numeric summary.
class Check {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      if (!failures_.empty()) failures_ += "; ";
      failures_ += what;
    }
  }
  void note(const std::string& text) {
    if (!notes_.empty()) notes_ += ", ";
    notes_ += text;
  }
  Outcome done() const { return {pass_, pass_ ? notes_ : failures_ + " [" + notes_ + "]"}; }

 private:
  bool pass_ = true;
  std::string failures_;
  std::string notes_;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

int workers() { return default_thread_count(); }

const CellSummary& cell(const ScenarioReport& r, SimEstimator e) {
  for (const auto& c : r.cells) {
    if (c.estimator == e) return c;
  }
  throw std::runtime_error("missing cell " + to_string(e));
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  Check c;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto t = fixture::random_tiny(rng);
    const auto d = fixture::dataset_of(t);
    const auto f = fixture::fits_of(t);
    for (bool transport : {false, true}) {
      const auto e = transport ? Estimand::transport : Estimand::generalize;
      const auto om = estimate_om(d, f, e).result;
      const auto isw = estimate_isw(d, f, e).result;
      const auto aisw = estimate_aisw(d, f, e).result;
      for (int a = 0; a < t.arms; ++a) {
        worst = std::max(worst, std::abs(om.psi(a) - oracle::om(t, a, transport)));
        worst = std::max(worst, std::abs(isw.psi(a) - oracle::isw(t, a, transport, false)));
        worst = std::max(worst, std::abs(aisw.psi(a) - oracle::aisw(t, a, transport, false)));
      }
    }
  }
  c.require(worst < 1e-12, "max deviation " + num(worst));
  c.note("max deviation " + num(worst));
  return c.done();
}

Outcome influence_consistency() {
  Check c;
  std::mt19937_64 rng(103);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto t = fixture::random_tiny(rng);
    for (auto e : {Estimand::generalize, Estimand::transport}) {
      const auto est = estimate_aisw(fixture::dataset_of(t), fixture::fits_of(t), e);
      for (int a = 0; a < t.arms; ++a) {
        worst = std::max(worst, std::abs(est.influence.phi.col(a).mean() - est.result.psi(a)));
      }
    }
  }
  c.require(worst < 1e-12, "column mean deviation " + num(worst));

  oracle::Tiny two;
  two.s = {1, 1};
  two.a = {1, 1};
  two.y = {2.0, 4.0};
  two.rho = {1.0, 1.0};
  two.pi = {{0.5, 0.5}, {0.5, 0.5}};
  two.mu = {{0, 3}, {0, 3}};
  const auto est = estimate_aisw(fixture::dataset_of(two), fixture::fits_of(two), Estimand::generalize);
  const double se = est.result.se[1].value_or(-1.0);
  c.require(se == 2.0, "worked example SE " + num(se));
  c.note("column mean deviation " + num(worst) + ", worked SE " + num(se));
  return c.done();
}

SimulationReport debiasing_study() {
  std::vector<ScenarioSpec> specs;
  for (const char* name : {"ll", "ln", "nl", "nn"}) specs.push_back(ScenarioSpec::named(name, 2000));
  StudyOptions o;
  o.threads = workers();
  return run_study(specs, {SimEstimator::naive_sate, SimEstimator::aisw}, 500, 20240601, o);
}

Outcome debiasing(const SimulationReport& r) {
  Check c;
  for (const auto& s : r.scenarios) {
    const auto& naive = cell(s, SimEstimator::naive_sate);
    const auto& aisw = cell(s, SimEstimator::aisw);
    c.require(std::abs(aisw.bias) < 0.2 * std::abs(naive.bias),
              s.spec.name + " bias " + num(aisw.bias) + " vs naive " + num(naive.bias));
    c.require(aisw.rmse < naive.rmse, s.spec.name + " rmse " + num(aisw.rmse) + " vs naive " + num(naive.rmse));
    c.note(s.spec.name + " bias " + num(aisw.bias) + "/" + num(naive.bias) + " rmse " + num(aisw.rmse) + "/" +
           num(naive.rmse));
  }
  return c.done();
}

// Scenario ll with the linear basis, which is the correctly specified one
// there. The generic quadratic basis of criterion 3 spends 65 columns per
// model and its extra nuisance variance is not in the influence-function SE.
Outcome coverage() {
  Check c;
  StudyOptions o;
  o.threads = workers();
  o.nuisance.set_features(FeatureMap::linear);
  const auto r = run_study({ScenarioSpec::named("ll", 2000)}, {SimEstimator::naive_sate, SimEstimator::aisw}, 500,
                           20240601, o);
  const auto& a = cell(r.scenarios.at(0), SimEstimator::aisw);
  const double aisw = a.coverage.value_or(-1.0);
  const double naive = cell(r.scenarios.at(0), SimEstimator::naive_sate).coverage.value_or(-1.0);
  c.require(aisw >= 0.92 && aisw <= 0.97, "AISW coverage " + num(aisw));
  c.require(naive >= 0.0 && naive < 0.6, "naive coverage " + num(naive));
  const double sd = std::sqrt(a.rmse * a.rmse - a.bias * a.bias);
  c.note("AISW coverage " + num(aisw) + ", naive coverage " + num(naive) + ", mean SE " +
         num(a.mean_se.value_or(-1.0)) + " vs sd " + num(sd));
  return c.done();
}

Outcome double_robustness() {
  Check c;
  const auto spec = ScenarioSpec::named("nn", 4000);
  StudyOptions o;
  o.threads = workers();

  // Outcome model without the nonlinear terms; propensities correct.
  o.nuisance.outcome.features = FeatureMap::linear;
  o.nuisance.selection.features = FeatureMap::quadratic;
  const auto bad_mu = run_study({spec}, {SimEstimator::om, SimEstimator::aisw}, 300, 77, o).scenarios[0];
  const double om = cell(bad_mu, SimEstimator::om).bias;
  const double aisw_mu = cell(bad_mu, SimEstimator::aisw).bias;
  c.require(std::abs(aisw_mu) < 0.02, "AISW bias with linear outcome model " + num(aisw_mu));
  c.require(std::abs(om) > 0.05, "OM bias with linear outcome model " + num(om));

  // Selection model without the nonlinear terms; outcome model correct.
  o.nuisance.outcome.features = FeatureMap::quadratic;
  o.nuisance.selection.features = FeatureMap::linear;
  const auto bad_rho = run_study({spec}, {SimEstimator::isw, SimEstimator::aisw}, 300, 78, o).scenarios[0];
  const double isw = cell(bad_rho, SimEstimator::isw).bias;
  const double aisw_rho = cell(bad_rho, SimEstimator::aisw).bias;
  c.require(std::abs(aisw_rho) < 0.02, "AISW bias with linear selection model " + num(aisw_rho));
  c.require(std::abs(isw) > 0.05, "ISW bias with linear selection model " + num(isw));

  c.note("misspecified mu: OM " + num(om) + " AISW " + num(aisw_mu) + "; misspecified rho: ISW " + num(isw) +
         " AISW " + num(aisw_rho));
  return c.done();
}

Outcome entropy_balancing() {
  Check c;
  Eigen::MatrixXd two(2, 1);
  two << 0, 1;
  MomentTarget t;
  t.values = Eigen::VectorXd::Constant(1, 0.75);
  const auto r = entropy_balance(two, t);
  c.require(std::abs(r.w(0) - 0.25) < 1e-8 && std::abs(r.w(1) - 0.75) < 1e-8, "two-point weights");
  c.require(std::abs(r.dual(0) - std::log(3.0)) < 1e-8, "two-point dual " + num(r.dual(0)));

  std::mt19937_64 rng(107);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  double violation = 0.0;
  double disagreement = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::MatrixXd x(50, 5);
    for (Eigen::Index i = 0; i < 50; ++i) {
      for (Eigen::Index j = 0; j < 5; ++j) x(i, j) = z(rng) + 0.3 * static_cast<double>(j);
    }
    Eigen::VectorXd v(50);
    for (Eigen::Index i = 0; i < 50; ++i) v(i) = u(rng);
    v /= v.sum();
    MomentTarget target;
    target.values = x.transpose() * v;
    const auto w = entropy_balance(x, target);
    violation = std::max(violation, (x.transpose() * w.w - target.values).cwiseAbs().maxCoeff());
    // Primal from the dual, written out: w_i proportional to exp(dual . (x_i - t)).
    Eigen::VectorXd eta = (x.rowwise() - target.values.transpose()) * w.dual;
    Eigen::VectorXd p = (eta.array() - eta.maxCoeff()).exp().matrix();
    p /= p.sum();
    disagreement = std::max(disagreement, (p - w.w).cwiseAbs().maxCoeff());
  }
  c.require(violation <= 1e-8, "moment violation " + num(violation));
  c.require(disagreement <= 1e-12, "dual-primal disagreement " + num(disagreement));
  c.note("moment violation " + num(violation) + ", dual-primal " + num(disagreement));
  return c.done();
}

Outcome decomposition_identity() {
  Check c;
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 2.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t k = 2 + rng() % 9;
    StratifiedDistribution s;
    double ts = 0, tt = 0;
    for (std::size_t j = 0; j < k; ++j) {
      s.strata.push_back(static_cast<double>(j));
      s.p_study.push_back(j > 0 && u(rng) < 0.2 ? 0.0 : u(rng));
      s.p_target.push_back(u(rng));
      s.tau.push_back(z(rng));
      ts += s.p_study.back();
      tt += s.p_target.back();
    }
    for (auto& p : s.p_study) p /= ts;
    for (auto& p : s.p_target) p /= tt;
    const auto b = bias_decomposition(s);
    double sum = b.unrepresented_mass;
    for (double term : b.terms) sum += term;
    // TATE and SATE recomputed here rather than taken from the result.
    double tate = 0, sate = 0;
    for (std::size_t j = 0; j < k; ++j) {
      tate += s.p_target[j] * s.tau[j];
      sate += s.p_study[j] * s.tau[j];
    }
    worst = std::max(worst, std::abs(sum - (tate - sate)));
  }
  c.require(worst < 1e-12, "identity deviation " + num(worst));
  const auto worked = bias_decomposition({{0, 1}, {0.5, 0.5}, {0.25, 0.75}, {1, 3}});
  c.require(worked.gap == 0.5, "worked gap " + num(worked.gap));
  c.note("identity deviation " + num(worst) + ", worked gap " + num(worked.gap));
  return c.done();
}

// Rejection rate at level 0.05 over replications of the linear scenario with
// the given CATE.
double rejection_rate(const Polynomial& cate, std::uint64_t master, int reps) {
  auto spec = ScenarioSpec::named("ll", 2000);
  spec.cate = cate;
  std::vector<int> reject(static_cast<std::size_t>(reps), 0);
  parallel_for(reject.size(), workers(), [&](std::size_t r) {
    auto s = spec;
    s.seed = derive_seed(master, r);
    const auto g = generate(s);
    NuisanceConfig cfg;
    cfg.lambda_selection = LambdaSelection::shared;
    cfg.seed = derive_seed(s.seed, 1);
    const auto fits = fit_nuisances(g.data, cfg);
    reject[r] = heterogeneity_test(g.data, fits, 1, 0).p_value < 0.05 ? 1 : 0;
  });
  double total = 0;
  for (int v : reject) total += v;
  return total / reps;
}

Outcome heterogeneity_calibration() {
  Check c;
  const double size = rejection_rate(Polynomial{{{1.0, {}}}}, 211, 500);
  const double power = rejection_rate(Polynomial{{{2.0, {0}}}}, 223, 500);
  c.require(size >= 0.03 && size <= 0.08, "size " + num(size));
  c.require(power >= 0.9, "power " + num(power));
  c.note("size " + num(size) + ", power " + num(power));
  return c.done();
}

Outcome bootstrap_cross_check() {
  Check c;
  const auto g = generate(ScenarioSpec::named("ll", 5000, 4242));
  NuisanceConfig cfg;
  cfg.lambda_selection = LambdaSelection::shared;
  cfg.seed = 17;
  cfg.threads = 1;
  const auto fits = fit_nuisances(g.data, cfg);
  const auto est = estimate_aisw(g.data, fits, Estimand::generalize).result;
  BootstrapSpec spec;
  spec.replicates = 500;
  spec.seed = 99;
  spec.threads = workers();
  const auto boot = bootstrap(estimator_statistic(EstimatorKind::aisw, Estimand::generalize, false, cfg,
                                                  NuisanceMode::refit),
                              g.data, spec);
  const auto k = static_cast<Eigen::Index>(est.psi.size());
  for (Eigen::Index a = 0; a < k; ++a) {
    const double if_se = est.se[static_cast<std::size_t>(a)].value_or(0.0);
    const double rel = std::abs(boot.se(a) - if_se) / if_se;
    c.require(rel < 0.1, "arm " + std::to_string(a) + " relative gap " + num(rel));
    c.note("arm " + std::to_string(a) + " boot " + num(boot.se(a)) + " IF " + num(if_se));
  }
  const double if_se = est.contrasts.at(0).se.value_or(0.0);
  const double rel = std::abs(boot.se(k) - if_se) / if_se;
  c.require(rel < 0.1, "contrast relative gap " + num(rel));
  c.note("contrast boot " + num(boot.se(k)) + " IF " + num(if_se));
  return c.done();
}

// Runs one CLI command and returns stdout plus every file it wrote.
std::string cli_output(std::vector<std::string> args, const fixture::TempDir& dir, const std::string& tag,
                       const std::vector<std::string>& side_files) {
  std::vector<std::string> paths;
  for (const auto& flag : side_files) {
    paths.push_back(dir.file(tag + flag.substr(2)));
    args.push_back(flag);
    args.push_back(paths.back());
  }
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw std::runtime_error("exit " + std::to_string(code) + ": " + err.str());
  std::string all = out.str();
  for (const auto& p : paths) all += "\n--\n" + fixture::slurp(p);
  return all;
}

Outcome determinism() {
  Check c;
  fixture::TempDir dir;
  const std::string data = std::string(COVSHIFT_DATA_DIR) + "/example.csv";
  struct Case {
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::vector<Case> cases{
      {{"estimate", "--data", data, "--estimand", "transport", "--boot", "bayesian", "--B", "50", "--seed", "5"},
       {"--audit"}},
      {{"estimate", "--data", data, "--estimator", "isw", "--hajek", "--boot", "nonparametric", "--B", "50",
        "--boot-nuisance", "fixed", "--stratified", "--seed", "6"},
       {}},
      {{"weights", "--data", data, "--moments", "first_and_second", "--seed", "7"}, {"--weights-out"}},
      {{"diagnose", "--data", data, "--seed", "8"}, {}},
      {{"simulate", "--scenario", "all", "--n", "500", "--reps", "8", "--B", "10", "--seed", "9"}, {"--table"}},
  };
  int index = 0;
  for (const auto& k : cases) {
    const std::string name = k.args[0] + "#" + std::to_string(index);
    try {
      auto with = [&](const char* threads) {
        auto a = k.args;
        a.push_back("--threads");
        a.push_back(threads);
        return a;
      };
      const auto first = cli_output(with("1"), dir, name + "a", k.files);
      const auto again = cli_output(with("1"), dir, name + "b", k.files);
      const auto wide = cli_output(with("8"), dir, name + "c", k.files);
      c.require(first == again, name + " differs on rerun");
      c.require(first == wide, name + " differs between 1 and 8 threads");
      c.note(name + " " + std::to_string(first.size()) + " bytes");
    } catch (const std::exception& e) {
      c.require(false, name + " failed: " + e.what());
    }
    ++index;
  }
  return c.done();
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& body) {
    const auto start = clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " (" << o.detail << "; "
              << num(secs) << " s)" << std::endl;
  };

  report(1, "estimators match direct substitution", oracle_equivalence);
  report(2, "influence columns and worked SE", influence_consistency);
  report(3, "AISW removes most of the naive bias", [] { return debiasing(debiasing_study()); });
  report(4, "AISW interval coverage", coverage);
  report(5, "double robustness", double_robustness);
  report(6, "entropy balancing", entropy_balancing);
  report(7, "bias decomposition identity", decomposition_identity);
  report(8, "heterogeneity test size and power", heterogeneity_calibration);
  report(9, "bootstrap and influence SE agree", bootstrap_cross_check);
  report(10, "CLI artifacts are deterministic", determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
