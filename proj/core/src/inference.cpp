#include "covshift/inference.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "covshift/error.hpp"
#include "covshift/parallel.hpp"
#include "covshift/random.hpp"

namespace covshift {

namespace {

using Eigen::Index;
using Eigen::VectorXd;

std::vector<std::size_t> resample_rows(const Dataset& data, bool stratified, Rng& rng) {
  const std::size_t n = data.size();
  std::vector<std::size_t> rows(n);
  if (!stratified) {
    for (auto& r : rows) r = static_cast<std::size_t>(rng() % n);
    return rows;
  }
  // Cells: external rows, then study rows per arm.
  std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(data.num_arms()) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = data.treatment(i);
    cells[a ? static_cast<std::size_t>(*a) + 1 : 0].push_back(i);
  }
  std::size_t k = 0;
  for (const auto& cell : cells) {
    for (std::size_t j = 0; j < cell.size(); ++j) rows[k++] = cell[rng() % cell.size()];
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

std::string to_string(BootstrapKind kind) {
  return kind == BootstrapKind::nonparametric ? "np" : "bayes";
}

std::string to_string(CiMethod method) {
  return method == CiMethod::percentile ? "percentile" : "normal";
}

BootstrapKind bootstrap_kind_from_string(const std::string& name) {
  if (name == "np" || name == "nonparametric") return BootstrapKind::nonparametric;
  if (name == "bayes" || name == "bayesian") return BootstrapKind::bayesian;
  throw ConfigError("InvalidBootstrap", "expected np or bayes, got '" + name + "'");
}

CiMethod ci_method_from_string(const std::string& name) {
  if (name == "percentile") return CiMethod::percentile;
  if (name == "normal") return CiMethod::normal;
  throw ConfigError("InvalidBootstrap", "expected percentile or normal, got '" + name + "'");
}

std::string to_string(NuisanceMode mode) { return mode == NuisanceMode::refit ? "refit" : "fixed"; }

NuisanceMode nuisance_mode_from_string(const std::string& name) {
  if (name == "refit") return NuisanceMode::refit;
  if (name == "fixed") return NuisanceMode::fixed;
  throw ConfigError("InvalidBootstrap", "expected refit or fixed, got '" + name + "'");
}

void BootstrapSpec::validate() const {
  if (replicates < 2) throw ConfigError("InvalidBootstrap", "B must be >= 2");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("InvalidBootstrap", "ci_level must be in (0, 1)");
}

std::vector<double> bayesian_weights(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
  auto rng = make_rng(seed, replicate);
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    // 1 - u lies in (0, 1], so the log is finite.
    x = -std::log(1.0 - uniform01(rng));
    if (x <= 0.0) x = 0x1.0p-53;
    total += x;
  }
  const double scale = static_cast<double>(n) / total;
  for (auto& x : w) x *= scale;
  return w;
}

double empirical_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw DataError("EmptySample", "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapResult bootstrap(const Statistic& statistic, const Dataset& data, const BootstrapSpec& spec) {
  spec.validate();
  const std::size_t n = data.size();
  const auto replicates = static_cast<std::size_t>(spec.replicates);
  const bool had_external = data.num_external() > 0;
  std::vector<std::optional<VectorXd>> results(replicates);

  std::vector<std::size_t> identity(n);
  for (std::size_t i = 0; i < n; ++i) identity[i] = i;

  parallel_for(replicates, spec.threads, [&](std::size_t b) {
    const std::uint64_t seed = derive_seed(spec.seed, b);
    try {
      if (spec.kind == BootstrapKind::nonparametric) {
        auto rng = make_rng(spec.seed, b);
        const auto rows = resample_rows(data, spec.stratified, rng);
        Dataset sample = data.subset(rows);
        if (!validate_selection_pattern(sample).passed) return;
        if (had_external && sample.num_external() == 0) return;
        if (sample.num_study() == 0) return;
        const std::vector<double> ones(n, 1.0);
        results[b] = statistic(BootstrapSample{sample, rows, ones, seed, static_cast<int>(b)});
      } else {
        const auto weights = bayesian_weights(n, spec.seed, b);
        results[b] = statistic(BootstrapSample{data, identity, weights, seed, static_cast<int>(b)});
      }
    } catch (const DataError&) {
      results[b].reset();
    }
  });

  BootstrapResult out;
  out.spec = spec;
  std::vector<const VectorXd*> kept;
  for (std::size_t b = 0; b < replicates; ++b) {
    if (results[b]) {
      kept.push_back(&*results[b]);
    } else {
      out.dropped.push_back(static_cast<int>(b));
    }
  }
  if (out.dropped.size() * 10 > replicates || kept.size() < 2) {
    throw NumericalError("DegenerateReplicate",
                         std::to_string(out.dropped.size()) + " of " + std::to_string(replicates) +
                             " replicates lacked an arm or S stratum");
  }
  const Index m = kept.front()->size();
  out.draws.resize(static_cast<Index>(kept.size()), m);
  for (std::size_t r = 0; r < kept.size(); ++r) {
    if (kept[r]->size() != m) throw DataError("DimensionMismatch", "statistic length changed");
    out.draws.row(static_cast<Index>(r)) = kept[r]->transpose();
  }
  out.se.resize(m);
  out.ci.resize(static_cast<std::size_t>(m));
  const double z = normal_critical_value(spec.ci_level);
  for (Index j = 0; j < m; ++j) {
    const VectorXd col = out.draws.col(j);
    out.se(j) = std::sqrt(sample_variance(col));
    if (spec.ci_method == CiMethod::percentile) {
      std::vector<double> v(col.data(), col.data() + col.size());
      out.ci[static_cast<std::size_t>(j)] = Interval{empirical_quantile(v, 0.5 * (1.0 - spec.ci_level)),
                                                     empirical_quantile(v, 0.5 * (1.0 + spec.ci_level))};
    } else {
      const double c = col.mean();
      out.ci[static_cast<std::size_t>(j)] = Interval{c - z * out.se(j), c + z * out.se(j)};
    }
  }
  return out;
}

Statistic estimator_statistic(EstimatorKind kind, Estimand estimand, bool hajek,
                              const NuisanceConfig& config, NuisanceMode mode,
                              const NuisanceFits* full_sample_fits) {
  if (mode == NuisanceMode::fixed && !full_sample_fits) {
    throw ConfigError("InvalidBootstrap", "fixed nuisance mode needs the full-sample fits");
  }
  return [=](const BootstrapSample& sample) -> VectorXd {
    NuisanceFits fits;
    if (mode == NuisanceMode::refit) {
      NuisanceConfig cfg = config;
      cfg.seed = sample.seed;
      fits = fit_nuisances(sample.data, cfg, sample.weights);
    } else {
      fits = full_sample_fits->subset(sample.rows);
    }
    const VectorXd psi = point_estimates(kind, sample.data, fits, estimand, hajek, sample.weights);
    const Index arms = psi.size();
    VectorXd out(arms + arms * (arms - 1) / 2);
    out.head(arms) = psi;
    Index k = arms;
    for (Index a = 1; a < arms; ++a) {
      for (Index b = 0; b < a; ++b) out(k++) = psi(a) - psi(b);
    }
    return out;
  };
}

void attach_bootstrap(EstimateResult& result, const BootstrapResult& boot) {
  const auto arms = static_cast<Index>(result.psi.size());
  const Index expected = arms + arms * (arms - 1) / 2;
  if (boot.se.size() != expected) {
    throw DataError("DimensionMismatch", "bootstrap statistic does not match the estimate");
  }
  const double z = normal_critical_value(boot.spec.ci_level);
  result.se_method = "bootstrap";
  result.ci_level = boot.spec.ci_level;
  auto interval = [&](Index j, double center) {
    if (boot.spec.ci_method == CiMethod::percentile) return boot.ci[static_cast<std::size_t>(j)];
    return Interval{center - z * boot.se(j), center + z * boot.se(j)};
  };
  for (Index a = 0; a < arms; ++a) {
    result.se[static_cast<std::size_t>(a)] = boot.se(a);
    result.ci[static_cast<std::size_t>(a)] = interval(a, result.psi(a));
  }
  for (std::size_t c = 0; c < result.contrasts.size(); ++c) {
    const Index j = arms + static_cast<Index>(c);
    result.contrasts[c].se = boot.se(j);
    result.contrasts[c].ci = interval(j, result.contrasts[c].tau);
  }
}

}  // namespace covshift
