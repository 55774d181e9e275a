#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "covshift/calibration.hpp"
#include "covshift/diagnostics.hpp"
#include "covshift/estimators.hpp"
#include "covshift/inference.hpp"
#include "covshift/nuisance.hpp"
#include "covshift/simulation.hpp"

namespace covshift {

// Bumped whenever a key is renamed or removed.
inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::ordered_json;

Json report_json(const EstimateResult& result);
Json report_json(const NuisanceConfig& config);
Json report_json(const NuisanceFits& fits);  // penalties and trimming counts, no per-row values
Json report_json(const BootstrapSpec& spec);
Json report_json(const BootstrapResult& result);
Json report_json(const BalanceReport& report);
Json report_json(const OverlapReport& report);
Json report_json(const HeterogeneityTest& test);
Json report_json(const StratifiedDistribution& dist, const BiasDecomposition& decomposition);
Json report_json(const CalibrationWeights& weights, const MomentTarget& target);
Json report_json(const ScenarioSpec& spec);
// Runtime is machine dependent, so it is left out unless asked for.
Json report_json(const SimulationReport& report, bool include_runtime = false);

// Plot-ready rows: scenario,estimator,metric,value.
std::string long_table(const SimulationReport& report, bool include_runtime = false,
                       char delimiter = ',');

// Pretty-printed with a trailing newline.
std::string dump(const Json& j);

// Shortest round-trip decimal form.
std::string format_double(double value);

}  // namespace covshift
