#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "covshift/calibration.hpp"
#include "covshift/dataset.hpp"
#include "covshift/diagnostics.hpp"
#include "covshift/error.hpp"
#include "covshift/estimators.hpp"
#include "covshift/inference.hpp"
#include "covshift/nuisance.hpp"
#include "covshift/parallel.hpp"
#include "covshift/random.hpp"
#include "covshift/report.hpp"
#include "covshift/simulation.hpp"

namespace covshift::cli {

namespace {

using Clock = std::chrono::steady_clock;

enum class Type { integer, unsigned_integer, real, boolean, text, reals, texts };

struct Key {
  const char* name;
  Type type;
  bool nullable;
  const char* help;
};

// Every config key. Flags are the key with '_' replaced by '-'.
const std::vector<Key>& all_keys() {
  static const std::vector<Key> keys = {
      {"data", Type::text, true, "input data file"},
      {"covariates", Type::texts, false, "comma-separated covariate columns (default: all other columns)"},
      {"treatment", Type::text, false, "treatment column"},
      {"outcome", Type::text, false, "outcome column"},
      {"selection", Type::text, false, "study-membership column (1 = study, 0 = external)"},
      {"delimiter", Type::text, false, "field delimiter (one character)"},
      {"num_arms", Type::integer, true, "declared number of arms K + 1"},
      {"seed", Type::unsigned_integer, false, "master seed"},
      {"folds", Type::integer, false, "cross-fitting folds"},
      {"trim_lo", Type::real, false, "lower propensity trim bound"},
      {"trim_hi", Type::real, false, "upper propensity trim bound"},
      {"lambda_grid", Type::reals, false, "comma-separated ridge penalties, descending"},
      {"cv_folds", Type::integer, false, "folds for penalty selection"},
      {"lambda_selection", Type::text, false, "nested or shared penalty selection"},
      {"features", Type::text, false, "linear or quadratic basis for all nuisance models"},
      {"outcome_features", Type::text, true, "basis override for the outcome model"},
      {"treatment_features", Type::text, true, "basis override for the treatment model"},
      {"selection_features", Type::text, true, "basis override for the selection model"},
      {"estimator", Type::text, false, "om, isw or aisw"},
      {"estimand", Type::text, false, "generalize or transport"},
      {"hajek", Type::boolean, false, "normalize weights within arm"},
      {"ci_level", Type::real, false, "confidence level"},
      {"boot", Type::text, false, "none, np or bayes"},
      {"B", Type::integer, false, "bootstrap replicates"},
      {"ci", Type::text, false, "percentile or normal bootstrap intervals"},
      {"boot_nuisance", Type::text, false, "refit or fixed nuisances inside the bootstrap"},
      {"stratified", Type::boolean, false, "resample within S and arm cells"},
      {"target", Type::text, true, "target moment file (name,value)"},
      {"target_moments", Type::text, true, "inline target moments, e.g. x1=0.2,x1^2=0.4"},
      {"moments", Type::text, false, "first or first_and_second"},
      {"tolerance", Type::real, false, "moment tolerance for calibration"},
      {"max_iter", Type::integer, false, "Newton iteration cap for calibration"},
      {"arm", Type::integer, false, "contrast arm"},
      {"reference", Type::integer, false, "contrast reference arm"},
      {"stratify", Type::text, true, "covariate column for the bias decomposition"},
      {"bins", Type::integer, false, "overlap histogram bins"},
      {"scenario", Type::text, false, "ll, ln, nl, nn or all"},
      {"n", Type::integer, false, "rows per replication"},
      {"reps", Type::integer, false, "replications"},
      {"estimators", Type::texts, false, "comma-separated simulation estimators"},
  };
  return keys;
}

const Key& key_info(const std::string& name) {
  for (const auto& k : all_keys()) {
    if (name == k.name) return k;
  }
  throw ConfigError("UnknownConfigKey", name);
}

const std::vector<std::string> kDataKeys = {"data", "covariates", "treatment", "outcome",
                                            "selection", "delimiter", "num_arms"};
const std::vector<std::string> kNuisanceKeys = {
    "folds",    "trim_lo",          "trim_hi",           "lambda_grid",       "cv_folds",
    "lambda_selection", "features", "outcome_features", "treatment_features", "selection_features"};

std::vector<std::string> keys_for(const std::string& command) {
  std::vector<std::string> keys;
  auto add = [&](const std::vector<std::string>& more) { keys.insert(keys.end(), more.begin(), more.end()); };
  if (command != "simulate") add(kDataKeys);
  if (command != "weights") add(kNuisanceKeys);
  keys.push_back("seed");
  if (command == "estimate") {
    add({"estimator", "estimand", "hajek", "ci_level", "boot", "B", "ci", "boot_nuisance", "stratified"});
  } else if (command == "weights") {
    add({"estimand", "target", "target_moments", "moments", "tolerance", "max_iter"});
  } else if (command == "diagnose") {
    add({"estimand", "arm", "reference", "stratify", "bins"});
  } else if (command == "simulate") {
    add({"scenario", "n", "reps", "estimators", "B", "ci_level"});
  }
  return keys;
}

Json defaults_for(const std::string& command) {
  const NuisanceConfig nc = command == "simulate" ? StudyOptions::default_study_nuisance() : NuisanceConfig{};
  std::map<std::string, Json> d = {
      {"data", nullptr},
      {"covariates", Json::array()},
      {"treatment", "A"},
      {"outcome", "Y"},
      {"selection", "S"},
      {"delimiter", ","},
      {"num_arms", nullptr},
      {"seed", 1},
      {"folds", nc.folds},
      {"trim_lo", nc.trim.lo},
      {"trim_hi", nc.trim.hi},
      {"lambda_grid", default_lambda_grid()},
      {"cv_folds", 5},
      {"lambda_selection", to_string(nc.lambda_selection)},
      {"features", "linear"},
      {"outcome_features", command == "simulate" ? Json("quadratic") : Json(nullptr)},
      {"treatment_features", nullptr},
      {"selection_features", command == "simulate" ? Json("quadratic") : Json(nullptr)},
      {"estimator", "aisw"},
      {"estimand", "generalize"},
      {"hajek", false},
      {"ci_level", 0.95},
      {"boot", "none"},
      {"B", command == "simulate" ? 0 : 200},
      {"ci", "percentile"},
      {"boot_nuisance", "refit"},
      {"stratified", false},
      {"target", nullptr},
      {"target_moments", nullptr},
      {"moments", "first"},
      {"tolerance", 1e-8},
      {"max_iter", 200},
      {"arm", 1},
      {"reference", 0},
      {"stratify", nullptr},
      {"bins", 20},
      {"scenario", "all"},
      {"n", 2000},
      {"reps", 100},
      {"estimators", Json::array()},
  };
  for (auto e : default_sim_estimators()) d["estimators"].push_back(to_string(e));
  Json out = Json::object();
  for (const auto& k : keys_for(command)) out[k] = d.at(k);
  return out;
}

void check_type(const Key& key, const Json& v) {
  auto bad = [&] { throw ConfigError("InvalidConfig", "field '" + std::string(key.name) + "' has the wrong type"); };
  if (v.is_null()) {
    if (!key.nullable) bad();
    return;
  }
  switch (key.type) {
    case Type::integer:
      if (!v.is_number_integer()) bad();
      break;
    case Type::unsigned_integer:
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) bad();
      break;
    case Type::real:
      if (!v.is_number()) bad();
      break;
    case Type::boolean:
      if (!v.is_boolean()) bad();
      break;
    case Type::text:
      if (!v.is_string()) bad();
      break;
    case Type::reals:
      if (!v.is_array()) bad();
      for (const auto& x : v) {
        if (!x.is_number()) bad();
      }
      break;
    case Type::texts:
      if (!v.is_array()) bad();
      for (const auto& x : v) {
        if (!x.is_string()) bad();
      }
      break;
  }
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, delim)) {
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("InvalidFlag", "--" + key + ": cannot parse '" + text + "'");
  }
  return value;
}

Json parse_flag(const Key& key, const std::string& text) {
  const std::string name = key.name;
  switch (key.type) {
    case Type::integer: return parse_number<std::int64_t>(name, text);
    case Type::unsigned_integer: return parse_number<std::uint64_t>(name, text);
    case Type::real: return parse_number<double>(name, text);
    case Type::boolean: return text == "true" || text == "1";
    case Type::text: return text;
    case Type::reals: {
      Json arr = Json::array();
      for (const auto& part : split(text, ',')) arr.push_back(parse_number<double>(name, part));
      return arr;
    }
    case Type::texts: {
      Json arr = Json::array();
      for (const auto& part : split(text, ',')) arr.push_back(part);
      return arr;
    }
  }
  return nullptr;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

// Options that never enter the artifact.
struct Outputs {
  std::string config;
  std::string out;
  std::string audit;
  std::string weights_out;
  std::string table;
  std::string timing_out;
  int threads = 0;
  int verbose = 0;
};

struct Command {
  CLI::App* app = nullptr;
  std::string name;
  std::map<std::string, std::string> texts;
  std::map<std::string, bool> flags;
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("FileNotWritable", path);
  out << content;
  if (!out) throw ConfigError("FileNotWritable", path);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("FileNotFound", path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("InvalidConfig", path + ": " + e.what());
  }
}

// Defaults, then the config file, then flags.
Json resolve(const Command& cmd, const Outputs& outputs) {
  Json cfg = defaults_for(cmd.name);
  if (!outputs.config.empty()) {
    Json file = read_json_file(outputs.config);
    if (!file.is_object()) throw ConfigError("InvalidConfig", "config file must hold a JSON object");
    // An artifact may be passed directly; its embedded config is used.
    if (file.contains("schema_version") && file.contains("config")) file = file["config"];
    for (const auto& [name, value] : file.items()) {
      if (name == "command") {
        if (value != cmd.name) throw ConfigError("InvalidConfig", "config is for command " + value.dump());
        continue;
      }
      if (!cfg.contains(name)) throw ConfigError("UnknownConfigKey", "'" + name + "' is not valid for " + cmd.name);
      check_type(key_info(name), value);
      cfg[name] = value;
    }
  }
  for (const auto& [name, text] : cmd.texts) {
    if (cmd.app->get_option(flag_name(name))->count() > 0) cfg[name] = parse_flag(key_info(name), text);
  }
  for (const auto& [name, value] : cmd.flags) {
    if (cmd.app->get_option(flag_name(name))->count() > 0) cfg[name] = value;
  }
  return cfg;
}

template <typename T>
T get(const Json& cfg, const char* key) {
  return cfg.at(key).get<T>();
}

std::optional<std::string> get_optional(const Json& cfg, const char* key) {
  if (cfg.at(key).is_null()) return std::nullopt;
  return cfg.at(key).get<std::string>();
}

char delimiter_of(const Json& cfg) {
  const auto d = get<std::string>(cfg, "delimiter");
  if (d == "\\t" || d == "tab") return '\t';
  if (d.size() != 1) throw ConfigError("InvalidConfig", "field 'delimiter' must be one character");
  return d[0];
}

Schema schema_of(const Json& cfg) {
  Schema schema;
  schema.treatment = get<std::string>(cfg, "treatment");
  schema.outcome = get<std::string>(cfg, "outcome");
  schema.selection = get<std::string>(cfg, "selection");
  schema.delimiter = delimiter_of(cfg);
  schema.covariates = get<std::vector<std::string>>(cfg, "covariates");
  if (!cfg.at("num_arms").is_null()) schema.num_arms = get<int>(cfg, "num_arms");
  return schema;
}

Dataset load(Json& cfg) {
  const auto path = get_optional(cfg, "data");
  if (!path) throw ConfigError("MissingField", "field 'data' (--data) is required");
  Schema schema = schema_of(cfg);
  if (schema.covariates.empty()) {
    for (const auto& name : read_header(*path, schema.delimiter)) {
      if (name != schema.treatment && name != schema.outcome && name != schema.selection) {
        schema.covariates.push_back(name);
      }
    }
    cfg["covariates"] = schema.covariates;  // record the resolved list
  }
  return load_dataset(*path, schema);
}

NuisanceConfig nuisance_of(const Json& cfg, int threads) {
  NuisanceConfig c;
  c.folds = get<int>(cfg, "folds");
  c.trim = Trim{get<double>(cfg, "trim_lo"), get<double>(cfg, "trim_hi")};
  c.seed = get<std::uint64_t>(cfg, "seed");
  c.set_lambda_grid(get<std::vector<double>>(cfg, "lambda_grid"));
  c.set_cv_folds(get<int>(cfg, "cv_folds"));
  c.lambda_selection = lambda_selection_from_string(get<std::string>(cfg, "lambda_selection"));
  const FeatureMap base = feature_map_from_string(get<std::string>(cfg, "features"));
  auto features = [&](const char* key) {
    const auto v = get_optional(cfg, key);
    return v ? feature_map_from_string(*v) : base;
  };
  c.outcome.features = features("outcome_features");
  c.treatment.features = features("treatment_features");
  c.selection.features = features("selection_features");
  c.threads = threads;
  c.validate();
  return c;
}

Json dataset_json(const Dataset& data) {
  const auto report = validate_selection_pattern(data);
  return Json{{"rows", data.size()},
              {"study", data.num_study()},
              {"external", data.num_external()},
              {"arms", data.num_arms()},
              {"arm_counts", report.arm_counts},
              {"covariates", data.covariate_names()},
              {"ignored_external_values", data.ignored_external_values()}};
}

Json artifact_head(const std::string& command, const Json& cfg) {
  return Json{{"schema_version", kSchemaVersion},
              {"command", command},
              {"seed", cfg.at("seed")},
              {"config", cfg}};
}

void emit(const Outputs& outputs, const Json& artifact, std::ostream& out) {
  if (outputs.out.empty()) {
    out << dump(artifact);
  } else {
    write_file(outputs.out, dump(artifact));
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setw(11) << std::setprecision(5) << v;
  return s.str();
}

void print_table(const EstimateResult& r, std::ostream& out) {
  out << to_string(r.estimator) << (r.hajek ? " (hajek)" : "") << ", " << to_string(r.estimand)
      << ", n = " << r.n << " (study " << r.n_study << ", external " << r.n_external << "), se: "
      << r.se_method << "\n";
  out << "  arm        psi         se      ci_lo      ci_hi\n";
  for (Eigen::Index a = 0; a < r.psi.size(); ++a) {
    const auto k = static_cast<std::size_t>(a);
    out << std::setw(5) << a << fmt(r.psi(a));
    if (r.se[k]) out << fmt(*r.se[k]); else out << std::setw(11) << "-";
    if (r.ci[k]) out << fmt(r.ci[k]->lo) << fmt(r.ci[k]->hi); else out << std::setw(11) << "-" << std::setw(11) << "-";
    out << "\n";
  }
  out << "  contrast   tau         se      ci_lo      ci_hi\n";
  for (const auto& c : r.contrasts) {
    out << std::setw(5) << (std::to_string(c.arm) + "-" + std::to_string(c.reference)) << fmt(c.tau);
    if (c.se) out << fmt(*c.se); else out << std::setw(11) << "-";
    if (c.ci) out << fmt(c.ci->lo) << fmt(c.ci->hi); else out << std::setw(11) << "-" << std::setw(11) << "-";
    out << "\n";
  }
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void log(const Outputs& o, std::ostream& err, const std::string& msg) {
  if (o.verbose > 0) err << "[covshift] " << msg << "\n";
}

const char* kTransportCaveat =
    "Reweighting corrects only for shift in the measured covariates. Effect modifiers that are "
    "unmeasured, or strata absent from the study sample, leave bias that no diagnostic here can detect.";

int run_estimate(Json& cfg, const Outputs& o, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const Dataset data = load(cfg);
  const Estimand estimand = estimand_from_string(get<std::string>(cfg, "estimand"));
  const EstimatorKind kind = estimator_from_string(get<std::string>(cfg, "estimator"));
  const bool hajek = get<bool>(cfg, "hajek");
  const double level = get<double>(cfg, "ci_level");
  if (estimand == Estimand::transport && data.num_external() == 0) {
    throw DataError("NoExternalRows", "transport needs rows with S = 0");
  }
  const NuisanceConfig nc = nuisance_of(cfg, o.threads);
  log(o, err, "fitting nuisances on " + std::to_string(data.size()) + " rows");
  const NuisanceFits fits = fit_nuisances(data, nc);
  Estimate est = estimate(kind, data, fits, estimand, EstimatorOptions{hajek, level});

  Json boot_json = nullptr;
  const auto boot = get<std::string>(cfg, "boot");
  if (boot != "none") {
    BootstrapSpec spec;
    spec.kind = bootstrap_kind_from_string(boot);
    spec.replicates = get<int>(cfg, "B");
    spec.seed = derive_seed(get<std::uint64_t>(cfg, "seed"), 1);
    spec.ci_method = ci_method_from_string(get<std::string>(cfg, "ci"));
    spec.ci_level = level;
    spec.stratified = get<bool>(cfg, "stratified");
    spec.threads = o.threads;
    const NuisanceMode mode = nuisance_mode_from_string(get<std::string>(cfg, "boot_nuisance"));
    log(o, err, "bootstrap with " + std::to_string(spec.replicates) + " replicates");
    const BootstrapResult result = bootstrap(estimator_statistic(kind, estimand, hajek, nc, mode, &fits), data, spec);
    attach_bootstrap(est.result, result);
    boot_json = report_json(result);
    boot_json["nuisance_mode"] = to_string(mode);
  }
  if (!o.audit.empty()) write_nuisance_audit(o.audit, fits, delimiter_of(cfg));

  Json artifact = artifact_head("estimate", cfg);
  artifact["dataset"] = dataset_json(data);
  artifact["result"] = report_json(est.result);
  artifact["nuisance"] = report_json(fits);
  artifact["bootstrap"] = boot_json;
  artifact["notes"] = estimand == Estimand::transport ? Json::array({kTransportCaveat}) : Json::array();
  emit(o, artifact, out);
  if (!o.out.empty()) print_table(est.result, out);
  if (!o.timing_out.empty()) {
    write_file(o.timing_out, dump(Json{{"outcome_seconds", fits.timings.outcome_seconds},
                                       {"treatment_seconds", fits.timings.treatment_seconds},
                                       {"selection_seconds", fits.timings.selection_seconds},
                                       {"total_seconds", seconds_since(start)}}));
  }
  return kOk;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

MomentFeatures moments_of(const std::string& name) {
  if (name == "first") return MomentFeatures::first;
  if (name == "first_and_second") return MomentFeatures::first_and_second;
  throw ConfigError("InvalidConfig", "field 'moments' must be first or first_and_second");
}

Json contrasts_json(const std::vector<ContrastEstimate>& contrasts) {
  Json arr = Json::array();
  for (const auto& c : contrasts) arr.push_back(Json{{"arm", c.arm}, {"reference", c.reference}, {"tau", c.tau}});
  return arr;
}

int run_weights(Json& cfg, const Outputs& o, std::ostream& out, std::ostream& err) {
  const Dataset data = load(cfg);
  const Estimand estimand = estimand_from_string(get<std::string>(cfg, "estimand"));
  const auto& names = data.covariate_names();
  const bool target_sample_exists = estimand == Estimand::generalize || data.num_external() > 0;

  MomentTarget target;
  if (const auto path = get_optional(cfg, "target")) {
    target = read_moment_target(*path, names, delimiter_of(cfg));
  } else if (const auto inline_target = get_optional(cfg, "target_moments")) {
    std::map<std::string, double> entries;
    for (const auto& item : split(*inline_target, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("InvalidTarget", "expected name=value, got '" + item + "'");
      const std::string name = item.substr(0, eq);
      if (!entries.emplace(name, parse_number<double>("target-moments", item.substr(eq + 1))).second) {
        throw ConfigError("InvalidTarget", "duplicate " + name);
      }
    }
    target = moment_target_from_entries(entries, names);
  } else {
    if (!target_sample_exists) throw DataError("NoExternalRows", "no external rows to take target moments from");
    std::vector<std::size_t> rows = data.external_rows();
    if (estimand == Estimand::generalize) {
      rows.resize(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) rows[i] = i;
    }
    target = sample_moments(rows_of(data.covariates(), rows), moments_of(get<std::string>(cfg, "moments")), names);
  }

  CalibrationOptions options;
  options.tolerance = get<double>(cfg, "tolerance");
  options.max_iterations = get<int>(cfg, "max_iter");
  log(o, err, "entropy balancing " + std::to_string(data.num_study()) + " study rows");
  const auto study = data.study_rows();
  const CalibrationWeights cw = entropy_balance(rows_of(data.covariates(), study), target, options);

  if (!o.weights_out.empty()) {
    const char d = delimiter_of(cfg);
    std::string text = std::string("row_id") + d + "weight\n";
    for (std::size_t r = 0; r < study.size(); ++r) {
      text += std::to_string(study[r]) + d + format_double(cw.w(static_cast<Eigen::Index>(r))) + "\n";
    }
    write_file(o.weights_out, text);
  }
  Json artifact = artifact_head("weights", cfg);
  artifact["dataset"] = dataset_json(data);
  artifact["calibration"] = report_json(cw, target);
  artifact["balance"] = target_sample_exists ? report_json(smd_report(data, cw.w, estimand, "entropy_balance"))
                                             : Json(nullptr);
  const CalibratedEstimate ce = calibrated_estimate(data, cw.w, empirical_arm_propensity(data));
  artifact["calibrated_estimate"] = Json{{"psi", std::vector<double>(ce.psi.data(), ce.psi.data() + ce.psi.size())},
                                         {"contrasts", contrasts_json(ce.contrasts)}};
  emit(o, artifact, out);
  return kOk;
}

int run_diagnose(Json& cfg, const Outputs& o, std::ostream& out, std::ostream& err) {
  const Dataset data = load(cfg);
  const Estimand estimand = estimand_from_string(get<std::string>(cfg, "estimand"));
  const NuisanceConfig nc = nuisance_of(cfg, o.threads);
  log(o, err, "fitting nuisances on " + std::to_string(data.size()) + " rows");
  const NuisanceFits fits = fit_nuisances(data, nc);

  Json artifact = artifact_head("diagnose", cfg);
  artifact["dataset"] = dataset_json(data);
  std::string table = "covariate,scheme,smd\n";
  const bool has_target = data.num_external() > 0;
  if (has_target) {
    const BalanceReport balance = smd_report(data, selection_weights(data, fits, estimand), estimand, "selection");
    for (const auto& e : balance.entries) {
      if (e.smd_unweighted) table += e.covariate + ",none," + format_double(*e.smd_unweighted) + "\n";
      if (e.smd_weighted) table += e.covariate + ",selection," + format_double(*e.smd_weighted) + "\n";
    }
    artifact["balance"] = report_json(balance);
  } else {
    artifact["balance"] = nullptr;
  }
  OverlapThresholds thresholds{fits.trim.lo, fits.trim.hi, get<int>(cfg, "bins")};
  artifact["overlap"] = report_json(overlap_report(data, fits, thresholds));
  const int arm = get<int>(cfg, "arm");
  const int reference = get<int>(cfg, "reference");
  artifact["heterogeneity"] = Json(report_json(heterogeneity_test(data, fits, arm, reference)));
  artifact["heterogeneity"]["arm"] = arm;
  artifact["heterogeneity"]["reference"] = reference;
  if (const auto column = get_optional(cfg, "stratify")) {
    const auto& names = data.covariate_names();
    const auto it = std::find(names.begin(), names.end(), *column);
    if (it == names.end()) throw ConfigError("InvalidColumn", "stratify column '" + *column + "' is not a covariate");
    const auto dist = stratify(data, fits, static_cast<std::size_t>(it - names.begin()), arm, reference);
    artifact["bias_decomposition"] = report_json(dist, bias_decomposition(dist));
    artifact["bias_decomposition"]["column"] = *column;
  } else {
    artifact["bias_decomposition"] = nullptr;
  }
  artifact["notes"] = Json::array({kTransportCaveat});
  emit(o, artifact, out);
  if (!o.table.empty()) write_file(o.table, table);
  return kOk;
}

int run_simulate(Json& cfg, const Outputs& o, std::ostream& out, std::ostream& err) {
  const auto scenario = get<std::string>(cfg, "scenario");
  const auto n = get<std::int64_t>(cfg, "n");
  const auto reps = get<std::int64_t>(cfg, "reps");
  if (n < 10) throw ConfigError("InvalidConfig", "field 'n' must be >= 10");
  if (reps < 1) throw ConfigError("InvalidConfig", "field 'reps' must be >= 1");
  std::vector<ScenarioSpec> specs;
  const std::vector<std::string> names =
      scenario == "all" ? std::vector<std::string>{"ll", "ln", "nl", "nn"} : std::vector<std::string>{scenario};
  for (const auto& name : names) specs.push_back(ScenarioSpec::named(name, static_cast<std::size_t>(n)));
  std::vector<SimEstimator> estimators;
  for (const auto& e : get<std::vector<std::string>>(cfg, "estimators")) estimators.push_back(sim_estimator_from_string(e));

  StudyOptions options;
  options.nuisance = nuisance_of(cfg, 1);
  options.ci_level = get<double>(cfg, "ci_level");
  options.threads = o.threads;
  options.bootstrap_replicates = get<int>(cfg, "B");
  log(o, err, "running " + std::to_string(reps) + " replications per scenario");
  const SimulationReport report = run_study(specs, estimators, static_cast<std::size_t>(reps),
                                            get<std::uint64_t>(cfg, "seed"), options);
  Json artifact = artifact_head("simulate", cfg);
  artifact["report"] = report_json(report);
  emit(o, artifact, out);
  if (!o.table.empty()) write_file(o.table, long_table(report));
  if (!o.timing_out.empty()) {
    Json timing = Json::array();
    for (const auto& s : report.scenarios) {
      for (const auto& c : s.cells) {
        timing.push_back(Json{{"scenario", s.spec.name},
                              {"estimator", to_string(c.estimator)},
                              {"mean_runtime_seconds", c.mean_runtime_seconds}});
      }
    }
    write_file(o.timing_out, dump(timing));
  }
  return kOk;
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::config: return kConfigError;
    case ErrorCategory::data: return kDataError;
    case ErrorCategory::numerical: return kNumericalError;
  }
  return kNumericalError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Treatment effects for target populations under covariate shift"};
  app.require_subcommand(1);
  Outputs outputs;

  struct Spec {
    const char* name;
    const char* help;
  };
  const std::vector<Spec> specs = {
      {"estimate", "estimate per-arm means and contrasts in a target population"},
      {"weights", "entropy-balancing calibration weights for the study rows"},
      {"diagnose", "covariate balance, overlap, heterogeneity and bias decomposition"},
      {"simulate", "Monte Carlo study over the built-in scenarios"},
  };
  std::vector<Command> commands(specs.size());
  for (std::size_t c = 0; c < specs.size(); ++c) {
    Command& cmd = commands[c];
    cmd.name = specs[c].name;
    cmd.app = app.add_subcommand(cmd.name, specs[c].help);
    cmd.app->add_option("--config", outputs.config, "JSON config file; flags take precedence");
    cmd.app->add_option("--out", outputs.out, "output JSON path (default: stdout)");
    cmd.app->add_option("--threads", outputs.threads, "worker threads (default: COVSHIFT_THREADS or all cores)");
    cmd.app->add_flag("-v,--verbose", outputs.verbose, "progress messages on stderr");
    if (cmd.name == "estimate") {
      cmd.app->add_option("--audit", outputs.audit, "write cross-fitted nuisance values here");
    }
    if (cmd.name == "estimate" || cmd.name == "simulate") {
      cmd.app->add_option("--timing-out", outputs.timing_out, "write wall-clock timings here");
    }
    if (cmd.name == "weights") cmd.app->add_option("--weights-out", outputs.weights_out, "write row_id,weight here");
    if (cmd.name == "diagnose" || cmd.name == "simulate") {
      cmd.app->add_option("--table", outputs.table, "write the long-format table here");
    }
    for (const auto& k : keys_for(cmd.name)) {
      const Key& info = key_info(k);
      if (info.type == Type::boolean) {
        cmd.flags[k] = false;
        cmd.app->add_flag(flag_name(k), cmd.flags[k], info.help);
      } else {
        cmd.texts[k] = "";
        cmd.app->add_option(flag_name(k), cmd.texts[k], info.help);
      }
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (outputs.threads <= 0) outputs.threads = default_thread_count();
    for (auto& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      Json cfg = resolve(cmd, outputs);
      if (cmd.name == "estimate") return run_estimate(cfg, outputs, out, err);
      if (cmd.name == "weights") return run_weights(cfg, outputs, out, err);
      if (cmd.name == "diagnose") return run_diagnose(cfg, outputs, out, err);
      return run_simulate(cfg, outputs, out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const nlohmann::json::exception& e) {
    err << "error: InvalidConfig: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}

}  // namespace covshift::cli
