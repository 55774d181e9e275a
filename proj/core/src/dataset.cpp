#include "covshift/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "covshift/error.hpp"

namespace covshift {

namespace {

std::string row_col(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row) + ", column " + std::to_string(col);
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == delimiter) {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("ParseError", "not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::optional<int> parse_int(std::string_view text) {
  auto v = parse_double(text);
  if (!v) return std::nullopt;
  if (!std::isfinite(*v) || std::floor(*v) != *v) {
    throw DataError("ParseError", "not an integer: '" + std::string(trim(text)) + "'");
  }
  return static_cast<int>(*v);
}

void write_double(std::ostream& os, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, ptr - buf);
}

}  // namespace

Dataset::Dataset(Eigen::MatrixXd covariates, std::vector<std::uint8_t> selection,
                 std::vector<std::optional<int>> treatment,
                 std::vector<std::optional<double>> outcome,
                 std::optional<int> num_arms, std::vector<std::string> covariate_names,
                 std::vector<std::string> arm_labels)
    : covariates_(std::move(covariates)),
      selection_(std::move(selection)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)),
      covariate_names_(std::move(covariate_names)),
      arm_labels_(std::move(arm_labels)) {
  const std::size_t n = selection_.size();
  if (static_cast<std::size_t>(covariates_.rows()) != n || treatment_.size() != n ||
      outcome_.size() != n) {
    throw DataError("DimensionMismatch", "covariates, selection, treatment and outcome "
                                         "must have the same number of rows");
  }
  if (covariate_names_.empty()) {
    for (Eigen::Index j = 0; j < covariates_.cols(); ++j) {
      covariate_names_.push_back("x" + std::to_string(j + 1));
    }
  } else if (covariate_names_.size() != static_cast<std::size_t>(covariates_.cols())) {
    throw DataError("DimensionMismatch", "covariate name count does not match columns");
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < covariates_.cols(); ++j) {
      if (!std::isfinite(covariates_(static_cast<Eigen::Index>(i), j))) {
        throw DataError("NonFiniteCovariate", row_col(i, static_cast<std::size_t>(j)));
      }
    }
    if (selection_[i] > 1) {
      throw DataError("InvalidSelection", "row " + std::to_string(i) + " has S not in {0,1}");
    }
    if (selection_[i] == 0) {
      ignored_external_ += static_cast<std::size_t>(treatment_[i].has_value()) + outcome_[i].has_value();
      treatment_[i].reset();
      outcome_[i].reset();
      continue;
    }
    ++num_study_;
    if (!treatment_[i]) {
      throw DataError("MissingTreatment", "study row " + std::to_string(i));
    }
    if (!outcome_[i] || !std::isfinite(*outcome_[i])) {
      throw DataError("MissingOutcome", "study row " + std::to_string(i));
    }
    if (*treatment_[i] < 0) {
      throw DataError("TreatmentOutOfRange", "row " + std::to_string(i));
    }
  }

  int observed_max = -1;
  for (const auto& a : treatment_) {
    if (a) observed_max = std::max(observed_max, *a);
  }
  if (num_arms) {
    if (*num_arms < 1) throw DataError("InvalidArity", "declared arm count must be >= 1");
    num_arms_ = *num_arms;
    for (std::size_t i = 0; i < n; ++i) {
      if (treatment_[i] && *treatment_[i] >= num_arms_) {
        throw DataError("TreatmentOutOfRange",
                        "row " + std::to_string(i) + " has arm " +
                            std::to_string(*treatment_[i]) + " but only " +
                            std::to_string(num_arms_) + " arms declared");
      }
    }
  } else {
    num_arms_ = std::max(observed_max + 1, 1);
  }
  if (!arm_labels_.empty() && arm_labels_.size() != static_cast<std::size_t>(num_arms_)) {
    throw DataError("DimensionMismatch", "arm label count does not match arm count");
  }
}

std::vector<std::size_t> Dataset::study_rows() const {
  std::vector<std::size_t> rows;
  rows.reserve(num_study_);
  for (std::size_t i = 0; i < size(); ++i) {
    if (selection_[i]) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> Dataset::external_rows() const {
  std::vector<std::size_t> rows;
  rows.reserve(num_external());
  for (std::size_t i = 0; i < size(); ++i) {
    if (!selection_[i]) rows.push_back(i);
  }
  return rows;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), covariates_.cols());
  std::vector<std::uint8_t> s(rows.size());
  std::vector<std::optional<int>> a(rows.size());
  std::vector<std::optional<double>> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = rows[r];
    x.row(static_cast<Eigen::Index>(r)) = covariates_.row(static_cast<Eigen::Index>(i));
    s[r] = selection_[i];
    a[r] = treatment_[i];
    y[r] = outcome_[i];
  }
  return Dataset(std::move(x), std::move(s), std::move(a), std::move(y), num_arms_,
                 covariate_names_, arm_labels_);
}

SampleView::SampleView(const Dataset& parent, SampleKind kind)
    : parent_(&parent), kind_(kind) {
  switch (kind) {
    case SampleKind::study:
      rows_ = parent.study_rows();
      break;
    case SampleKind::external:
      rows_ = parent.external_rows();
      break;
    case SampleKind::overall:
      rows_.resize(parent.size());
      for (std::size_t i = 0; i < rows_.size(); ++i) rows_[i] = i;
      break;
  }
}

ValidationReport validate_selection_pattern(const Dataset& data) {
  ValidationReport report;
  report.num_rows = data.size();
  report.num_study = data.num_study();
  report.num_external = data.num_external();
  report.arm_counts.assign(static_cast<std::size_t>(data.num_arms()), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (auto a = data.treatment(i)) ++report.arm_counts[static_cast<std::size_t>(*a)];
  }
  if (data.size() < 2) report.failures.push_back("TooFewRows(" + std::to_string(data.size()) + ")");
  if (data.num_study() == 0) report.failures.push_back("NoStudyRows");
  for (std::size_t a = 0; a < report.arm_counts.size(); ++a) {
    if (report.arm_counts[a] == 0) report.failures.push_back("EmptyArm(" + std::to_string(a) + ")");
  }
  report.passed = report.failures.empty();
  return report;
}

void require_valid(const Dataset& data) {
  const auto report = validate_selection_pattern(data);
  if (report.passed) return;
  const auto& first = report.failures.front();
  const auto paren = first.find('(');
  throw DataError(first.substr(0, paren), first);
}

Dataset load_dataset(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("FileNotFound", path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("EmptyFile", path);
  const auto header = split_line(line, schema.delimiter);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index[std::string(trim(header[j]))] = j;

  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw DataError("MissingColumn", name);
    return it->second;
  };
  if (schema.covariates.empty()) throw ConfigError("MissingColumn", "no covariates declared");
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c));
  const auto s_col = column(schema.selection);
  const auto a_col = column(schema.treatment);
  const auto y_col = column(schema.outcome);

  std::vector<std::vector<double>> x_rows;
  std::vector<std::uint8_t> s;
  std::vector<std::optional<int>> a;
  std::vector<std::optional<double>> y;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, schema.delimiter);
    if (cells.size() != header.size()) {
      throw DataError("RaggedRow", "row " + std::to_string(row) + " has " +
                                       std::to_string(cells.size()) + " cells, header has " +
                                       std::to_string(header.size()));
    }
    std::vector<double> xr(cov_cols.size());
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      auto v = parse_double(cells[cov_cols[j]]);
      if (!v || !std::isfinite(*v)) throw DataError("NonFiniteCovariate", row_col(row, j));
      xr[j] = *v;
    }
    auto sv = parse_int(cells[s_col]);
    if (!sv || (*sv != 0 && *sv != 1)) {
      throw DataError("InvalidSelection", "row " + std::to_string(row));
    }
    x_rows.push_back(std::move(xr));
    s.push_back(static_cast<std::uint8_t>(*sv));
    a.push_back(parse_int(cells[a_col]));
    y.push_back(parse_double(cells[y_col]));
    ++row;
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(x_rows.size()),
                    static_cast<Eigen::Index>(cov_cols.size()));
  for (std::size_t i = 0; i < x_rows.size(); ++i) {
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x_rows[i][j];
    }
  }
  Dataset data(std::move(x), std::move(s), std::move(a), std::move(y), schema.num_arms,
               schema.covariates);
  require_valid(data);
  return data;
}

std::vector<std::string> read_header(const std::string& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw ConfigError("FileNotFound", path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("EmptyFile", path);
  std::vector<std::string> names;
  for (auto cell : split_line(line, delimiter)) names.emplace_back(trim(cell));
  return names;
}

void write_dataset(const std::string& path, const Dataset& data, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw ConfigError("FileNotWritable", path);
  const char d = schema.delimiter;
  for (const auto& c : schema.covariates) out << c << d;
  out << schema.selection << d << schema.treatment << d << schema.outcome << '\n';
  const auto& x = data.covariates();
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      write_double(out, x(static_cast<Eigen::Index>(i), j));
      out << d;
    }
    out << static_cast<int>(data.selection()[i]) << d;
    if (auto a = data.treatment(i)) out << *a;
    out << d;
    if (auto y = data.outcome(i)) write_double(out, *y);
    out << '\n';
  }
}

}  // namespace covshift
