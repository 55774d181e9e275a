#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace covshift {

// Observed data (X, S, S*A, S*Y). Treatment and outcome are only meaningful
// for study rows (S = 1); for external rows they are stored as absent.
//
// A Dataset is immutable once constructed. The constructor enforces the
// per-row invariants (finite covariates, treatment in range, finite outcome
// on study rows). Sample-level conditions such as every arm being observed
// are reported by validate_selection_pattern() so that incomplete datasets
// can still be inspected.
class Dataset {
 public:
  // `treatment` and `outcome` must have one entry per row. Entries on rows
  // with selection == 0 are discarded (and counted in ignored_external_values).
  // `num_arms` declares K + 1; when absent it is inferred as max(A) + 1.
  Dataset(Eigen::MatrixXd covariates, std::vector<std::uint8_t> selection,
          std::vector<std::optional<int>> treatment,
          std::vector<std::optional<double>> outcome,
          std::optional<int> num_arms = std::nullopt,
          std::vector<std::string> covariate_names = {},
          std::vector<std::string> arm_labels = {});

  std::size_t size() const noexcept { return selection_.size(); }
  std::size_t num_covariates() const noexcept {
    return static_cast<std::size_t>(covariates_.cols());
  }
  int num_arms() const noexcept { return num_arms_; }
  // K in the {0..K} treatment coding.
  int max_arm() const noexcept { return num_arms_ - 1; }

  const Eigen::MatrixXd& covariates() const noexcept { return covariates_; }
  const std::vector<std::uint8_t>& selection() const noexcept { return selection_; }
  bool in_study(std::size_t row) const { return selection_[row] != 0; }

  std::optional<int> treatment(std::size_t row) const { return treatment_[row]; }
  std::optional<double> outcome(std::size_t row) const { return outcome_[row]; }
  // True iff row is a study row assigned to `arm`.
  bool has_arm(std::size_t row, int arm) const {
    return treatment_[row].has_value() && *treatment_[row] == arm;
  }

  const std::vector<std::string>& covariate_names() const noexcept {
    return covariate_names_;
  }
  const std::vector<std::string>& arm_labels() const noexcept { return arm_labels_; }

  std::size_t num_study() const noexcept { return num_study_; }
  std::size_t num_external() const noexcept { return size() - num_study_; }
  std::size_t ignored_external_values() const noexcept { return ignored_external_; }

  // Row indices of the study (S = 1) and external (S = 0) samples.
  std::vector<std::size_t> study_rows() const;
  std::vector<std::size_t> external_rows() const;

  // New dataset made of the given rows (repeats allowed), keeping arm count
  // and labels.
  Dataset subset(std::span<const std::size_t> rows) const;

 private:
  Eigen::MatrixXd covariates_;
  std::vector<std::uint8_t> selection_;
  std::vector<std::optional<int>> treatment_;
  std::vector<std::optional<double>> outcome_;
  int num_arms_ = 0;
  std::vector<std::string> covariate_names_;
  std::vector<std::string> arm_labels_;
  std::size_t num_study_ = 0;
  std::size_t ignored_external_ = 0;
};

enum class SampleKind { study, external, overall };

// Row selector over a Dataset. Holds a reference; the Dataset must outlive it.
class SampleView {
 public:
  SampleView(const Dataset& parent, SampleKind kind);

  const Dataset& parent() const noexcept { return *parent_; }
  SampleKind kind() const noexcept { return kind_; }
  const std::vector<std::size_t>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }

 private:
  const Dataset* parent_;
  SampleKind kind_;
  std::vector<std::size_t> rows_;
};

struct ValidationReport {
  bool passed = true;
  std::size_t num_rows = 0;
  std::size_t num_study = 0;
  std::size_t num_external = 0;
  std::vector<std::size_t> arm_counts;  // among study rows
  std::vector<std::string> failures;    // e.g. "EmptyArm(1)"
};

ValidationReport validate_selection_pattern(const Dataset& data);

// Throws DataError carrying the first failure name when the report fails.
void require_valid(const Dataset& data);

// Column-role mapping for delimiter-separated input.
struct Schema {
  std::vector<std::string> covariates;
  std::string treatment;
  std::string outcome;
  std::string selection;
  char delimiter = ',';
  std::optional<int> num_arms;
};

// Reads a header-first delimited text file. Empty cells are absent values.
// Numbers are parsed with std::from_chars (no locale). The result is
// validated with require_valid().
Dataset load_dataset(const std::string& path, const Schema& schema);

// Trimmed column names from the header row.
std::vector<std::string> read_header(const std::string& path, char delimiter = ',');

// Writes the dataset using the schema's column names. Doubles are written
// in shortest round-trip form so reloading reproduces the values exactly.
void write_dataset(const std::string& path, const Dataset& data, const Schema& schema);

}  // namespace covshift
