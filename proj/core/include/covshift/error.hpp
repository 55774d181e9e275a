#pragma once

#include <stdexcept>
#include <string>

namespace covshift {

// Failure category. The CLI maps these onto its exit codes.
enum class ErrorCategory { config, data, numerical };

// Base error carrying a stable machine-readable name such as
// "TreatmentOutOfRange" or "NonConvergence" next to the human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string name, const std::string& message)
      : std::runtime_error(name + ": " + message),
        category_(category),
        name_(std::move(name)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& name() const noexcept { return name_; }

 private:
  ErrorCategory category_;
  std::string name_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string name, const std::string& message)
      : Error(ErrorCategory::config, std::move(name), message) {}
};

class DataError : public Error {
 public:
  DataError(std::string name, const std::string& message)
      : Error(ErrorCategory::data, std::move(name), message) {}
};

class NumericalError : public Error {
 public:
  NumericalError(std::string name, const std::string& message)
      : Error(ErrorCategory::numerical, std::move(name), message) {}
};

}  // namespace covshift
