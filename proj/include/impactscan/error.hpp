#pragma once

#include <stdexcept>
#include <string>

namespace impactscan {

// Rejected input: a field, a precondition or a file that does not validate.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
  ValidationError(const std::string& field, const std::string& msg)
      : std::invalid_argument(field + ": " + msg), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A request that is well formed but not allowed in the current state
// (illegal review transition, config fingerprint mismatch, missing pipeline outputs).
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace impactscan
