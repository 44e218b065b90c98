#pragma once

#include <stdexcept>
#include <string>

namespace memdiff {

// Invalid argument or violated precondition.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Structurally valid input that is degenerate for the requested statistic
// (e.g. a zero-variance vector handed to a correlation).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite value or numeric range failure. `step` carries the integration
// or epoch index when one applies, -1 otherwise.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg, long step = -1)
      : std::runtime_error(step >= 0 ? msg + " (step " + std::to_string(step) + ")" : msg),
        step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace memdiff
