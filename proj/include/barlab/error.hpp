#pragma once

#include <stdexcept>
#include <string>

namespace barlab {

/// Rejected input: a precondition or a domain invariant does not hold.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A modelling hypothesis the requested computation relies on is violated.
/// `hypothesis()` is the short tag, e.g. "H2".
class HypothesisViolation : public InvalidArgument {
 public:
  HypothesisViolation(std::string hypothesis, const std::string& what)
      : InvalidArgument("hypothesis (" + hypothesis + ") violated: " + what),
        hypothesis_(std::move(hypothesis)) {}

  const std::string& hypothesis() const noexcept { return hypothesis_; }

 private:
  std::string hypothesis_;
};

/// Raised when a quantity needs an estimate that was marked unavailable.
class UnavailableEstimate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace barlab
