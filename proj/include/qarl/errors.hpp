#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qarl {

// Malformed configuration, spec, or file content. The CLI maps this to exit 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A model invariant does not hold (probabilities, discount, finiteness).
class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class RangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterative solver ran out of iterations. Carries the last residual and,
// when raised from inside a sweep, the temperature or state that failed.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace qarl
