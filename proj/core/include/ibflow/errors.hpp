#pragma once

#include <stdexcept>
#include <string>

namespace ibflow {

// Invalid argument values or inconsistent dimensions.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation does not hold.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Factorization failure or a non-finite intermediate.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularSystemError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DuplicateSampleError : public SingularSystemError {
 public:
  using SingularSystemError::SingularSystemError;
};

// sinh/cosh argument outside the binary64 range.
class OverflowGuardError : public NumericError {
 public:
  OverflowGuardError(const std::string& what, long index = -1)
      : NumericError(what), index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

// Non-finite state during gradient-flow integration.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

// A configuration outside the scope of the theorem it is meant to exercise.
class ScopeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace ibflow
