#pragma once

#include <stdexcept>
#include <string>

namespace shakelab {

// Root of every error thrown by the library. Callers that only need to
// distinguish "our" failures from std ones can catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model/run configuration or incompatible tensor shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API called out of order (backward before forward, beta before alpha, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad caller-provided data such as an out-of-range label.
class InputError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by a forward operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset or checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, long step)
      : Error(what), epoch_(epoch), step_(step) {}

  int epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

 private:
  int epoch_;
  long step_;
};

// Correlation requested for a stream with zero variance.
class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

}  // namespace shakelab
