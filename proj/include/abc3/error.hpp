#pragma once

#include <stdexcept>
#include <string>

namespace abc3 {

// Error categories. The CLI maps InputError/ConfigError to exit code 1 and
// NumericalError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or mismatched inputs (dimensions, CSV cells, lengths).
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid parameters or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Factorization failures, non-positive pivots, excessive negative variance.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in a state where it is undefined (e.g. empty candidate set).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace abc3
