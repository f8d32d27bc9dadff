#pragma once

#include <stdexcept>
#include <string>

namespace avdis {

// Base of every error raised by the library. The CLI maps the concrete type
// onto an exit code (see tools/avdis.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible array or batch shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or unknown name.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, malformed or inconsistent data (files, splits, empty sets).
class DataError : public Error {
 public:
  using Error::Error;
};

// Class label outside the declared label space.
class LabelError : public DataError {
 public:
  using DataError::DataError;
};

// Argument outside a function's mathematical domain (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or singular systems encountered during computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace avdis
