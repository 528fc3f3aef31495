#pragma once

#include <stdexcept>
#include <string>

namespace glmpo2pls {

// Base class; every error raised by the library derives from it so the CLI
// can map error kinds to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent dimensions, out-of-range arguments, malformed parameters.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-PD matrices, non-finite likelihoods, variance floor breaches.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Quadrature grid larger than the configured point budget.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Unreadable/unwritable files, malformed CSV or model JSON.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace glmpo2pls
