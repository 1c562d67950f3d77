#pragma once

#include <stdexcept>
#include <string>

namespace cfrl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or vector shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation was called with inputs violating its precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-finite values, divergence, failed bracketing.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Evidence cannot be explained by any noise value of the model.
class SupportError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A file or artifact is missing, unreadable or malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace cfrl
