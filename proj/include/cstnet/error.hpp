#pragma once

#include <stdexcept>
#include <string>

namespace cstnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents are invalid or incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied values out of range (labels, split sizes, config keys).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its bytes do not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file or directory could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite or exploding loss.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A covariance matrix is too close to singular for whitening.
class ConditioningError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace cstnet
