#pragma once

#include <stdexcept>
#include <string>

namespace geocell {

// Base class for all library errors. The CLI maps IoError to exit code 2
// and every other Error to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the supported domain (polar latitude, invalid band, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent user input.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Requested geometry does not intersect the available raster data.
class CoverageError : public Error {
 public:
  using Error::Error;
};

// Request exceeds a configured resource limit.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Tensor or image dimensions do not match the expected shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite value encountered during numerics.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Dataset too small for the requested operation.
class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Manifest contained no usable records.
class EmptyDatasetError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A loss row or column ended up with no active negatives.
class DegenerateBatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace geocell
