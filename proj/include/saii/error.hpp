#pragma once

#include <stdexcept>
#include <string>

namespace saii {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array shapes are incompatible or too small for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input values violate a domain requirement (e.g. non-positive impedance).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Configuration or schema validation failure. The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Training or solver produced non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not match the component it is paired with.
class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace saii
