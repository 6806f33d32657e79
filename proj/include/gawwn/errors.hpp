#pragma once

#include <stdexcept>
#include <string>

namespace gawwn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Degenerate boxes, negative output extents and similar geometric problems.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// API used in a way its contract forbids (non-scalar backward, empty pools, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input (characters outside the alphabet, bad request fields).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A forward operation produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or truncated serialized data; the message carries the byte offset.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Missing files, unreadable directories, malformed dataset content.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gawwn
