#pragma once

#include <stdexcept>
#include <string>

namespace slm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input failed a structural or semantic check (bad ids, wrong story
/// length, NaN rows, missing config keys). CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Binary file has the wrong magic, version or header fields.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// File ended before the header-declared payload was read.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's domain (empty pool, k out of range,
/// insufficient distractors).
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace slm
