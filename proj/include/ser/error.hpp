#pragma once

#include <stdexcept>
#include <string>

namespace ser {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed container or record (bad magic, truncated header, bad CSV row).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input using a codec or layout we do not decode.
class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad data: labels out of range, non-finite features, split deficits.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class SplitError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingError : public DataError {
 public:
  using DataError::DataError;
};

class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared, or a numerical check failed its tolerance.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ser
