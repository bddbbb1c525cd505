#pragma once

#include <stdexcept>
#include <string>

namespace rlstm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed (token index out of range, misaligned files, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Stack or run configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A brute-force reference procedure was asked to exceed its budget.
class OracleError : public Error {
 public:
  using Error::Error;
};

}  // namespace rlstm
