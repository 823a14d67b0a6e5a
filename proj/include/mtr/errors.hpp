#pragma once

#include <stdexcept>
#include <string>

namespace mtr {

// Exit codes used by the command-line runner.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kConfig; }
};

// Invalid configuration values, unknown keys, unsupported combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Shape or dimension mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Misuse of an API (non-scalar loss passed to backward, empty inputs, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Model in the wrong state for the requested operation.
class StateError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Everything that originates from input data: parsing, integrity, splitting.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kData; }
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, long row, long column)
      : DataError(what), row_(row), column_(column) {}
  long row() const { return row_; }
  long column() const { return column_; }

 private:
  long row_;
  long column_;
};

class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

// Dataset cannot support the task (too few classes, too few samples).
class TaskError : public DataError {
 public:
  using DataError::DataError;
};

class StratificationError : public DataError {
 public:
  using DataError::DataError;
};

// Arithmetic failures: division by zero in verification mode, non-finite
// activations, SVD failures, undefined metrics.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kDivergence; }
};

class MetricUndefinedError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Gradient oracle could not be evaluated deterministically.
class OracleInvalidError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, long epoch = -1, long step = -1)
      : NumericError(Format(what, epoch, step)), epoch_(epoch), step_(step) {}
  long epoch() const { return epoch_; }
  long step() const { return step_; }

 private:
  static std::string Format(const std::string& what, long epoch, long step) {
    if (epoch < 0) return what;
    return what + " (epoch " + std::to_string(epoch) + ", step " +
           std::to_string(step) + ")";
  }
  long epoch_;
  long step_;
};

}  // namespace mtr
