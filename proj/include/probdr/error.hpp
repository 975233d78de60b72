#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace probdr {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class NotPsdError : public Error {
 public:
  using Error::Error;
};

class InsufficientRank : public Error {
 public:
  using Error::Error;
};

class DegenerateRow : public Error {
 public:
  DegenerateRow(const std::string& what, std::size_t row)
      : Error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Malformed or inconsistent on-disk data, and filesystem failures.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class ConsistencyError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, long iteration, double loss)
      : Error(what), iteration_(iteration), loss_(loss) {}
  long iteration() const noexcept { return iteration_; }
  double loss() const noexcept { return loss_; }

 private:
  long iteration_;
  double loss_;
};

}  // namespace probdr
