#pragma once

#include <stdexcept>
#include <string>

namespace sfbnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not line up. The message names the operation and
/// the offending axes.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const std::string& detail)
      : Error(op + ": " + detail), op_(op) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Invalid model, layer or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an API precondition (non-scalar loss, bad window size, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-range input data (labels, files, geometry).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sfbnet
