#pragma once

#include <stdexcept>
#include <string>

namespace dgcnn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

/// Argument outside its documented domain.
struct ParameterError : Error {
  using Error::Error;
};

/// NaN/Inf produced or encountered where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

/// Index outside the valid range of its container.
struct IndexError : Error {
  using Error::Error;
};

/// Malformed or inconsistent input data.
struct DataError : Error {
  using Error::Error;
};

/// File-format parse failure; messages carry a line number.
struct ParseError : DataError {
  using DataError::DataError;
};

/// API contract violation (caller bug rather than bad data).
struct ContractError : Error {
  using Error::Error;
};

/// Checkpoint cannot be applied to the given model.
struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace dgcnn
