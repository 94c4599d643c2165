#pragma once

#include <stdexcept>
#include <string>

namespace slqa {

// Base class for everything this library throws.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank disagreement between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// Inconsistent or invalid configuration (hyperparameters, widths, axes).
struct ConfigError : Error {
  using Error::Error;
};

// Bad input data: offset mismatches, coverage gaps, out-of-range gold spans.
struct DataError : Error {
  using Error::Error;
};

// Token id outside the embedding table.
struct VocabError : Error {
  using Error::Error;
};

// Malformed file content (JSON, checkpoints, vector files).
struct ParseError : Error {
  using Error::Error;
};

// NaN/Inf where a finite value is required.
struct NumericError : Error {
  using Error::Error;
};

// API misuse: violated preconditions that are not data-dependent.
struct ContractError : Error {
  using Error::Error;
};

// Structurally valid but empty/degenerate input (empty sequence, fully
// masked softmax fiber, zero-length passage).
struct DegenerateInputError : Error {
  using Error::Error;
};

}  // namespace slqa
