#pragma once

#include <stdexcept>
#include <string>

namespace tale {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files (TSV/JSONL/config syntax).
struct ParseError : Error {
  using Error::Error;
};

// Tensor shape or rank mismatch; message carries both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

// Bad configuration value, unknown key, or invalid flag combination.
struct ConfigError : Error {
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (e.g. finetune before pretrain).
struct StateError : Error {
  using Error::Error;
};

// Inconsistent data: duplicates, ordering violations, size constraints.
struct DataError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Metric undefined for the given inputs (empty set, single-class labels).
struct MetricError : Error {
  using Error::Error;
};

// Numerical failure during optimization (NaN gradients, divergence).
struct TrainingError : Error {
  using Error::Error;
};

// API contract violation (non-scalar loss, double flush).
struct ContractError : Error {
  using Error::Error;
};

}  // namespace tale
