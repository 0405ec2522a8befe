// Copyright 2026 The iotlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

// Error types are precision independent, so they live outside the inline
// precision namespace and can be caught uniformly by the CLI.
namespace iotlm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range index (token id, row id, class id).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Violated call contract (non-scalar backward, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: unknown task/modality, bad hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Sequence does not fit in the model context.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid payload contents (non-finite values, wrong sizes).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or byte stream. `line` is 1-based, 0 when not line oriented.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Training produced a non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace iotlm
