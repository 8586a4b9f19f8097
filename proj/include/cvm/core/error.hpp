// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cvm {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in an invalid state (e.g. backward on a consumed tape).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain (nonpositive depth, inverted range).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A value type's invariant does not hold (e.g. non-orthonormal rotation).
class InvariantError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (labels out of range, bad manifest).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint does not match the model it is loaded into.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or parameter during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvm
