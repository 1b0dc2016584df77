// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace retinev {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (shape, range, finiteness).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. The message starts with the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace retinev
