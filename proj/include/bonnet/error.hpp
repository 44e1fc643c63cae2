// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace bonnet {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or layouts that an operation cannot accept.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the mathematical domain of an operation (negative
/// frequency, label >= C, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Backward requested through an op that has no registered derivative.
class UnsupportedOpError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary container problems: bad magic, unknown version, checksum mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Invalid parameters passed to an operation at runtime (segment size,
/// decay, keep-probability, ...). Configuration *files* use ConfigError.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace bonnet
