// Copyright (C) 2026 The hkp Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace hkp {

/// Inconsistent shapes, channel counts or missing configuration fields.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's input contract (e.g. wrong input shape).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed annotation / prediction records.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally invalid weight archive.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weight archive whose checksum does not match its content.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Unreadable or inconsistent input data (images, prediction/gt mismatch).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hkp
