// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace afa {

// Violated precondition or protocol rule (bad shapes, out-of-order tasks,
// updates to frozen parameters). The CLI maps this to exit code 1.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// Filesystem or stream failure. The CLI maps this and its subclasses to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& what) : IoError(what) {}
};

class ChecksumError : public FormatError {
 public:
  explicit ChecksumError(const std::string& what) : FormatError(what) {}
};

class VersionError : public FormatError {
 public:
  explicit VersionError(const std::string& what) : FormatError(what) {}
};

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ContractError(message);
}

}  // namespace afa
