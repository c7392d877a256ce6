// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fodiff {

/// Error categories surfaced by the CLI as distinct exit codes.
enum class ErrorCategory { invalid_argument, format, io, config, numeric, internal };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

private:
  ErrorCategory category_;
};

class InvalidArgument : public Error {
public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorCategory::invalid_argument, what) {}
};

/// Malformed container or text file; `offset` is the byte position of the fault.
class FormatError : public Error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(ErrorCategory::format, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

class VersionMismatch : public FormatError {
public:
  VersionMismatch(unsigned found, unsigned expected, std::uint64_t offset)
      : FormatError("unsupported format version " + std::to_string(found) + " (expected " +
                        std::to_string(expected) + ")",
                    offset) {}
};

class IoError : public Error {
public:
  IoError(const std::string& what, const std::string& path)
      : Error(ErrorCategory::io, what + ": " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

class InternalError : public Error {
public:
  explicit InternalError(const std::string& what) : Error(ErrorCategory::internal, what) {}
};

} // namespace fodiff
