#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace maf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tensor dimension did not match what an operator required.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const std::string& dim, std::int64_t expected,
             std::int64_t actual)
      : Error(op + ": " + dim + " mismatch (expected " + std::to_string(expected) + ", got " +
              std::to_string(actual) + ")"),
        dim_(dim) {}
  ShapeError(const std::string& op, const std::string& message)
      : Error(op + ": " + message) {}

  const std::string& dim() const noexcept { return dim_; }

 private:
  std::string dim_;
};

/// Invalid configuration (bad kernel size, groups, unknown JSON key, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in a state that does not allow it (backward twice, fuse mid-training).
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced while checked mode is on.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed weight file.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::uint64_t offset)
      : Error(message + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace maf
