#pragma once

#include <stdexcept>
#include <string>

namespace mmfgl {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Graph invariant violations: out-of-range ids, duplicate node ids, missing labels.
class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& msg) : Error(msg) {}
};

// Bundle I/O: a required file is absent.
class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& msg) : Error(msg) {}
};

// Bundle I/O: metadata and payload disagree on shape.
class DimensionMismatchError : public Error {
 public:
  explicit DimensionMismatchError(const std::string& msg) : Error(msg) {}
};

// Bundle I/O: payload shorter than the declared shape.
class TruncatedPayloadError : public Error {
 public:
  explicit TruncatedPayloadError(const std::string& msg) : Error(msg) {}
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Non-finite values where finite ones are required (losses, gradients).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace mmfgl
