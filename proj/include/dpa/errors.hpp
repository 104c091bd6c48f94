#pragma once

#include <stdexcept>
#include <string>

namespace dpa {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or resolutions that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument outside of shape checks (ranges, counts, indices).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration. Carries the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Dataset / manifest / image problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Serialized artifact that cannot be read back.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Non-finite loss or score.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpa
