#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dgm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced at an op boundary, or a non-finite update.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed files: IDX payloads, checkpoints.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Precondition violated by an argument that is not a shape.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Configuration validation failure; carries every violated field.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

}  // namespace dgm
