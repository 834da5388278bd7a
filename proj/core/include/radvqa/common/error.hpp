#pragma once

#include <stdexcept>
#include <string>

namespace radvqa {

/// Base exception for every recoverable failure raised by the toolkit.
/// `code` is a stable machine-readable identifier (e.g. "missing_index").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Bad user-supplied arguments or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a schema or invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or sequence shape mismatch.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape_mismatch", message) {}
};

/// A text-generation client failed after its retries were exhausted.
class ClientError : public Error {
 public:
  using Error::Error;
};

}  // namespace radvqa
