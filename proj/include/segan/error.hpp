#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace segan {

/// Base class for every error raised by the kit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or malformed network/loss specifications.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed files, manifests and configs.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Unknown keys or unparsable values in a run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed SEGV container; carries the byte offset where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Non-finite values in a forward pass or a diverged training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace segan
