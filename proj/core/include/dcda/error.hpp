#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcda {

// Base for every error raised by the library. `kind()` is a stable
// machine-readable tag used by the CLI error reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& m) : Error("generation", m) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& m) : Error("invariant", m) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& m, std::size_t byte_offset)
      : Error("parse", m + " (at byte " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class VersionError : public Error {
 public:
  explicit VersionError(const std::string& m) : Error("version", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& m) : Error("divergence", m) {}
};

}  // namespace dcda
