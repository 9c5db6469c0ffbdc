#pragma once

#include <stdexcept>
#include <string>

namespace dmmg {

/// Base for all library errors. `category()` is a stable machine-readable
/// tag ("dimension", "config", "contract", "numeric", "format", "degenerate",
/// "io"); the CLI prefixes its single-line error output with it.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error("dimension", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& m) : Error("degenerate", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace dmmg
