#pragma once

#include <stdexcept>
#include <string>

namespace cst {

// Invalid configuration, dimension mismatch or unusable input. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file content; carries the offending line when known.
class FormatError : public ConfigError {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : ConfigError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// NaN/Inf encountered during training. Maps to exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cst
