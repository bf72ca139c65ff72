#pragma once

#include <stdexcept>
#include <string>

namespace todi {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank disagreements between tensor operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed numeric preconditions, NaN gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Softmax (or attention) asked to normalize a row with no admissible entries.
class DegenerateRowError : public NumericError {
 public:
  using DegenerateRowError::NumericError::NumericError;
};

// API misuse: double backward, training a frozen model, bad arguments.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Text/structure parsing failures; carries a byte offset when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t offset)
      : Error(msg + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit ParseError(const std::string& msg) : Error(msg), offset_(0) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Input uses a feature outside the supported subset (named in the message).
class UnsupportedFeatureError : public Error {
 public:
  using Error::Error;
};

// Bad or unknown configuration keys/values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing/corrupt files, serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace todi
