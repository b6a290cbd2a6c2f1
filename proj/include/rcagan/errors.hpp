#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace rcagan {

// Raised when tensor extents disagree. Carries the op and the offending axis.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string op, std::string axis, std::size_t expected, std::size_t actual)
      : std::invalid_argument(op + ": dimension mismatch on axis '" + axis + "' (expected " +
                              std::to_string(expected) + ", got " + std::to_string(actual) + ")"),
        op_(std::move(op)),
        axis_(std::move(axis)),
        expected_(expected),
        actual_(actual) {}

  const std::string& op() const noexcept { return op_; }
  const std::string& axis() const noexcept { return axis_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string op_;
  std::string axis_;
  std::size_t expected_;
  std::size_t actual_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable inputs, missing pairs, bad image extents.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or parameter during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rcagan
