#pragma once

#include <stdexcept>
#include <string>

namespace cfgmoe {

// Bad input: malformed files, shape mismatches, violated preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Input that is well formed but outside the decodable instruction subset.
class UnsupportedInstruction : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failure during a run (non-finite loss or gradient).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long epoch = -1)
      : std::runtime_error(what), epoch_(epoch) {}

  long epoch() const noexcept { return epoch_; }

 private:
  long epoch_;
};

}  // namespace cfgmoe
