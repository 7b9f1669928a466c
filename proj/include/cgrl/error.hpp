#pragma once

#include <stdexcept>
#include <string>

namespace cgrl {

// Tensor shape mismatch fed into an op.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Math domain violation (log of a non-positive value and friends).
struct MathDomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Malformed records, out-of-range labels, unreadable or corrupt files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cgrl
