#pragma once

// Error taxonomy shared outside the numerics core. Numerics-specific errors
// (ShapeError, UsageError, NumericError) live in nn/tensor.hpp.

#include <stdexcept>
#include <string>

namespace dfallm {

// invalid or inconsistent configuration (bad frame rate, conflicting splits, ...)
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// malformed data encountered at runtime (bad manifest line, undecodable wav, ...)
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

// caller-supplied input outside an operation's domain
struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace dfallm
