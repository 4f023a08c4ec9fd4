#pragma once

#include <stdexcept>
#include <string>

namespace orbit {

/// Raised when a caller violates a documented precondition (shape mismatch,
/// even window, out-of-range argument).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or missing input data (dataset layout, metadata, image files).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid run configuration (unknown keys, bad values, unwritable paths).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss, exploding gradient, or a rank-deficient latent basis.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Phase calibration missing, tied, or belonging to another checkpoint.
class CalibrationError : public std::runtime_error {
 public:
  explicit CalibrationError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}
}  // namespace detail

}  // namespace orbit
