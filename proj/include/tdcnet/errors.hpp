// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tdcnet {

/// Shape or axis mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value that cannot be honoured (kernel too long, bad Kt, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value outside the numeric domain of an operation (nonpositive sigma, NaN).
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller used an API incorrectly (non-scalar loss root, empty input).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Data generation could not satisfy its constraints.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tdcnet
