// SPDX-License-Identifier: Apache-2.0
//
// Property suites behind `tdcnet verify`: each check reports its measured
// residual against a tolerance.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace tdcnet::verify {

struct Check {
  std::string suite, name;
  double residual = 0;
  double tolerance = 0;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::vector<Check> checks;
  bool passed() const;
  nlohmann::json to_json() const;
};

struct Options {
  std::uint64_t seed = 0;
  /// Adds the 32-bit re-parameterisation probe to the tdc suite.
  bool f32 = true;
};

/// Suite names accepted by run().
const std::vector<std::string>& suites();
/// Runs "tdc", "attention", "grads", "metrics" or "all". Throws UsageError for
/// an unknown suite name.
Report run(const std::string& suite, const Options& opts = {});

}  // namespace tdcnet::verify
