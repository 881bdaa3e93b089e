// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "tdcnet/errors.hpp"
#include "tdcnet/tdc.hpp"
#include "tdcnet/verify.hpp"

using namespace tdcnet;

namespace {

struct FlipGuard {
  FlipGuard() { tdc::testing::set_short_term_sign_flip(true); }
  ~FlipGuard() { tdc::testing::set_short_term_sign_flip(false); }
};

const verify::Check* find(const verify::Report& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return &c;
  return nullptr;
}

}  // namespace

TEST_CASE("fast suites pass and report residuals under tolerance") {
  for (const char* suite : {"tdc", "attention", "metrics"}) {
    CAPTURE(suite);
    const auto r = verify::run(suite);
    CHECK(!r.checks.empty());
    CHECK(r.passed());
    for (const auto& c : r.checks) {
      CAPTURE(c.name);
      CHECK(c.suite == suite);
      CHECK(c.passed);
      CHECK(c.residual <= c.tolerance);
    }
    const auto j = r.to_json();
    CHECK(j.dump().find(r.checks.front().name) != std::string::npos);
  }
}

TEST_CASE("a sign flip in the short-term kernel is caught") {
  FlipGuard flip;
  const auto r = verify::run("tdc");
  CHECK_FALSE(r.passed());
  const auto* c = find(r, "constant_input_zero_response");
  REQUIRE(c != nullptr);
  CHECK_FALSE(c->passed);
  CHECK(c->residual > 1e-3);
}

TEST_CASE("unknown suite is a usage error") {
  CHECK_THROWS_AS(verify::run("nonsense"), UsageError);
  CHECK(verify::suites().size() >= 4);
}
