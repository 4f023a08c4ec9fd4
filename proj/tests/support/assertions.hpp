#pragma once

#include <gtest/gtest.h>

#include "support/oracles.hpp"

namespace orbit::testing {
inline ::testing::AssertionResult GradOk(const char* expr, const char*, const GradCheck& g, double tol) {
  if (g.ok(tol)) return ::testing::AssertionSuccess();
  return ::testing::AssertionFailure() << expr << ": " << g << " (tolerance " << tol << ")";
}
}  // namespace orbit::testing
