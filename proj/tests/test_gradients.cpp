// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "gradient_suite.hpp"

TEST_CASE("every primitive passes randomized finite differences") {
  for (const auto& outcome : dd::testing::run_gradient_suite(12, 2026)) {
    INFO(outcome.op << " worst relative error " << outcome.worst_rel_error);
    CHECK(outcome.worst_rel_error < 1e-4);
  }
}
