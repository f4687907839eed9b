// SPDX-License-Identifier: Apache-2.0
#include "pma/planner.hpp"

#include <cmath>

#include "doctest.h"
#include "pma/util.hpp"
#include "test_helpers.hpp"

using namespace pma;
using pma_test::TempDir;

namespace {

// Manifest with checkpoints every `spacing` tokens from `first` to `last`.
TrajectoryManifest every(int64_t first, int64_t last, int64_t spacing) {
  TrajectoryManifest m;
  int64_t step = 0;
  for (int64_t t = first; t <= last; t += spacing) {
    TrajectoryEntry e;
    e.checkpoint_path = "ckpt_" + std::to_string(t) + ".pma";
    e.step = ++step;
    e.tokens = t;
    e.lr = 1e-3;
    m.entries.push_back(e);
  }
  return m;
}

constexpr int64_t kB = 1000000000;

}  // namespace

TEST_CASE("plan picks evenly spaced checkpoints walking back from the anchor") {
  const auto m = every(4 * kB, 204 * kB, 4 * kB);
  const MergePlan p = plan(m, MergeStrategy::sma(), 10, 8 * kB);
  REQUIRE(p.resolved.size() == 10);
  for (int64_t k = 0; k < 10; ++k)
    CHECK(p.resolved[static_cast<size_t>(k)].tokens == (132 + 8 * k) * kB);
  CHECK(p.weights.size() == 10);

  SUBCASE("spacing deviates from V by at most half the native spacing") {
    for (size_t i = 1; i < p.resolved.size(); ++i) {
      const int64_t gap = p.resolved[i].tokens - p.resolved[i - 1].tokens;
      CHECK(std::abs(gap - 8 * kB) <= 2 * kB);
    }
  }
}

TEST_CASE("n=1 plans contain only the anchor") {
  const auto m = every(4 * kB, 204 * kB, 4 * kB);
  const MergePlan p = plan(m, MergeStrategy::sma(), 1, 32 * kB);
  REQUIRE(p.resolved.size() == 1);
  CHECK(p.resolved[0].tokens == 204 * kB);

  SUBCASE("explicit anchor resolves to the latest checkpoint at or before it") {
    const MergePlan q = plan(m, MergeStrategy::sma(), 1, 32 * kB, 147 * kB);
    CHECK(q.resolved[0].tokens == 144 * kB);
  }
}

TEST_CASE("insufficient history errors, and the paper's N fallback works") {
  // Six checkpoints, 32B apart: N=6 fits, N=10 does not.
  const auto m = every(44 * kB, 204 * kB, 32 * kB);
  REQUIRE(m.entries.size() == 6);
  CHECK_NOTHROW(plan(m, MergeStrategy::sma(), 6, 32 * kB));
  CHECK_THROWS_AS(plan(m, MergeStrategy::sma(), 10, 32 * kB), Error);
  try {
    plan(m, MergeStrategy::sma(), 10, 32 * kB);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("reduce N or V") != std::string::npos);
  }
}

TEST_CASE("duplicate selection when spacing is coarser than V") {
  const auto m = every(8 * kB, 200 * kB, 8 * kB);
  CHECK_THROWS_AS(plan(m, MergeStrategy::sma(), 3, 4 * kB), Error);
  try {
    plan(m, MergeStrategy::sma(), 3, 4 * kB);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("duplicate selection") != std::string::npos);
  }
}

TEST_CASE("ties between equidistant checkpoints go to the later one") {
  // Checkpoints at 100 and 200; target 150 is equidistant.
  TrajectoryManifest m;
  for (int64_t t : {100, 200, 300}) {
    TrajectoryEntry e;
    e.checkpoint_path = "c" + std::to_string(t);
    e.step = t;
    e.tokens = t;
    m.entries.push_back(e);
  }
  const MergePlan p = plan(m, MergeStrategy::sma(), 2, 150, 300);
  CHECK(p.resolved[0].tokens == 200);  // target 150 -> tie -> later checkpoint
  CHECK(p.resolved[1].tokens == 300);
}

TEST_CASE("empty manifest and bad arguments") {
  TrajectoryManifest empty;
  CHECK_THROWS_AS(plan(empty, MergeStrategy::sma(), 1, kB), Error);
  const auto m = every(kB, 10 * kB, kB);
  CHECK_THROWS_AS(plan(m, MergeStrategy::sma(), 0, kB), Error);
  CHECK_THROWS_AS(plan(m, MergeStrategy::sma(), 1, 0), Error);
  CHECK_THROWS_AS(plan(m, MergeStrategy::sma(), 1, kB, 0), Error);  // anchor before history
}

TEST_CASE("recommended interval hits the published anchors") {
  CHECK(recommend_interval(7000000000LL) == 4 * kB);
  CHECK(recommend_interval(13000000000LL) == 8 * kB);
  CHECK(recommend_interval(100000000000LL) == 80 * kB);

  SUBCASE("clamped at the endpoints") {
    CHECK(recommend_interval(1000000) == 4 * kB);
    CHECK(recommend_interval(3000000000000LL) == 80 * kB);
  }
  SUBCASE("monotone non-decreasing in model size") {
    int64_t prev = 0;
    for (double p = 1e8; p <= 1e12; p *= 1.17) {
      const int64_t v = recommend_interval(static_cast<int64_t>(p));
      CHECK(v >= prev);
      prev = v;
    }
  }
  SUBCASE("rejects non-positive sizes") {
    CHECK_THROWS_AS(recommend_interval(0), Error);
  }
}

TEST_CASE("plan JSON round-trip") {
  TempDir dir("plan_json");
  const auto m = every(4 * kB, 204 * kB, 4 * kB);
  const MergePlan p = plan(m, MergeStrategy::ema(0.2), 10, 8 * kB);
  save_plan(p, dir / "plan.json");
  const MergePlan q = load_plan(dir / "plan.json");
  CHECK(q.n == p.n);
  CHECK(q.interval_tokens == p.interval_tokens);
  CHECK(q.strategy.kind == StrategyKind::Ema);
  CHECK(q.strategy.alpha == 0.2);
  CHECK(q.weights.weights == p.weights.weights);
  CHECK(q.resolved == p.resolved);
}
