// SPDX-License-Identifier: Apache-2.0
#include "pma/manifest.hpp"

#include "doctest.h"
#include "pma/util.hpp"
#include "test_helpers.hpp"

using namespace pma;
using pma_test::TempDir;

namespace {

TrajectoryManifest sample() {
  TrajectoryManifest m;
  for (int i = 1; i <= 3; ++i) {
    TrajectoryEntry e;
    e.checkpoint_path = "ckpt_" + std::to_string(i) + ".pma";
    e.step = i * 100;
    e.tokens = i * 100000;
    e.lr = 0.05;
    e.train_loss = 1.0 / i;
    e.grad_norm = 0.5;
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

TEST_CASE("manifest JSON round-trip") {
  TempDir dir("manifest");
  const TrajectoryManifest m = sample();
  save_manifest(m, dir / "trajectory.json");
  const TrajectoryManifest loaded = load_manifest(dir / "trajectory.json");
  CHECK(loaded.entries == m.entries);
  CHECK(loaded.source_dir == dir.path());
  CHECK(loaded.resolve(loaded.entries[0]) == dir.path() / "ckpt_1.pma");
}

TEST_CASE("manifest ordering invariants") {
  TrajectoryManifest m = sample();
  m.entries[1].step = m.entries[0].step;  // not strictly increasing
  CHECK_THROWS_AS(m.validate(), Error);

  m = sample();
  m.entries[2].tokens = m.entries[1].tokens - 1;  // decreasing tokens
  CHECK_THROWS_AS(m.validate(), Error);

  m = sample();
  m.entries[0].grad_norm = -1.0;
  CHECK_THROWS_AS(m.validate(), Error);

  CHECK_NOTHROW(sample().validate());
}
