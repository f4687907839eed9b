// SPDX-License-Identifier: Apache-2.0
//
// Scripted multi-seed experiments, one per figure-level claim:
//   R1  stable-phase merging beats the member checkpoints
//   R2  constant-lr training + merging tracks a real annealed fork
//   R3  SMA/WMA/EMA differences wash out late in training
//   R4  interval V and count N ablation grid
//   R5  loss-spike recovery via merged re-initialization
//   R6  merged initialization is neutral-or-better for continued training
//   R7  exact verification sweep of the second-order analysis
// Each recipe writes result.json plus plotting CSVs into its output
// directory and aggregates per-seed metrics into a pass/fail verdict.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace pma {

struct RecipeResult {
  std::string recipe_id;
  std::vector<uint64_t> seeds;
  std::string criterion;  // human-readable aggregate rule
  bool pass = false;
  nlohmann::json aggregate;
  nlohmann::json per_seed;  // array, one object per seed (or per instance batch)
};

// Known ids: r1..r7 (case-insensitive). Seeds run in parallel up to
// pma::thread_cap(); a seed failure aborts after writing partial results.
RecipeResult run_recipe(const std::string& recipe_id, const std::vector<uint64_t>& seeds,
                        const std::filesystem::path& out_dir);

std::vector<std::string> known_recipes();

// The R7 core, exposed for the acceptance suite: `instances` random quadratic
// problems (d=10, k in 2..8). Checks that the predicted merged loss matches
// the exact one to 1e-9 relative and that the benefit inequality agrees with
// a direct loss comparison on every non-tie instance.
struct TaylorSweepStats {
  int64_t instances = 0;
  int64_t ties = 0;
  int64_t verdict_agreements = 0;  // over non-tie instances
  double max_rel_prediction_error = 0.0;
  bool pass = false;
};
TaylorSweepStats run_taylor_sweep(uint64_t seed, int64_t instances);

}  // namespace pma
