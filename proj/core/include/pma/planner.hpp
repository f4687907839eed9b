// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint selection: given a trajectory, pick the N checkpoints to merge
// at a target token interval V, walking backward from an anchor.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "pma/manifest.hpp"
#include "pma/merge.hpp"

namespace pma {

struct MergePlan {
  MergeStrategy strategy;
  int64_t n = 0;
  int64_t interval_tokens = 0;
  std::vector<TrajectoryEntry> resolved;  // oldest -> newest, exactly n entries
  WeightVector weights;
  std::filesystem::path source_dir;  // for resolving relative checkpoint paths
};

// Walking backward from the anchor (latest entry at or before anchor_tokens,
// default the last entry), greedily picks the checkpoint nearest each target
// token count anchor - k*V. A target with no checkpoint within V/2 is an
// error, as is picking the same checkpoint twice; distance ties go to the
// later checkpoint.
MergePlan plan(const TrajectoryManifest& manifest, const MergeStrategy& strategy,
               int64_t n, int64_t interval_tokens,
               std::optional<int64_t> anchor_tokens = std::nullopt);

// Advisory merge interval for a given total parameter count, interpolated in
// log-log space through the observed anchors (7e9 params -> 4e9 tokens,
// 13e9 -> 8e9, 100e9 -> 80e9), clamped at the endpoints and rounded to the
// nearest 1B tokens.
int64_t recommend_interval(int64_t model_params_total);

void save_plan(const MergePlan& plan, const std::filesystem::path& path);
MergePlan load_plan(const std::filesystem::path& path);

}  // namespace pma
