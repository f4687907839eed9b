// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pma {

// One checkpoint along a training trajectory.
struct TrajectoryEntry {
  std::string checkpoint_path;
  int64_t step = 0;
  int64_t tokens = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double grad_norm = 0.0;

  bool operator==(const TrajectoryEntry&) const = default;
};

// Ordered record of a run's checkpoints. Entries are strictly increasing in
// step and non-decreasing in tokens.
struct TrajectoryManifest {
  std::vector<TrajectoryEntry> entries;
  // Directory the manifest was loaded from / written to; used to resolve
  // relative checkpoint paths and to find companion files (metrics.csv,
  // train_config.json).
  std::filesystem::path source_dir;

  void validate() const;
  std::filesystem::path resolve(const TrajectoryEntry& e) const;
};

void save_manifest(const TrajectoryManifest& m, const std::filesystem::path& path);
TrajectoryManifest load_manifest(const std::filesystem::path& path);

}  // namespace pma
