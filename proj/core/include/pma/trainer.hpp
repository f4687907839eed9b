// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale trainer: mini-batch SGD with momentum 0.9 on the toy models,
// WSD scheduling, periodic checkpoints with a momentum sidecar, per-step
// metrics, optional high-lr spike injection, and merged-initialization
// (PMA-init) resume with reset optimizer state.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pma/dataset.hpp"
#include "pma/manifest.hpp"
#include "pma/merge.hpp"
#include "pma/model.hpp"
#include "pma/schedule.hpp"
#include "pma/util.hpp"

namespace pma {

// Multiplies the scheduled lr by lr_multiplier for duration_steps steps
// starting at at_step (relative to this run segment), emulating a transient
// instability event.
struct SpikeConfig {
  std::string mode = "high_lr";
  double lr_multiplier = 1.0;
  int64_t at_step = 0;
  int64_t duration_steps = 20;

  bool operator==(const SpikeConfig&) const = default;
};

struct InitSpec {
  enum class Kind { Random, PmaInit, Checkpoint };
  Kind kind = Kind::Random;
  // PmaInit: merge these checkpoints with `strategy`, momentum starts at zero.
  std::vector<std::string> paths;
  MergeStrategy strategy = MergeStrategy::sma();
  // Checkpoint: plain load; restore_momentum additionally loads the sidecar
  // so a fork with an unchanged schedule reproduces the original bytes.
  std::string checkpoint_path;
  bool restore_momentum = false;
};

struct TrainConfig {
  uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  int64_t steps = 0;       // steps executed by this run segment
  int64_t batch_size = 1;
  WsdSchedule schedule;    // evaluated at absolute step (start_step + local)
  int64_t checkpoint_every = 0;
  int64_t tokens_per_step = 1;
  std::optional<SpikeConfig> spike;
  InitSpec init;
  int64_t start_step = 0;  // nonzero for forked / resumed segments

  void validate() const;
};

TrainConfig load_train_config(const std::filesystem::path& path);
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path);

// One metrics.csv row. The first row of a run logs the state before any
// update (including the initial validation loss); afterwards `step` counts
// completed updates, `loss`/`grad_norm` are measured on the step's batch
// before the update, and val_loss is filled at checkpoint steps.
struct MetricsRow {
  int64_t step = 0;
  int64_t tokens = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> val_loss;
};

std::vector<MetricsRow> load_metrics(const std::filesystem::path& csv_path);

// First step whose batch loss exceeds 5x the median of the up-to-100
// preceding losses.
std::optional<int64_t> detect_spike(const std::vector<MetricsRow>& rows);

// Thrown when the loss turns non-finite and no spike was configured. The
// manifest written so far is preserved in the output directory.
class DivergedError : public Error {
 public:
  explicit DivergedError(const std::string& what) : Error(what) {}
};

// Runs the configured segment, writing checkpoints, trajectory.json,
// metrics.csv and a train_config.json echo into out_dir.
TrajectoryManifest train(const TrainConfig& cfg, const std::filesystem::path& out_dir);

// Deterministic batch row indices for an absolute step; exposed so tests can
// recompute logged quantities from the exact batch the trainer saw.
std::vector<int64_t> batch_for_step(const TrainConfig& cfg, int64_t absolute_step);

// Builds a config that continues a finished run from the checkpoint nearest
// at_tokens (within half a checkpoint period), optionally swapping the
// schedule; step/token counters continue from the fork point.
TrainConfig fork(const TrajectoryManifest& manifest, int64_t at_tokens,
                 const std::optional<WsdSchedule>& new_schedule = std::nullopt);

struct ResumePoint {
  enum class Mode { AtEnd, AfterSpike, AtStep };
  Mode mode = Mode::AtEnd;
  int64_t step = 0;  // AtStep only

  static ResumePoint at_end() { return {Mode::AtEnd, 0}; }
  static ResumePoint after_spike() { return {Mode::AfterSpike, 0}; }
  static ResumePoint at_step(int64_t s) { return {Mode::AtStep, s}; }
};

// Merges the last n checkpoints strictly before the resume point (for
// AfterSpike: before the first step where the loss exceeded 5x the trailing
// median), then continues training from the merged weights with reset
// momentum. `resume_config` is used as-is except for init and start_step,
// which this function derives from the merge.
TrajectoryManifest pma_init_resume(const TrajectoryManifest& manifest, int64_t n,
                                   const MergeStrategy& strategy,
                                   const TrainConfig& resume_config, const ResumePoint& at,
                                   const std::filesystem::path& out_dir);

}  // namespace pma
