// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace pma {

// Warmup-Stable-Decay learning rate schedule: linear ramp 0 -> lr_peak over
// warmup_steps, constant lr_peak for stable_steps, then cosine decay to
// lr_end over decay_steps.
struct WsdSchedule {
  double lr_peak = 0.0;
  double lr_end = 0.0;
  int64_t warmup_steps = 0;
  int64_t stable_steps = 0;
  int64_t decay_steps = 0;

  int64_t total_steps() const { return warmup_steps + stable_steps + decay_steps; }
  void validate() const;

  bool operator==(const WsdSchedule&) const = default;
};

double lr_at(const WsdSchedule& schedule, int64_t step);

}  // namespace pma
