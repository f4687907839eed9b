// SPDX-License-Identifier: Apache-2.0
#include "pma/schedule.hpp"

#include <cmath>
#include <string>

#include "pma/util.hpp"

namespace pma {

void WsdSchedule::validate() const {
  if (!(lr_peak > 0.0)) throw Error("lr_peak must be > 0");
  if (lr_end < 0.0) throw Error("lr_end must be >= 0");
  if (lr_end > lr_peak) throw Error("lr_end must be <= lr_peak");
  if (warmup_steps < 0 || stable_steps < 0 || decay_steps < 0)
    throw Error("schedule step counts must be >= 0");
}

double lr_at(const WsdSchedule& s, int64_t step) {
  if (step < 0 || step >= s.total_steps())
    throw Error("step " + std::to_string(step) + " out of range [0, " +
                std::to_string(s.total_steps()) + ")");
  if (step < s.warmup_steps)
    return s.lr_peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (step < s.warmup_steps + s.stable_steps) return s.lr_peak;
  const double t = static_cast<double>(step - s.warmup_steps - s.stable_steps);
  return s.lr_end + 0.5 * (s.lr_peak - s.lr_end) *
                        (1.0 + std::cos(M_PI * t / static_cast<double>(s.decay_steps)));
}

}  // namespace pma
