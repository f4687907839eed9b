// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pma {

// Synthetic task generators. "linear" draws a random linear map as the
// target; "mlp_teacher" samples a small fixed-width tanh network and uses its
// outputs; "blobs" is gaussian-cluster classification with one cluster per
// output class.
struct DataConfig {
  std::string task = "linear";  // linear | mlp_teacher | blobs
  int64_t n_train = 256;
  int64_t n_val = 512;
  double noise_std = 0.0;

  bool operator==(const DataConfig&) const = default;
};

struct Dataset {
  int64_t input_dim = 0;
  int64_t output_dim = 0;
  bool classification = false;
  // Row-major n x dim. Regression targets in y_*, class indices in labels_*.
  std::vector<double> x_train, y_train;
  std::vector<double> x_val, y_val;
  std::vector<int64_t> labels_train, labels_val;
};

Dataset make_dataset(uint64_t seed, const DataConfig& cfg, int64_t input_dim,
                     int64_t output_dim);

}  // namespace pma
