// SPDX-License-Identifier: Apache-2.0
//
// Weighted checkpoint merging: M_avg = sum_i w_i * M_i over an ordered
// sequence of checkpoints (index 1 = oldest, N = newest).
//
// Determinism contract: every element is accumulated left to right in f64,
// oldest to newest, and rounded once to the output dtype. Given the same
// ordered inputs, output bytes are identical across runs and modes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pma {

enum class StrategyKind { Sma, Ema, Wma, Custom };

struct MergeStrategy {
  StrategyKind kind = StrategyKind::Sma;
  double alpha = 0.0;                   // EMA only, in (0, 1]
  std::vector<double> custom_weights;   // CUSTOM only, all > 0

  static MergeStrategy sma() { return {StrategyKind::Sma, 0.0, {}}; }
  static MergeStrategy ema(double alpha) { return {StrategyKind::Ema, alpha, {}}; }
  static MergeStrategy wma() { return {StrategyKind::Wma, 0.0, {}}; }
  static MergeStrategy custom(std::vector<double> weights) {
    return {StrategyKind::Custom, 0.0, std::move(weights)};
  }

  void validate() const;
  std::string label() const;  // "sma", "ema(0.1)", "wma", "custom"
};

MergeStrategy strategy_from_label(const std::string& label,
                                  std::optional<double> alpha = std::nullopt,
                                  std::vector<double> custom_weights = {});

// Normalized merge weights: all >= 0, sum == 1 within 1e-12 absolute.
struct WeightVector {
  std::vector<double> weights;

  size_t size() const { return weights.size(); }
  double operator[](size_t i) const { return weights[i]; }
  void validate() const;
};

// SMA: w_i = 1/N.  WMA: w_i = i / (N(N+1)/2).
// EMA: weights implied by unrolling M_avg^(i) = a*M_i + (1-a)*M_avg^(i-1)
// from the base M_avg^(1) = M_1: w_1 = (1-a)^(N-1), w_i = a(1-a)^(N-i).
// CUSTOM: weights normalized by their sum.
WeightVector compute_weights(const MergeStrategy& strategy, int64_t n);

// One EMA step on raw value vectors: a*next + (1-a)*running, elementwise f64.
std::vector<double> ema_update(std::span<const double> running,
                               std::span<const double> next, double alpha);

enum class MergeMode { InMemory, Streaming };

struct MergeReport {
  std::vector<std::string> inputs;
  std::vector<double> weights;
  std::string strategy;
  struct PerTensor {
    std::string name;
    int64_t elements = 0;
  };
  std::vector<PerTensor> per_tensor;
  std::string sha256;  // of the output container file
};

// Merges the given checkpoints into out_path. All containers must have
// identical tensor names, shapes and dtypes; output dtype equals input dtype.
// Streaming mode holds one tensor accumulator plus a bounded read chunk.
// Also writes the report as JSON to "<out_path>.merge.json".
MergeReport merge(const std::vector<std::filesystem::path>& inputs,
                  const WeightVector& weights, const std::filesystem::path& out_path,
                  MergeMode mode, const std::string& strategy_label = "custom");

// Convenience: compute_weights + merge.
MergeReport merge_with_strategy(const std::vector<std::filesystem::path>& inputs,
                                const MergeStrategy& strategy,
                                const std::filesystem::path& out_path, MergeMode mode);

}  // namespace pma
