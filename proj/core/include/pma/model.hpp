// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pma/container.hpp"
#include "pma/dataset.hpp"
#include "pma/rng.hpp"

namespace pma {

struct ModelConfig {
  enum class Kind { LinearRegression, Mlp };
  Kind kind = Kind::Mlp;
  // layer_widths[0] is the input dim, back() the output dim. LinearRegression
  // requires exactly [in, out]; Mlp uses tanh on every hidden layer.
  std::vector<int64_t> layer_widths;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Dense toy network trained in f64. All loops run in a fixed sequential
// order so a (config, seed) pair fully determines every emitted byte.
class ToyModel {
 public:
  ToyModel(const ModelConfig& cfg, bool classification);

  int64_t param_count() const { return static_cast<int64_t>(params_.size()); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void init_random(Rng& rng);

  struct Eval {
    double loss = 0.0;
    std::vector<double> grad;
  };
  // Loss and gradient on a batch of training rows (MSE for regression,
  // softmax cross-entropy for classification).
  Eval loss_and_grad(const Dataset& ds, std::span<const int64_t> batch) const;
  double batch_loss(const Dataset& ds, std::span<const int64_t> batch) const;
  double val_loss(const Dataset& ds) const;

  // Checkpoint glue: tensors named "layer<i>.weight" / "layer<i>.bias".
  std::map<std::string, TensorInit> to_tensors(std::span<const double> values) const;
  std::map<std::string, TensorInit> to_tensors() const { return to_tensors(params_); }
  void load_params(const CheckpointContainer& container);
  static std::vector<double> flatten_container(const ModelConfig& cfg,
                                               const CheckpointContainer& container);

  const ModelConfig& config() const { return cfg_; }
  bool classification() const { return classification_; }

 private:
  ModelConfig cfg_;
  bool classification_;
  std::vector<double> params_;
  std::vector<int64_t> widths_;

  struct LayerView {
    int64_t w_offset, b_offset, in, out;
  };
  std::vector<LayerView> layers_;

  double forward_loss(std::span<const double> p, const double* x, const double* y,
                      int64_t label, std::vector<std::vector<double>>* activations) const;
};

}  // namespace pma
