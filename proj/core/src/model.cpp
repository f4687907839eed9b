// SPDX-License-Identifier: Apache-2.0
#include "pma/model.hpp"

#include <algorithm>
#include <cmath>

#include "pma/util.hpp"

namespace pma {

void ModelConfig::validate() const {
  if (layer_widths.size() < 2) throw Error("model needs at least [input, output] widths");
  for (int64_t w : layer_widths)
    if (w < 1) throw Error("layer widths must be >= 1");
  if (kind == Kind::LinearRegression && layer_widths.size() != 2)
    throw Error("linear_regression takes exactly [input, output] widths");
}

ToyModel::ToyModel(const ModelConfig& cfg, bool classification)
    : cfg_(cfg), classification_(classification), widths_(cfg.layer_widths) {
  cfg_.validate();
  int64_t offset = 0;
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    LayerView view;
    view.in = widths_[l];
    view.out = widths_[l + 1];
    view.w_offset = offset;
    offset += view.in * view.out;
    view.b_offset = offset;
    offset += view.out;
    layers_.push_back(view);
  }
  params_.assign(static_cast<size_t>(offset), 0.0);
}

void ToyModel::init_random(Rng& rng) {
  for (const auto& layer : layers_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (int64_t i = 0; i < layer.in * layer.out; ++i)
      params_[static_cast<size_t>(layer.w_offset + i)] = rng.normal() * scale;
    for (int64_t i = 0; i < layer.out; ++i)
      params_[static_cast<size_t>(layer.b_offset + i)] = 0.0;
  }
}

double ToyModel::forward_loss(std::span<const double> p, const double* x, const double* y,
                              int64_t label,
                              std::vector<std::vector<double>>* activations) const {
  const size_t n_layers = layers_.size();
  std::vector<double> cur(x, x + widths_.front());
  if (activations) {
    activations->clear();
    activations->push_back(cur);
  }
  for (size_t l = 0; l < n_layers; ++l) {
    const LayerView& layer = layers_[l];
    std::vector<double> next(static_cast<size_t>(layer.out));
    for (int64_t o = 0; o < layer.out; ++o) {
      double a = p[static_cast<size_t>(layer.b_offset + o)];
      for (int64_t i = 0; i < layer.in; ++i)
        a += p[static_cast<size_t>(layer.w_offset + o * layer.in + i)] * cur[static_cast<size_t>(i)];
      next[static_cast<size_t>(o)] = a;
    }
    const bool hidden = l + 1 < n_layers;
    if (hidden)
      for (double& v : next) v = std::tanh(v);
    cur = std::move(next);
    if (activations) activations->push_back(cur);
  }

  const int64_t out_dim = widths_.back();
  if (classification_) {
    // Softmax cross-entropy, max-shifted for stability.
    double mx = cur[0];
    for (double v : cur) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : cur) z += std::exp(v - mx);
    return std::log(z) - (cur[static_cast<size_t>(label)] - mx);
  }
  double loss = 0.0;
  for (int64_t k = 0; k < out_dim; ++k) {
    const double d = cur[static_cast<size_t>(k)] - y[k];
    loss += d * d;
  }
  return loss / static_cast<double>(out_dim);
}

ToyModel::Eval ToyModel::loss_and_grad(const Dataset& ds,
                                       std::span<const int64_t> batch) const {
  if (batch.empty()) throw Error("empty batch");
  Eval eval;
  eval.grad.assign(params_.size(), 0.0);
  const int64_t in_dim = widths_.front();
  const int64_t out_dim = widths_.back();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<std::vector<double>> acts;
  for (int64_t row : batch) {
    const double* x = &ds.x_train[static_cast<size_t>(row * in_dim)];
    const double* y = ds.classification ? nullptr : &ds.y_train[static_cast<size_t>(row * out_dim)];
    const int64_t label = ds.classification ? ds.labels_train[static_cast<size_t>(row)] : 0;
    eval.loss += forward_loss(params_, x, y, label, &acts) * inv_b;

    // Output-layer residual.
    const std::vector<double>& out = acts.back();
    std::vector<double> delta(static_cast<size_t>(out_dim));
    if (ds.classification) {
      double mx = out[0];
      for (double v : out) mx = std::max(mx, v);
      double z = 0.0;
      for (double v : out) z += std::exp(v - mx);
      for (int64_t k = 0; k < out_dim; ++k)
        delta[static_cast<size_t>(k)] = std::exp(out[static_cast<size_t>(k)] - mx) / z;
      delta[static_cast<size_t>(label)] -= 1.0;
    } else {
      for (int64_t k = 0; k < out_dim; ++k)
        delta[static_cast<size_t>(k)] =
            2.0 * (out[static_cast<size_t>(k)] - y[k]) / static_cast<double>(out_dim);
    }

    for (size_t l = layers_.size(); l-- > 0;) {
      const LayerView& layer = layers_[l];
      const std::vector<double>& input = acts[l];
      for (int64_t o = 0; o < layer.out; ++o) {
        const double d = delta[static_cast<size_t>(o)] * inv_b;
        eval.grad[static_cast<size_t>(layer.b_offset + o)] += d;
        for (int64_t i = 0; i < layer.in; ++i)
          eval.grad[static_cast<size_t>(layer.w_offset + o * layer.in + i)] +=
              d * input[static_cast<size_t>(i)];
      }
      if (l > 0) {
        std::vector<double> prev(static_cast<size_t>(layer.in), 0.0);
        for (int64_t i = 0; i < layer.in; ++i) {
          double acc = 0.0;
          for (int64_t o = 0; o < layer.out; ++o)
            acc += delta[static_cast<size_t>(o)] *
                   params_[static_cast<size_t>(layer.w_offset + o * layer.in + i)];
          // d tanh(a) = 1 - tanh(a)^2, and acts[l] holds tanh(a).
          const double t = input[static_cast<size_t>(i)];
          prev[static_cast<size_t>(i)] = acc * (1.0 - t * t);
        }
        delta = std::move(prev);
      }
    }
  }
  return eval;
}

double ToyModel::batch_loss(const Dataset& ds, std::span<const int64_t> batch) const {
  if (batch.empty()) throw Error("empty batch");
  const int64_t in_dim = widths_.front();
  const int64_t out_dim = widths_.back();
  double loss = 0.0;
  for (int64_t row : batch) {
    const double* x = &ds.x_train[static_cast<size_t>(row * in_dim)];
    const double* y = ds.classification ? nullptr : &ds.y_train[static_cast<size_t>(row * out_dim)];
    const int64_t label = ds.classification ? ds.labels_train[static_cast<size_t>(row)] : 0;
    loss += forward_loss(params_, x, y, label, nullptr);
  }
  return loss / static_cast<double>(batch.size());
}

double ToyModel::val_loss(const Dataset& ds) const {
  const int64_t in_dim = widths_.front();
  const int64_t out_dim = widths_.back();
  const int64_t n = ds.classification ? static_cast<int64_t>(ds.labels_val.size())
                                      : static_cast<int64_t>(ds.y_val.size()) / out_dim;
  if (n == 0) throw Error("empty validation set");
  double loss = 0.0;
  for (int64_t row = 0; row < n; ++row) {
    const double* x = &ds.x_val[static_cast<size_t>(row * in_dim)];
    const double* y = ds.classification ? nullptr : &ds.y_val[static_cast<size_t>(row * out_dim)];
    const int64_t label = ds.classification ? ds.labels_val[static_cast<size_t>(row)] : 0;
    loss += forward_loss(params_, x, y, label, nullptr);
  }
  return loss / static_cast<double>(n);
}

std::map<std::string, TensorInit> ToyModel::to_tensors(std::span<const double> values) const {
  if (values.size() != params_.size()) throw Error("parameter vector size mismatch");
  std::map<std::string, TensorInit> tensors;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const LayerView& layer = layers_[l];
    TensorInit w;
    w.dtype = Dtype::F64;
    w.shape = {layer.out, layer.in};
    w.values.assign(values.begin() + layer.w_offset,
                    values.begin() + layer.w_offset + layer.in * layer.out);
    tensors["layer" + std::to_string(l) + ".weight"] = std::move(w);
    TensorInit b;
    b.dtype = Dtype::F64;
    b.shape = {layer.out};
    b.values.assign(values.begin() + layer.b_offset,
                    values.begin() + layer.b_offset + layer.out);
    tensors["layer" + std::to_string(l) + ".bias"] = std::move(b);
  }
  return tensors;
}

std::vector<double> ToyModel::flatten_container(const ModelConfig& cfg,
                                                const CheckpointContainer& container) {
  ToyModel probe(cfg, false);
  std::vector<double> flat(static_cast<size_t>(probe.param_count()));
  for (size_t l = 0; l < probe.layers_.size(); ++l) {
    const LayerView& layer = probe.layers_[l];
    const std::string wname = "layer" + std::to_string(l) + ".weight";
    const std::string bname = "layer" + std::to_string(l) + ".bias";
    const std::vector<double> w = load_tensor(container, wname);
    const std::vector<double> b = load_tensor(container, bname);
    if (static_cast<int64_t>(w.size()) != layer.in * layer.out ||
        static_cast<int64_t>(b.size()) != layer.out)
      throw Error("checkpoint tensor sizes do not match model config");
    std::copy(w.begin(), w.end(), flat.begin() + layer.w_offset);
    std::copy(b.begin(), b.end(), flat.begin() + layer.b_offset);
  }
  return flat;
}

void ToyModel::load_params(const CheckpointContainer& container) {
  params_ = flatten_container(cfg_, container);
}

}  // namespace pma
