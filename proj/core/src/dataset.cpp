// SPDX-License-Identifier: Apache-2.0
#include "pma/dataset.hpp"

#include <cmath>

#include "pma/rng.hpp"
#include "pma/util.hpp"

namespace pma {
namespace {

struct Teacher {
  // Fixed-shape tanh network [in, 8, out].
  int64_t in, hidden = 8, out;
  std::vector<double> w1, b1, w2, b2;

  Teacher(uint64_t seed, int64_t in_dim, int64_t out_dim) : in(in_dim), out(out_dim) {
    Rng rng = stream_rng(seed, "teacher");
    w1.resize(static_cast<size_t>(hidden * in));
    b1.resize(static_cast<size_t>(hidden));
    w2.resize(static_cast<size_t>(out * hidden));
    b2.resize(static_cast<size_t>(out));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& v : w1) v = rng.normal() * s1 * 1.5;
    for (auto& v : b1) v = rng.normal() * 0.2;
    for (auto& v : w2) v = rng.normal() * s2 * 1.5;
    for (auto& v : b2) v = rng.normal() * 0.2;
  }

  void eval(const double* x, double* y) const {
    std::vector<double> h(static_cast<size_t>(hidden));
    for (int64_t j = 0; j < hidden; ++j) {
      double a = b1[static_cast<size_t>(j)];
      for (int64_t i = 0; i < in; ++i) a += w1[static_cast<size_t>(j * in + i)] * x[i];
      h[static_cast<size_t>(j)] = std::tanh(a);
    }
    for (int64_t k = 0; k < out; ++k) {
      double a = b2[static_cast<size_t>(k)];
      for (int64_t j = 0; j < hidden; ++j) a += w2[static_cast<size_t>(k * hidden + j)] * h[static_cast<size_t>(j)];
      y[k] = a;
    }
  }
};

}  // namespace

Dataset make_dataset(uint64_t seed, const DataConfig& cfg, int64_t input_dim,
                     int64_t output_dim) {
  if (input_dim < 1 || output_dim < 1) throw Error("dataset dims must be >= 1");
  if (cfg.n_train < 1 || cfg.n_val < 1) throw Error("dataset sizes must be >= 1");
  if (cfg.noise_std < 0.0) throw Error("noise_std must be >= 0");

  Dataset ds;
  ds.input_dim = input_dim;
  ds.output_dim = output_dim;

  Rng rng = stream_rng(seed, "data");

  if (cfg.task == "linear" || cfg.task == "mlp_teacher") {
    std::vector<double> a;  // linear map, out x in
    std::vector<double> b;
    Teacher teacher(seed, input_dim, output_dim);
    if (cfg.task == "linear") {
      Rng trng = stream_rng(seed, "linear_target");
      a.resize(static_cast<size_t>(output_dim * input_dim));
      b.resize(static_cast<size_t>(output_dim));
      const double s = 1.0 / std::sqrt(static_cast<double>(input_dim));
      for (auto& v : a) v = trng.normal() * s;
      for (auto& v : b) v = trng.normal() * 0.1;
    }
    auto fill = [&](int64_t n, std::vector<double>& xs, std::vector<double>& ys) {
      xs.resize(static_cast<size_t>(n * input_dim));
      ys.resize(static_cast<size_t>(n * output_dim));
      for (int64_t r = 0; r < n; ++r) {
        double* x = &xs[static_cast<size_t>(r * input_dim)];
        double* y = &ys[static_cast<size_t>(r * output_dim)];
        for (int64_t i = 0; i < input_dim; ++i) x[i] = rng.normal();
        if (cfg.task == "linear") {
          for (int64_t k = 0; k < output_dim; ++k) {
            double v = b[static_cast<size_t>(k)];
            for (int64_t i = 0; i < input_dim; ++i)
              v += a[static_cast<size_t>(k * input_dim + i)] * x[i];
            y[k] = v;
          }
        } else {
          teacher.eval(x, y);
        }
        if (cfg.noise_std > 0.0)
          for (int64_t k = 0; k < output_dim; ++k) y[k] += cfg.noise_std * rng.normal();
      }
    };
    fill(cfg.n_train, ds.x_train, ds.y_train);
    fill(cfg.n_val, ds.x_val, ds.y_val);
    return ds;
  }

  if (cfg.task == "blobs") {
    ds.classification = true;
    if (output_dim < 2) throw Error("blobs task needs output_dim >= 2 (one logit per class)");
    std::vector<double> centers(static_cast<size_t>(output_dim * input_dim));
    Rng crng = stream_rng(seed, "blob_centers");
    for (auto& v : centers) v = crng.normal() * 1.5;
    auto fill = [&](int64_t n, std::vector<double>& xs, std::vector<int64_t>& labels) {
      xs.resize(static_cast<size_t>(n * input_dim));
      labels.resize(static_cast<size_t>(n));
      const double spread = cfg.noise_std > 0.0 ? cfg.noise_std : 0.5;
      for (int64_t r = 0; r < n; ++r) {
        const int64_t c = static_cast<int64_t>(rng.below(static_cast<uint64_t>(output_dim)));
        labels[static_cast<size_t>(r)] = c;
        double* x = &xs[static_cast<size_t>(r * input_dim)];
        for (int64_t i = 0; i < input_dim; ++i)
          x[i] = centers[static_cast<size_t>(c * input_dim + i)] + spread * rng.normal();
      }
    };
    fill(cfg.n_train, ds.x_train, ds.labels_train);
    fill(cfg.n_val, ds.x_val, ds.labels_val);
    return ds;
  }

  throw Error("unknown data task '" + cfg.task + "' (expected linear|mlp_teacher|blobs)");
}

}  // namespace pma
