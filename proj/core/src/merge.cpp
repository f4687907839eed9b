// SPDX-License-Identifier: Apache-2.0
#include "pma/merge.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "pma/container.hpp"
#include "pma/util.hpp"

namespace pma {
namespace {

using nlohmann::json;

constexpr size_t kStreamChunkBytes = 1 << 20;  // 1 MiB of raw input per read

std::string format_alpha(double alpha) {
  std::string s = format_double(alpha);
  return s;
}

}  // namespace

void MergeStrategy::validate() const {
  switch (kind) {
    case StrategyKind::Sma:
    case StrategyKind::Wma:
      break;
    case StrategyKind::Ema:
      if (!(alpha > 0.0 && alpha <= 1.0))
        throw Error("EMA alpha must be in (0, 1], got " + format_double(alpha));
      break;
    case StrategyKind::Custom:
      if (custom_weights.empty()) throw Error("custom strategy requires weights");
      for (double w : custom_weights)
        if (!(w > 0.0)) throw Error("custom weights must all be > 0");
      break;
  }
}

std::string MergeStrategy::label() const {
  switch (kind) {
    case StrategyKind::Sma: return "sma";
    case StrategyKind::Ema: return "ema(" + format_alpha(alpha) + ")";
    case StrategyKind::Wma: return "wma";
    case StrategyKind::Custom: return "custom";
  }
  return "unknown";
}

MergeStrategy strategy_from_label(const std::string& label, std::optional<double> alpha,
                                  std::vector<double> custom_weights) {
  if (label == "sma") return MergeStrategy::sma();
  if (label == "wma") return MergeStrategy::wma();
  if (label == "ema") {
    if (!alpha) throw Error("ema strategy requires --alpha");
    return MergeStrategy::ema(*alpha);
  }
  if (label == "custom") {
    if (custom_weights.empty()) throw Error("custom strategy requires --weights");
    return MergeStrategy::custom(std::move(custom_weights));
  }
  throw Error("unknown strategy '" + label + "' (expected sma|ema|wma|custom)");
}

void WeightVector::validate() const {
  if (weights.empty()) throw Error("weight vector is empty");
  for (double w : weights)
    if (!(w >= 0.0)) throw Error("merge weights must be non-negative");
  const double sum = neumaier_sum(weights);
  if (std::abs(sum - 1.0) > 1e-12)
    throw Error("merge weights must sum to 1 (got " + format_double(sum) + ")");
}

WeightVector compute_weights(const MergeStrategy& strategy, int64_t n) {
  strategy.validate();
  if (n < 1) throw Error("weight count must be >= 1");
  WeightVector wv;
  wv.weights.resize(static_cast<size_t>(n));
  switch (strategy.kind) {
    case StrategyKind::Sma: {
      const double w = 1.0 / static_cast<double>(n);
      std::fill(wv.weights.begin(), wv.weights.end(), w);
      break;
    }
    case StrategyKind::Wma: {
      const double denom = static_cast<double>(n * (n + 1) / 2);
      for (int64_t i = 1; i <= n; ++i)
        wv.weights[static_cast<size_t>(i - 1)] = static_cast<double>(i) / denom;
      break;
    }
    case StrategyKind::Ema: {
      const double a = strategy.alpha;
      wv.weights[0] = std::pow(1.0 - a, static_cast<double>(n - 1));
      for (int64_t i = 2; i <= n; ++i)
        wv.weights[static_cast<size_t>(i - 1)] = a * std::pow(1.0 - a, static_cast<double>(n - i));
      break;
    }
    case StrategyKind::Custom: {
      if (static_cast<int64_t>(strategy.custom_weights.size()) != n)
        throw Error("custom weight count mismatch: have " +
                    std::to_string(strategy.custom_weights.size()) + ", need " +
                    std::to_string(n));
      const bool all_equal = std::all_of(
          strategy.custom_weights.begin(), strategy.custom_weights.end(),
          [&](double w) { return w == strategy.custom_weights.front(); });
      if (all_equal) {
        // c / (N*c) == 1/N exactly; skip the normalization rounding so that
        // uniform custom weights reproduce SMA bit for bit.
        const double w = 1.0 / static_cast<double>(n);
        std::fill(wv.weights.begin(), wv.weights.end(), w);
      } else {
        const double sum = neumaier_sum(strategy.custom_weights);
        for (int64_t i = 0; i < n; ++i)
          wv.weights[static_cast<size_t>(i)] = strategy.custom_weights[static_cast<size_t>(i)] / sum;
      }
      break;
    }
  }
  wv.validate();
  return wv;
}

std::vector<double> ema_update(std::span<const double> running,
                               std::span<const double> next, double alpha) {
  if (running.size() != next.size())
    throw Error("shape mismatch in ema_update: " + std::to_string(running.size()) +
                " vs " + std::to_string(next.size()));
  std::vector<double> out(running.size());
  for (size_t i = 0; i < running.size(); ++i)
    out[i] = alpha * next[i] + (1.0 - alpha) * running[i];
  return out;
}

namespace {

void check_same_tensor_sets(const std::vector<CheckpointContainer>& containers) {
  const auto& first = containers.front();
  for (size_t i = 1; i < containers.size(); ++i) {
    const auto& other = containers[i];
    for (const auto& [name, rec] : first.tensors) {
      auto it = other.tensors.find(name);
      if (it == other.tensors.end())
        throw Error("tensor '" + name + "' missing from '" + other.path.string() + "'");
      if (it->second.dtype != rec.dtype)
        throw Error("dtype mismatch for tensor '" + name + "' between '" +
                    first.path.string() + "' and '" + other.path.string() + "'");
      if (it->second.shape != rec.shape)
        throw Error("shape mismatch for tensor '" + name + "' between '" +
                    first.path.string() + "' and '" + other.path.string() + "'");
    }
    for (const auto& [name, _] : other.tensors)
      if (!first.tensors.count(name))
        throw Error("tensor '" + name + "' missing from '" + first.path.string() + "'");
  }
}

void accumulate_chunked(const CheckpointContainer& c, const TensorRecord& rec, double w,
                        std::vector<double>& acc) {
  std::ifstream in(c.path, std::ios::binary);
  if (!in) throw Error("cannot open '" + c.path.string() + "'");
  in.seekg(static_cast<std::streamoff>(c.data_begin + rec.begin));

  const size_t elem = dtype_size(rec.dtype);
  const size_t chunk_elems = kStreamChunkBytes / elem;
  std::vector<unsigned char> buf(chunk_elems * elem);

  size_t done = 0;
  const size_t total = static_cast<size_t>(rec.num_elements());
  while (done < total) {
    const size_t n = std::min(chunk_elems, total - done);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * elem)))
      throw Error("payload length mismatch for tensor '" + rec.name + "'");
    if (rec.dtype == Dtype::F32) {
      for (size_t i = 0; i < n; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<uint32_t>(buf[4 * i + b]) << (8 * b);
        float f;
        static_assert(sizeof(f) == 4);
        std::memcpy(&f, &bits, 4);
        acc[done + i] += w * static_cast<double>(f);
      }
    } else {
      for (size_t i = 0; i < n; ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
          bits |= static_cast<uint64_t>(buf[8 * i + b]) << (8 * b);
        double d;
        std::memcpy(&d, &bits, 8);
        acc[done + i] += w * d;
      }
    }
    done += n;
  }
}

}  // namespace

MergeReport merge(const std::vector<std::filesystem::path>& inputs,
                  const WeightVector& weights, const std::filesystem::path& out_path,
                  MergeMode mode, const std::string& strategy_label) {
  if (inputs.empty()) throw Error("merge requires at least one input checkpoint");
  weights.validate();
  if (weights.size() != inputs.size())
    throw Error("weight count (" + std::to_string(weights.size()) +
                ") does not match input count (" + std::to_string(inputs.size()) + ")");

  std::vector<CheckpointContainer> containers;
  containers.reserve(inputs.size());
  for (const auto& p : inputs) containers.push_back(read_container(p));
  check_same_tensor_sets(containers);
  const CheckpointContainer& ref = containers.front();
  const CheckpointContainer& newest = containers.back();

  json weights_json = json::array();
  for (double w : weights.weights) weights_json.push_back(w);
  json inputs_json = json::array();
  for (const auto& p : inputs) inputs_json.push_back(p.string());

  std::map<std::string, std::string> metadata;
  metadata["step"] = std::to_string(newest.step());
  metadata["tokens"] = std::to_string(newest.tokens());
  metadata["merge_strategy"] = strategy_label;
  metadata["merge_inputs"] = inputs_json.dump();
  metadata["merge_weights"] = weights_json.dump();

  std::vector<ContainerWriter::Spec> specs;
  for (const auto& [name, rec] : ref.tensors) specs.push_back({name, rec.dtype, rec.shape});
  ContainerWriter writer(out_path, std::move(specs), metadata);

  // In-memory mode loads every input tensor up front; streaming mode keeps
  // one f64 accumulator per tensor plus a bounded chunk. The per-element
  // arithmetic is identical, so both modes emit the same bytes.
  std::vector<std::map<std::string, std::vector<double>>> loaded;
  if (mode == MergeMode::InMemory) {
    loaded.resize(containers.size());
    for (size_t i = 0; i < containers.size(); ++i)
      for (const auto& [name, _] : ref.tensors)
        loaded[i][name] = load_tensor(containers[i], name);
  }

  MergeReport report;
  report.inputs.reserve(inputs.size());
  for (const auto& p : inputs) report.inputs.push_back(p.string());
  report.weights = weights.weights;
  report.strategy = strategy_label;

  for (const auto& [name, rec] : ref.tensors) {
    const size_t n = static_cast<size_t>(rec.num_elements());
    std::vector<double> acc(n, 0.0);
    for (size_t i = 0; i < containers.size(); ++i) {
      const double w = weights[i];
      if (mode == MergeMode::InMemory) {
        const std::vector<double>& x = loaded[i].at(name);
        for (size_t e = 0; e < n; ++e) acc[e] += w * x[e];
      } else {
        accumulate_chunked(containers[i], containers[i].tensors.at(name), w, acc);
      }
    }
    writer.append(name, acc);
    report.per_tensor.push_back({name, rec.num_elements()});
  }
  writer.finish();

  report.sha256 = sha256_file(out_path);

  json report_json;
  report_json["inputs"] = inputs_json;
  report_json["weights"] = weights_json;
  report_json["strategy"] = strategy_label;
  json per_tensor = json::array();
  for (const auto& pt : report.per_tensor)
    per_tensor.push_back({{"name", pt.name}, {"elements", pt.elements}});
  report_json["per_tensor"] = std::move(per_tensor);
  report_json["sha256"] = report.sha256;

  std::ofstream rep(out_path.string() + ".merge.json", std::ios::trunc);
  if (!rep) throw Error("cannot write merge report for '" + out_path.string() + "'");
  rep << report_json.dump(2) << "\n";

  return report;
}

MergeReport merge_with_strategy(const std::vector<std::filesystem::path>& inputs,
                                const MergeStrategy& strategy,
                                const std::filesystem::path& out_path, MergeMode mode) {
  const WeightVector w = compute_weights(strategy, static_cast<int64_t>(inputs.size()));
  return merge(inputs, w, out_path, mode, strategy.label());
}

}  // namespace pma
