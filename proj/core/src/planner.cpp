// SPDX-License-Identifier: Apache-2.0
#include "pma/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "pma/util.hpp"

namespace pma {

using nlohmann::json;

MergePlan plan(const TrajectoryManifest& manifest, const MergeStrategy& strategy,
               int64_t n, int64_t interval_tokens, std::optional<int64_t> anchor_tokens) {
  manifest.validate();
  if (manifest.entries.empty()) throw Error("empty manifest");
  if (n < 1) throw Error("plan requires n >= 1");
  if (interval_tokens <= 0) throw Error("interval_tokens must be > 0");

  const auto& entries = manifest.entries;
  size_t anchor_idx = entries.size() - 1;
  if (anchor_tokens) {
    // Latest checkpoint at or before the requested anchor.
    auto it = std::find_if(entries.rbegin(), entries.rend(),
                           [&](const TrajectoryEntry& e) { return e.tokens <= *anchor_tokens; });
    if (it == entries.rend())
      throw Error("no checkpoint at or before anchor " + std::to_string(*anchor_tokens) +
                  " tokens");
    anchor_idx = static_cast<size_t>(std::distance(it, entries.rend())) - 1;
  }
  const int64_t anchor = entries[anchor_idx].tokens;

  std::vector<size_t> picked;  // newest -> oldest while walking backward
  std::set<size_t> used;
  for (int64_t k = 0; k < n; ++k) {
    const int64_t target = anchor - k * interval_tokens;
    size_t best = 0;
    int64_t best_dist = -1;
    for (size_t i = 0; i <= anchor_idx; ++i) {
      const int64_t dist = std::abs(entries[i].tokens - target);
      if (best_dist < 0 || dist <= best_dist) {  // <= : ties go to the later checkpoint
        best = i;
        best_dist = dist;
      }
    }
    if (2 * best_dist > interval_tokens)
      throw Error("insufficient history: no checkpoint within V/2 of target " +
                  std::to_string(target) + " tokens (reduce N or V)");
    if (!used.insert(best).second)
      throw Error("duplicate selection at " + std::to_string(entries[best].tokens) +
                  " tokens: checkpoint spacing is coarser than interval V");
    picked.push_back(best);
  }

  MergePlan p;
  p.strategy = strategy;
  p.n = n;
  p.interval_tokens = interval_tokens;
  p.source_dir = manifest.source_dir;
  for (auto it = picked.rbegin(); it != picked.rend(); ++it)
    p.resolved.push_back(entries[*it]);
  p.weights = compute_weights(strategy, n);
  return p;
}

int64_t recommend_interval(int64_t model_params_total) {
  if (model_params_total <= 0) throw Error("model_params_total must be > 0");
  struct Anchor {
    double params;
    double tokens;
  };
  static constexpr Anchor anchors[] = {{7e9, 4e9}, {13e9, 8e9}, {100e9, 80e9}};

  const double p = static_cast<double>(model_params_total);
  double tokens;
  if (p <= anchors[0].params) {
    tokens = anchors[0].tokens;
  } else if (p >= anchors[2].params) {
    tokens = anchors[2].tokens;
  } else {
    const Anchor& lo = p <= anchors[1].params ? anchors[0] : anchors[1];
    const Anchor& hi = p <= anchors[1].params ? anchors[1] : anchors[2];
    const double t = (std::log(p) - std::log(lo.params)) /
                     (std::log(hi.params) - std::log(lo.params));
    tokens = std::exp(std::log(lo.tokens) + t * (std::log(hi.tokens) - std::log(lo.tokens)));
  }
  return static_cast<int64_t>(std::llround(tokens / 1e9)) * 1000000000LL;
}

void save_plan(const MergePlan& plan, const std::filesystem::path& path) {
  json doc;
  json strat;
  strat["kind"] = [&] {
    switch (plan.strategy.kind) {
      case StrategyKind::Sma: return "sma";
      case StrategyKind::Ema: return "ema";
      case StrategyKind::Wma: return "wma";
      case StrategyKind::Custom: return "custom";
    }
    return "sma";
  }();
  if (plan.strategy.kind == StrategyKind::Ema) strat["alpha"] = plan.strategy.alpha;
  if (plan.strategy.kind == StrategyKind::Custom)
    strat["custom_weights"] = plan.strategy.custom_weights;
  doc["strategy"] = std::move(strat);
  doc["n"] = plan.n;
  doc["interval_tokens"] = plan.interval_tokens;
  doc["weights"] = plan.weights.weights;
  json resolved = json::array();
  for (const auto& e : plan.resolved) {
    resolved.push_back({{"checkpoint_path", e.checkpoint_path},
                        {"step", e.step},
                        {"tokens", e.tokens},
                        {"lr", e.lr},
                        {"train_loss", e.train_loss},
                        {"grad_norm", e.grad_norm}});
  }
  doc["resolved"] = std::move(resolved);
  doc["source_dir"] = plan.source_dir.string();

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
}

MergePlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw Error("plan not valid JSON: " + std::string(e.what()));
  }
  MergePlan p;
  const auto& strat = doc.at("strategy");
  const std::string kind = strat.at("kind").get<std::string>();
  if (kind == "sma") {
    p.strategy = MergeStrategy::sma();
  } else if (kind == "wma") {
    p.strategy = MergeStrategy::wma();
  } else if (kind == "ema") {
    p.strategy = MergeStrategy::ema(strat.at("alpha").get<double>());
  } else if (kind == "custom") {
    p.strategy = MergeStrategy::custom(strat.at("custom_weights").get<std::vector<double>>());
  } else {
    throw Error("unknown strategy kind '" + kind + "' in plan");
  }
  p.n = doc.at("n").get<int64_t>();
  p.interval_tokens = doc.at("interval_tokens").get<int64_t>();
  p.weights.weights = doc.at("weights").get<std::vector<double>>();
  p.weights.validate();
  for (const auto& j : doc.at("resolved")) {
    TrajectoryEntry e;
    e.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    e.step = j.at("step").get<int64_t>();
    e.tokens = j.at("tokens").get<int64_t>();
    e.lr = j.at("lr").get<double>();
    e.train_loss = j.at("train_loss").get<double>();
    e.grad_norm = j.at("grad_norm").get<double>();
    p.resolved.push_back(std::move(e));
  }
  if (doc.contains("source_dir")) p.source_dir = doc["source_dir"].get<std::string>();
  if (static_cast<int64_t>(p.resolved.size()) != p.n)
    throw Error("plan resolved entry count does not match n");
  return p;
}

}  // namespace pma
