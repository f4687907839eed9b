// SPDX-License-Identifier: Apache-2.0
//
// pma: checkpoint merging and desk-scale training experiments.
//
// Exit codes: 0 success / recipe pass, 1 usage error, 2 recipe fail,
// 3 runtime error.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pma/container.hpp"
#include "pma/manifest.hpp"
#include "pma/merge.hpp"
#include "pma/planner.hpp"
#include "pma/recipes.hpp"
#include "pma/trainer.hpp"
#include "pma/util.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRecipeFail = 2;
constexpr int kExitRuntime = 3;

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const pma::TrainConfig cfg = pma::load_train_config(config_path);
  bool diverged = false;
  try {
    pma::train(cfg, out_dir);
  } catch (const pma::DivergedError& e) {
    std::cerr << e.what() << "\n";
    diverged = true;
  }
  if (diverged) return kExitRuntime;

  const auto rows = pma::load_metrics(std::filesystem::path(out_dir) / "metrics.csv");
  const auto spike_step = pma::detect_spike(rows);
  nlohmann::json summary;
  summary["steps"] = cfg.steps;
  summary["final_loss"] = rows.back().loss;
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->val_loss) {
      summary["final_val_loss"] = *it->val_loss;
      break;
    }
  }
  summary["spike_configured"] = cfg.spike.has_value();
  summary["spike_detected"] = spike_step.has_value();
  if (spike_step) summary["spike_step"] = *spike_step;
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_plan(const std::string& manifest_path, const std::string& strategy_label,
             std::optional<double> alpha, const std::vector<double>& custom_weights,
             int64_t n, int64_t interval_tokens, std::optional<int64_t> anchor_tokens,
             const std::string& out_path) {
  const pma::TrajectoryManifest manifest = pma::load_manifest(manifest_path);
  const pma::MergeStrategy strategy =
      pma::strategy_from_label(strategy_label, alpha, custom_weights);
  const pma::MergePlan plan =
      pma::plan(manifest, strategy, n, interval_tokens, anchor_tokens);
  pma::save_plan(plan, out_path);
  std::cout << "plan: " << plan.resolved.size() << " checkpoints, newest at "
            << plan.resolved.back().tokens << " tokens -> " << out_path << "\n";
  return kExitOk;
}

int cmd_merge(const std::string& plan_path, const std::vector<std::string>& inputs,
              const std::string& strategy_label, std::optional<double> alpha,
              const std::vector<double>& custom_weights, const std::string& mode_label,
              const std::string& out_path) {
  const pma::MergeMode mode = [&] {
    if (mode_label == "memory") return pma::MergeMode::InMemory;
    if (mode_label == "streaming") return pma::MergeMode::Streaming;
    throw pma::Error("unknown mode '" + mode_label + "' (expected memory|streaming)");
  }();

  pma::MergeReport report;
  if (!plan_path.empty()) {
    const pma::MergePlan plan = pma::load_plan(plan_path);
    std::vector<std::filesystem::path> paths;
    for (const auto& e : plan.resolved) {
      std::filesystem::path p(e.checkpoint_path);
      if (!p.is_absolute() && !plan.source_dir.empty()) p = plan.source_dir / p;
      paths.push_back(p);
    }
    report = pma::merge(paths, plan.weights, out_path, mode, plan.strategy.label());
  } else {
    if (inputs.empty()) throw pma::Error("merge requires --plan or --inputs");
    const pma::MergeStrategy strategy =
        pma::strategy_from_label(strategy_label, alpha, custom_weights);
    std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
    report = pma::merge_with_strategy(paths, strategy, out_path, mode);
  }
  std::cout << "merged " << report.inputs.size() << " checkpoints (" << report.strategy
            << ") -> " << out_path << "\nsha256 " << report.sha256 << "\n";
  return kExitOk;
}

int cmd_recipe(const std::string& id, const std::vector<uint64_t>& seeds,
               const std::string& out_dir) {
  const pma::RecipeResult result = pma::run_recipe(id, seeds, out_dir);
  std::cout << result.recipe_id << (result.pass ? " PASS" : " FAIL") << "\n"
            << "criterion: " << result.criterion << "\n"
            << "aggregate: " << result.aggregate.dump() << "\n";
  return result.pass ? kExitOk : kExitRecipeFail;
}

int cmd_recommend(int64_t params_total) {
  std::cout << pma::recommend_interval(params_total) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"checkpoint merging (SMA/EMA/WMA), selection planning, and "
               "desk-scale training experiments"};
  app.require_subcommand(1);

  // train
  std::string train_config, train_out;
  auto* train = app.add_subcommand("train", "run a training config");
  train->add_option("--config", train_config, "TrainConfig JSON file")->required();
  train->add_option("--out", train_out, "output directory")->required();

  // plan
  std::string plan_manifest, plan_strategy = "sma", plan_out;
  std::optional<double> plan_alpha;
  std::vector<double> plan_weights;
  int64_t plan_n = 10;
  int64_t plan_interval = 0;
  std::optional<int64_t> plan_anchor;
  auto* plan = app.add_subcommand("plan", "select checkpoints to merge from a manifest");
  plan->add_option("--manifest", plan_manifest, "trajectory.json path")->required();
  plan->add_option("--strategy", plan_strategy, "sma|ema|wma|custom");
  plan->add_option("--alpha", plan_alpha, "EMA smoothing factor");
  plan->add_option("--weights", plan_weights, "custom weights")->delimiter(',');
  plan->add_option("--n", plan_n, "number of checkpoints (default 10)");
  plan->add_option("--interval-tokens", plan_interval, "token interval V")->required();
  plan->add_option("--anchor-tokens", plan_anchor, "anchor (default: last checkpoint)");
  plan->add_option("--out", plan_out, "plan.json output path")->required();

  // merge
  std::string merge_plan, merge_strategy = "sma", merge_mode = "streaming", merge_out;
  std::optional<double> merge_alpha;
  std::vector<double> merge_weights;
  std::vector<std::string> merge_inputs;
  auto* merge = app.add_subcommand("merge", "merge checkpoints into one");
  merge->add_option("--plan", merge_plan, "plan.json produced by `pma plan`");
  merge->add_option("--inputs", merge_inputs, "checkpoint paths, oldest first")
      ->delimiter(',');
  merge->add_option("--strategy", merge_strategy, "sma|ema|wma|custom");
  merge->add_option("--alpha", merge_alpha, "EMA smoothing factor");
  merge->add_option("--weights", merge_weights, "custom weights")->delimiter(',');
  merge->add_option("--mode", merge_mode, "memory|streaming (default streaming)");
  merge->add_option("--out", merge_out, "output checkpoint path")->required();

  // recipe
  std::string recipe_id, recipe_out;
  std::vector<uint64_t> recipe_seeds;
  auto* recipe = app.add_subcommand("recipe", "run a scripted multi-seed experiment");
  recipe->add_option("--id", recipe_id, "r1..r7")->required();
  recipe->add_option("--seeds", recipe_seeds, "seed list (default 1..10)")->delimiter(',');
  recipe->add_option("--out", recipe_out, "output directory")->required();

  // recommend-interval
  int64_t rec_params = 0;
  auto* recommend = app.add_subcommand("recommend-interval",
                                       "advisory merge interval for a model size");
  recommend->add_option("--params", rec_params, "total parameter count")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_config, train_out);
    if (*plan)
      return cmd_plan(plan_manifest, plan_strategy, plan_alpha, plan_weights, plan_n,
                      plan_interval, plan_anchor, plan_out);
    if (*merge)
      return cmd_merge(merge_plan, merge_inputs, merge_strategy, merge_alpha,
                       merge_weights, merge_mode, merge_out);
    if (*recipe) {
      if (recipe_seeds.empty())
        for (uint64_t s = 1; s <= 10; ++s) recipe_seeds.push_back(s);
      return cmd_recipe(recipe_id, recipe_seeds, recipe_out);
    }
    if (*recommend) return cmd_recommend(rec_params);
  } catch (const pma::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    // Bad user input (unknown recipe, malformed flags) is a usage error.
    const std::string what = e.what();
    if (what.rfind("unknown recipe", 0) == 0 || what.rfind("unknown strategy", 0) == 0 ||
        what.rfind("unknown mode", 0) == 0 || what.rfind("cannot open config", 0) == 0)
      return kExitUsage;
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
