// SPDX-License-Identifier: Apache-2.0
#include "pma/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "pma/util.hpp"

namespace pma {

using nlohmann::json;

namespace {

constexpr double kMomentum = 0.9;

std::string checkpoint_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%08lld.pma", static_cast<long long>(step));
  return buf;
}

std::filesystem::path momentum_sidecar(const std::filesystem::path& ckpt) {
  std::filesystem::path p = ckpt;
  p.replace_extension(".mom.pma");
  return p;
}

json strategy_to_json(const MergeStrategy& s) {
  json j;
  switch (s.kind) {
    case StrategyKind::Sma: j["kind"] = "sma"; break;
    case StrategyKind::Ema: j["kind"] = "ema"; j["alpha"] = s.alpha; break;
    case StrategyKind::Wma: j["kind"] = "wma"; break;
    case StrategyKind::Custom: j["kind"] = "custom"; j["custom_weights"] = s.custom_weights; break;
  }
  return j;
}

MergeStrategy strategy_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "sma") return MergeStrategy::sma();
  if (kind == "wma") return MergeStrategy::wma();
  if (kind == "ema") return MergeStrategy::ema(j.at("alpha").get<double>());
  if (kind == "custom")
    return MergeStrategy::custom(j.at("custom_weights").get<std::vector<double>>());
  throw Error("unknown strategy kind '" + kind + "'");
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  schedule.validate();
  if (steps < 1) throw Error("steps must be >= 1");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (checkpoint_every < 1) throw Error("checkpoint_every must be >= 1");
  if (steps % checkpoint_every != 0) throw Error("checkpoint_every must divide steps");
  if (tokens_per_step < 1) throw Error("tokens_per_step must be >= 1");
  if (start_step < 0) throw Error("start_step must be >= 0");
  if (start_step + steps > schedule.total_steps())
    throw Error("run extends past the schedule (start_step + steps > total)");
  if (spike) {
    if (!(spike->lr_multiplier > 1.0)) throw Error("spike lr_multiplier must be > 1");
    if (spike->at_step < 0 || spike->at_step >= steps)
      throw Error("spike at_step must be within [0, steps)");
    if (spike->duration_steps < 1) throw Error("spike duration_steps must be >= 1");
    if (spike->mode != "high_lr") throw Error("unknown spike mode '" + spike->mode + "'");
  }
}

void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["model"] = {
      {"kind", cfg.model.kind == ModelConfig::Kind::Mlp ? "mlp" : "linear_regression"},
      {"layer_widths", cfg.model.layer_widths}};
  doc["data"] = {{"task", cfg.data.task},
                 {"n_train", cfg.data.n_train},
                 {"n_val", cfg.data.n_val},
                 {"noise_std", cfg.data.noise_std}};
  doc["steps"] = cfg.steps;
  doc["batch_size"] = cfg.batch_size;
  doc["schedule"] = {{"lr_peak", cfg.schedule.lr_peak},
                     {"lr_end", cfg.schedule.lr_end},
                     {"warmup_steps", cfg.schedule.warmup_steps},
                     {"stable_steps", cfg.schedule.stable_steps},
                     {"decay_steps", cfg.schedule.decay_steps}};
  doc["checkpoint_every"] = cfg.checkpoint_every;
  doc["tokens_per_step"] = cfg.tokens_per_step;
  if (cfg.spike) {
    doc["spike"] = {{"mode", cfg.spike->mode},
                    {"lr_multiplier", cfg.spike->lr_multiplier},
                    {"at_step", cfg.spike->at_step},
                    {"duration_steps", cfg.spike->duration_steps}};
  }
  json init;
  switch (cfg.init.kind) {
    case InitSpec::Kind::Random:
      init["kind"] = "random";
      break;
    case InitSpec::Kind::PmaInit:
      init["kind"] = "pma_init";
      init["paths"] = cfg.init.paths;
      init["strategy"] = strategy_to_json(cfg.init.strategy);
      break;
    case InitSpec::Kind::Checkpoint:
      init["kind"] = "checkpoint";
      init["path"] = cfg.init.checkpoint_path;
      init["restore_momentum"] = cfg.init.restore_momentum;
      break;
  }
  doc["init"] = std::move(init);
  doc["start_step"] = cfg.start_step;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw Error("config not valid JSON: " + std::string(e.what()));
  }

  TrainConfig cfg;
  cfg.seed = doc.at("seed").get<uint64_t>();
  const auto& model = doc.at("model");
  const std::string kind = model.at("kind").get<std::string>();
  if (kind == "mlp") {
    cfg.model.kind = ModelConfig::Kind::Mlp;
  } else if (kind == "linear_regression") {
    cfg.model.kind = ModelConfig::Kind::LinearRegression;
  } else {
    throw Error("unknown model kind '" + kind + "'");
  }
  cfg.model.layer_widths = model.at("layer_widths").get<std::vector<int64_t>>();
  const auto& data = doc.at("data");
  cfg.data.task = data.at("task").get<std::string>();
  cfg.data.n_train = data.at("n_train").get<int64_t>();
  cfg.data.n_val = data.at("n_val").get<int64_t>();
  cfg.data.noise_std = data.at("noise_std").get<double>();
  cfg.steps = doc.at("steps").get<int64_t>();
  cfg.batch_size = doc.at("batch_size").get<int64_t>();
  const auto& sched = doc.at("schedule");
  cfg.schedule.lr_peak = sched.at("lr_peak").get<double>();
  cfg.schedule.lr_end = sched.at("lr_end").get<double>();
  cfg.schedule.warmup_steps = sched.at("warmup_steps").get<int64_t>();
  cfg.schedule.stable_steps = sched.at("stable_steps").get<int64_t>();
  cfg.schedule.decay_steps = sched.at("decay_steps").get<int64_t>();
  cfg.checkpoint_every = doc.at("checkpoint_every").get<int64_t>();
  cfg.tokens_per_step = doc.at("tokens_per_step").get<int64_t>();
  if (doc.contains("spike") && !doc["spike"].is_null()) {
    SpikeConfig spike;
    const auto& sj = doc["spike"];
    spike.mode = sj.value("mode", "high_lr");
    spike.lr_multiplier = sj.at("lr_multiplier").get<double>();
    spike.at_step = sj.at("at_step").get<int64_t>();
    spike.duration_steps = sj.value("duration_steps", int64_t{20});
    cfg.spike = spike;
  }
  if (doc.contains("init")) {
    const auto& ij = doc["init"];
    const std::string ikind = ij.at("kind").get<std::string>();
    if (ikind == "random") {
      cfg.init.kind = InitSpec::Kind::Random;
    } else if (ikind == "pma_init") {
      cfg.init.kind = InitSpec::Kind::PmaInit;
      cfg.init.paths = ij.at("paths").get<std::vector<std::string>>();
      cfg.init.strategy = strategy_from_json(ij.at("strategy"));
    } else if (ikind == "checkpoint") {
      cfg.init.kind = InitSpec::Kind::Checkpoint;
      cfg.init.checkpoint_path = ij.at("path").get<std::string>();
      cfg.init.restore_momentum = ij.value("restore_momentum", false);
    } else {
      throw Error("unknown init kind '" + ikind + "'");
    }
  }
  cfg.start_step = doc.value("start_step", int64_t{0});
  cfg.validate();
  return cfg;
}

std::vector<int64_t> batch_for_step(const TrainConfig& cfg, int64_t absolute_step) {
  Rng rng = stream_rng(cfg.seed, "batch", static_cast<uint64_t>(absolute_step));
  std::vector<int64_t> idx(static_cast<size_t>(cfg.batch_size));
  for (auto& i : idx)
    i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.data.n_train)));
  return idx;
}

std::vector<MetricsRow> load_metrics(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error("cannot open '" + csv_path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("empty metrics file");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    MetricsRow row;
    std::getline(ss, field, ',');
    row.step = std::stoll(field);
    std::getline(ss, field, ',');
    row.tokens = std::stoll(field);
    std::getline(ss, field, ',');
    row.lr = std::stod(field);
    std::getline(ss, field, ',');
    row.loss = std::stod(field);
    std::getline(ss, field, ',');
    row.grad_norm = std::stod(field);
    if (std::getline(ss, field, ',') && !field.empty()) row.val_loss = std::stod(field);
    rows.push_back(row);
  }
  return rows;
}

std::optional<int64_t> detect_spike(const std::vector<MetricsRow>& rows) {
  std::vector<double> window;
  for (size_t i = 1; i < rows.size(); ++i) {
    const size_t lo = i > 100 ? i - 100 : 0;
    window.clear();
    for (size_t j = lo; j < i; ++j) window.push_back(rows[j].loss);
    std::sort(window.begin(), window.end());
    const size_t m = window.size();
    const double median =
        m % 2 == 1 ? window[m / 2] : 0.5 * (window[m / 2 - 1] + window[m / 2]);
    if (rows[i].loss > 5.0 * median) return rows[i].step;
  }
  return std::nullopt;
}

TrajectoryManifest train(const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  save_train_config(cfg, out_dir / "train_config.json");

  const int64_t in_dim = cfg.model.layer_widths.front();
  const int64_t out_dim = cfg.model.layer_widths.back();
  const Dataset ds = make_dataset(cfg.seed, cfg.data, in_dim, out_dim);

  ToyModel model(cfg.model, ds.classification);
  std::vector<double> momentum(static_cast<size_t>(model.param_count()), 0.0);

  switch (cfg.init.kind) {
    case InitSpec::Kind::Random: {
      Rng rng = stream_rng(cfg.seed, "init");
      model.init_random(rng);
      break;
    }
    case InitSpec::Kind::Checkpoint: {
      const CheckpointContainer c = read_container(cfg.init.checkpoint_path);
      model.load_params(c);
      if (cfg.init.restore_momentum) {
        const std::filesystem::path side = momentum_sidecar(cfg.init.checkpoint_path);
        if (!std::filesystem::exists(side))
          throw Error("momentum sidecar missing: '" + side.string() + "'");
        momentum = ToyModel::flatten_container(cfg.model, read_container(side));
      }
      break;
    }
    case InitSpec::Kind::PmaInit: {
      if (cfg.init.paths.empty()) throw Error("pma_init requires checkpoint paths");
      std::vector<std::filesystem::path> paths(cfg.init.paths.begin(), cfg.init.paths.end());
      merge_with_strategy(paths, cfg.init.strategy, out_dir / "pma_init.pma",
                          MergeMode::Streaming);
      model.load_params(read_container(out_dir / "pma_init.pma"));
      break;  // momentum stays zero: merged weights match no optimizer state
    }
  }

  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  if (!metrics) throw Error("cannot open metrics.csv for writing");
  metrics << "step,tokens,lr,loss,grad_norm,val_loss\n";
  auto write_row = [&](const MetricsRow& r) {
    metrics << r.step << ',' << r.tokens << ',' << format_double(r.lr) << ','
            << format_double(r.loss) << ',' << format_double(r.grad_norm) << ',';
    if (r.val_loss) metrics << format_double(*r.val_loss);
    metrics << '\n';
  };

  TrajectoryManifest manifest;
  manifest.source_dir = out_dir;

  auto spike_multiplier = [&](int64_t local_step) {
    if (!cfg.spike) return 1.0;
    const bool active = local_step >= cfg.spike->at_step &&
                        local_step < cfg.spike->at_step + cfg.spike->duration_steps;
    return active ? cfg.spike->lr_multiplier : 1.0;
  };

  for (int64_t local = 0; local < cfg.steps; ++local) {
    const int64_t abs_step = cfg.start_step + local;
    const double lr = lr_at(cfg.schedule, abs_step) * spike_multiplier(local);
    const std::vector<int64_t> batch = batch_for_step(cfg, abs_step);
    const ToyModel::Eval eval = model.loss_and_grad(ds, batch);
    const double grad_norm = l2_norm(eval.grad);

    if (local == 0) {
      MetricsRow init_row{abs_step, abs_step * cfg.tokens_per_step, lr, eval.loss,
                          grad_norm, model.val_loss(ds)};
      write_row(init_row);
    }

    if (!std::isfinite(eval.loss) && !cfg.spike) {
      save_manifest(manifest, out_dir / "trajectory.json");
      metrics.flush();
      throw DivergedError("diverged: non-finite loss at step " + std::to_string(abs_step));
    }

    std::vector<double>& p = model.params();
    for (size_t i = 0; i < p.size(); ++i) {
      momentum[i] = kMomentum * momentum[i] + eval.grad[i];
      p[i] -= lr * momentum[i];
    }

    const int64_t completed = abs_step + 1;
    MetricsRow row{completed, completed * cfg.tokens_per_step, lr, eval.loss, grad_norm,
                   std::nullopt};

    if (completed % cfg.checkpoint_every == 0) {
      const std::string name = checkpoint_name(completed);
      std::map<std::string, std::string> meta{
          {"step", std::to_string(completed)},
          {"tokens", std::to_string(completed * cfg.tokens_per_step)},
          {"lr", format_double(lr)}};
      write_container(model.to_tensors(), meta, out_dir / name);
      write_container(model.to_tensors(momentum), meta,
                      momentum_sidecar(out_dir / name));

      TrajectoryEntry entry;
      entry.checkpoint_path = name;
      entry.step = completed;
      entry.tokens = completed * cfg.tokens_per_step;
      entry.lr = lr;
      entry.train_loss = eval.loss;
      entry.grad_norm = grad_norm;
      manifest.entries.push_back(entry);

      row.val_loss = model.val_loss(ds);
    }
    write_row(row);
  }

  save_manifest(manifest, out_dir / "trajectory.json");
  return manifest;
}

TrainConfig fork(const TrajectoryManifest& manifest, int64_t at_tokens,
                 const std::optional<WsdSchedule>& new_schedule) {
  if (manifest.entries.empty()) throw Error("cannot fork an empty trajectory");
  const std::filesystem::path cfg_path = manifest.source_dir / "train_config.json";
  TrainConfig cfg = load_train_config(cfg_path);

  const TrajectoryEntry* nearest = nullptr;
  int64_t best = std::numeric_limits<int64_t>::max();
  for (const auto& e : manifest.entries) {
    const int64_t d = std::abs(e.tokens - at_tokens);
    if (d <= best) {
      best = d;
      nearest = &e;
    }
  }
  const int64_t period_tokens = cfg.checkpoint_every * cfg.tokens_per_step;
  if (nearest == nullptr || 2 * best > period_tokens)
    throw Error("no checkpoint near " + std::to_string(at_tokens) + " tokens");

  if (new_schedule) {
    new_schedule->validate();
    cfg.schedule = *new_schedule;
  }
  cfg.start_step = nearest->step;
  cfg.steps = cfg.schedule.total_steps() - cfg.start_step;
  if (cfg.steps < 1)
    throw Error("fork point at or beyond the end of the schedule");
  cfg.init.kind = InitSpec::Kind::Checkpoint;
  cfg.init.checkpoint_path = manifest.resolve(*nearest).string();
  cfg.init.restore_momentum = true;
  cfg.init.paths.clear();
  cfg.spike.reset();
  return cfg;
}

TrajectoryManifest pma_init_resume(const TrajectoryManifest& manifest, int64_t n,
                                   const MergeStrategy& strategy,
                                   const TrainConfig& resume_config, const ResumePoint& at,
                                   const std::filesystem::path& out_dir) {
  if (n < 1) throw Error("pma_init_resume requires n >= 1");

  int64_t cutoff = std::numeric_limits<int64_t>::max();
  switch (at.mode) {
    case ResumePoint::Mode::AtEnd:
      break;
    case ResumePoint::Mode::AtStep:
      cutoff = at.step;
      break;
    case ResumePoint::Mode::AfterSpike: {
      const auto rows = load_metrics(manifest.source_dir / "metrics.csv");
      const auto spike_step = detect_spike(rows);
      if (!spike_step) throw Error("no spike found in trajectory metrics");
      cutoff = *spike_step;
      break;
    }
  }

  std::vector<const TrajectoryEntry*> usable;
  for (const auto& e : manifest.entries)
    if (e.step < cutoff) usable.push_back(&e);
  if (static_cast<int64_t>(usable.size()) < n)
    throw Error("fewer than " + std::to_string(n) + " usable checkpoints before the resume point (have " +
                std::to_string(usable.size()) + ")");

  std::vector<std::string> paths;
  for (size_t i = usable.size() - static_cast<size_t>(n); i < usable.size(); ++i)
    paths.push_back(manifest.resolve(*usable[i]).string());

  TrainConfig cfg = resume_config;
  cfg.init.kind = InitSpec::Kind::PmaInit;
  cfg.init.paths = paths;
  cfg.init.strategy = strategy;
  cfg.init.checkpoint_path.clear();
  cfg.init.restore_momentum = false;
  cfg.start_step = usable.back()->step;
  return train(cfg, out_dir);
}

}  // namespace pma
