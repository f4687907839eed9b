// SPDX-License-Identifier: Apache-2.0
#include "pma/manifest.hpp"

#include <fstream>

#include "json.hpp"
#include "pma/util.hpp"

namespace pma {

using nlohmann::json;

void TrajectoryManifest::validate() const {
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.tokens < 0) throw Error("manifest entry has negative tokens");
    if (e.lr < 0.0) throw Error("manifest entry has negative lr");
    if (e.grad_norm < 0.0) throw Error("manifest entry has negative grad_norm");
    if (i > 0) {
      if (e.step <= entries[i - 1].step)
        throw Error("manifest steps must be strictly increasing");
      if (e.tokens < entries[i - 1].tokens)
        throw Error("manifest tokens must be non-decreasing");
    }
  }
}

std::filesystem::path TrajectoryManifest::resolve(const TrajectoryEntry& e) const {
  std::filesystem::path p(e.checkpoint_path);
  if (p.is_absolute() || source_dir.empty()) return p;
  return source_dir / p;
}

void save_manifest(const TrajectoryManifest& m, const std::filesystem::path& path) {
  m.validate();
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"checkpoint_path", e.checkpoint_path},
                       {"step", e.step},
                       {"tokens", e.tokens},
                       {"lr", e.lr},
                       {"train_loss", e.train_loss},
                       {"grad_norm", e.grad_norm}});
  }
  json doc;
  doc["entries"] = std::move(entries);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << "\n";
}

TrajectoryManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw Error("manifest not valid JSON: " + std::string(e.what()));
  }
  TrajectoryManifest m;
  m.source_dir = path.parent_path();
  for (const auto& j : doc.at("entries")) {
    TrajectoryEntry e;
    e.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    e.step = j.at("step").get<int64_t>();
    e.tokens = j.at("tokens").get<int64_t>();
    e.lr = j.at("lr").get<double>();
    e.train_loss = j.at("train_loss").get<double>();
    e.grad_norm = j.at("grad_norm").get<double>();
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

}  // namespace pma
