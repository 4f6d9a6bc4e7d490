#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "segxray/checkpoint.hpp"
#include "segxray/errors.hpp"

namespace segxray {

inline constexpr const char* kToolkitVersion = "0.1.0";

inline std::string crc_hex(uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

// Every run writes one of these next to its artifacts: the command, the
// flags it resolved to, the seeds, and a content hash per emitted file.
// Re-running with the same flags must reproduce the hashes bit-exact.
struct RunManifest {
  std::string command;
  std::string version = kToolkitVersion;
  std::map<std::string, std::string> flags;
  std::map<std::string, uint64_t> seeds;
  std::string checkpoint_crc32;
  double wall_clock_sec = 0.0;
  std::vector<std::pair<std::string, std::string>> artifacts;  // relative path -> crc32
};

// Hash every file under out_dir except the manifest itself; paths sorted so
// the listing is deterministic.
inline void scan_artifacts(RunManifest& m, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  m.artifacts.clear();
  if (!fs::exists(out_dir)) return;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), out_dir).generic_string();
    if (rel == "manifest.json") continue;
    m.artifacts.emplace_back(rel, crc_hex(file_crc32(entry.path())));
  }
  std::sort(m.artifacts.begin(), m.artifacts.end());
}

inline void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["version"] = m.version;
  j["flags"] = m.flags;
  nlohmann::json seeds = nlohmann::json::object();
  for (const auto& [k, v] : m.seeds) seeds[k] = v;
  j["seeds"] = seeds;
  if (!m.checkpoint_crc32.empty()) j["checkpoint_crc32"] = m.checkpoint_crc32;
  j["wall_clock_sec"] = m.wall_clock_sec;
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& [path, crc] : m.artifacts) arts.push_back({{"path", path}, {"crc32", crc}});
  j["artifacts"] = arts;

  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw MissingFileError("cannot write manifest in " + out_dir.string());
  out << j.dump(2) << "\n";
}

inline RunManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingFileError("manifest not found: " + file.string());
  nlohmann::json j;
  in >> j;
  RunManifest m;
  m.command = j.value("command", "");
  m.version = j.value("version", "");
  if (j.contains("flags"))
    for (const auto& [k, v] : j["flags"].items()) m.flags[k] = v.get<std::string>();
  if (j.contains("seeds"))
    for (const auto& [k, v] : j["seeds"].items()) m.seeds[k] = v.get<uint64_t>();
  m.checkpoint_crc32 = j.value("checkpoint_crc32", "");
  m.wall_clock_sec = j.value("wall_clock_sec", 0.0);
  if (j.contains("artifacts"))
    for (const auto& a : j["artifacts"])
      m.artifacts.emplace_back(a["path"].get<std::string>(), a["crc32"].get<std::string>());
  return m;
}

// Artifact-content equality: same files, same hashes (wall clock and
// incidental fields are allowed to differ).
inline bool artifacts_match(const RunManifest& a, const RunManifest& b) {
  return a.artifacts == b.artifacts;
}

// Named scalar results with tolerance bands, recorded by analysis runs and
// re-checked as regression gates.
struct ResultBand {
  double value = 0.0;
  double min = 0.0;
  double max = 0.0;

  bool contains(double v) const { return v >= min && v <= max; }
};

using ExpectedResults = std::map<std::string, ResultBand>;

inline ExpectedResults load_expected_results(const std::filesystem::path& file) {
  ExpectedResults out;
  std::ifstream in(file);
  if (!in) return out;
  nlohmann::json j;
  in >> j;
  for (const auto& [k, v] : j.items())
    out[k] = ResultBand{v.value("value", 0.0), v.value("min", 0.0), v.value("max", 0.0)};
  return out;
}

inline void save_expected_results(const std::filesystem::path& file, const ExpectedResults& er) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, b] : er)
    j[k] = {{"value", b.value}, {"min", b.min}, {"max", b.max}};
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw MissingFileError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

}  // namespace segxray
