// SPDX-License-Identifier: Apache-2.0
//
// Run manifests: config hash, seed, versions and a content hash per output
// artifact. No timestamps or host names, so identical runs give identical
// manifests.
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "drm/errors.hpp"

namespace drm {

inline constexpr std::string_view kVersion = "0.1.0";

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("short write to " + p.string());
}

/// Hash of the canonical (sorted-key, compact) JSON dump.
inline std::string config_hash(const nlohmann::json& resolved) { return hex64(fnv1a64(resolved.dump())); }

class Manifest {
 public:
  Manifest(std::string command, nlohmann::json resolved_config, std::uint64_t seed)
      : command_(std::move(command)), config_(std::move(resolved_config)), seed_(seed) {}

  /// Records an already-written file by name relative to the output directory.
  void add_artifact(const std::filesystem::path& dir, const std::string& name) {
    artifacts_.push_back({name, hex64(fnv1a64(read_bytes(dir / name)))});
  }

  nlohmann::json to_json() const {
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& [name, h] : artifacts_) arts.push_back({{"path", name}, {"fnv1a64", h}});
    return {{"tool", "drm"},
            {"command", command_},
            {"versions", {{"drm", std::string(kVersion)}, {"nlohmann_json", json_version()}}},
            {"seed", seed_},
            {"config_hash", config_hash(config_)},
            {"config", config_},
            {"artifacts", arts}};
  }

  void write(const std::filesystem::path& dir) const { write_text(dir / "manifest.json", to_json().dump(2) + "\n"); }

 private:
  static std::string json_version() {
    return std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
           std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  }

  std::string command_;
  nlohmann::json config_;
  std::uint64_t seed_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
};

}  // namespace drm
