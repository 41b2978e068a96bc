#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace coe::cli {

inline constexpr int kManifestVersion = 1;

/// manifest.json: command, arguments, seed, resolved config, format versions
/// and an inventory (size + FNV-1a 64) of every other file in the directory.
/// Carries no timestamps, so reruns produce byte-identical manifests.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
};

std::string file_fnv1a64(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

}  // namespace coe::cli
