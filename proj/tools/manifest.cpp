#include "manifest.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "coe/checkpoint.hpp"

namespace coe::cli {

namespace fs = std::filesystem;

std::string file_fnv1a64(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for hashing");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().extension() != ".tmp")
      files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());

  nlohmann::json j;
  j["tool"] = "coe";
  j["manifest_version"] = kManifestVersion;
  j["checkpoint_version"] = kCheckpointVersion;
  j["command"] = m.command;
  j["args"] = m.args;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["files"] = nlohmann::json::array();
  for (const auto& f : files)
    j["files"].push_back({{"path", f.generic_string()},
                          {"bytes", fs::file_size(dir / f)},
                          {"fnv1a64", file_fnv1a64(dir / f)}});
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error((dir / "manifest.json").string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

}  // namespace coe::cli
