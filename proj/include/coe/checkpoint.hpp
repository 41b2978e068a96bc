#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coe/models.hpp"
#include "coe/rng.hpp"

namespace coe {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training or run inference. Byte layout is
/// documented in docs/formats.md.
struct Checkpoint {
  ExpertConfig expert_config;
  std::vector<ExpertNet> experts;
  std::optional<GateNet> gate;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  Rng::State rng_state;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Array names in file order, e.g. "expert0/0.weight", "gate/adam_m/8.bias".
std::vector<std::string> checkpoint_array_names(const std::filesystem::path& path);

}  // namespace coe
