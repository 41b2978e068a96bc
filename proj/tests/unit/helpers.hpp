#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "coe/image.hpp"
#include "coe/rng.hpp"
#include "coe/tensor.hpp"

namespace testing {

template <typename T>
coe::BasicTensor<T> random_tensor(const coe::Shape& shape, coe::Rng& rng, double scale = 1.0) {
  coe::BasicTensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("coe_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline coe::GrayImage textured(std::size_t size, std::uint64_t seed) {
  coe::Rng rng(seed);
  return coe::synth_image(coe::SynthKind::Mixed, size, rng);
}

}  // namespace testing
