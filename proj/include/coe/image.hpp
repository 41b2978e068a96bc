#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "coe/rng.hpp"
#include "coe/tensor.hpp"

namespace coe {

class ImageIOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-channel image, row-major, intensities on [0, 1]. Noisy AWGN images
/// may leave that range; nothing here clamps implicitly.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, float fill = 0.0f);

  float& operator()(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  float operator()(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::size_t size() const noexcept { return pixels.size(); }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// [1, 1, H, W] view of one image, and back.
Tensor to_tensor(const GrayImage& image);
GrayImage from_tensor(const Tensor& t, std::size_t index = 0);

GrayImage clamp01(GrayImage image);
GrayImage crop(const GrayImage& image, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

/// Binary 8-bit PGM (P5). Maxval must be 255; comments are skipped.
GrayImage load_pgm(const std::filesystem::path& path);
/// Writes P5, maxval 255, each pixel clamped to [0,1] and rounded to the nearest byte.
void save_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Every *.pgm in `dir`, sorted by filename.
std::vector<std::filesystem::path> list_pgm(const std::filesystem::path& dir);
std::vector<GrayImage> load_pgm_dir(const std::filesystem::path& dir);

enum class SynthKind { Gradient, Checker, Perlin, Mixed };

SynthKind parse_synth_kind(const std::string& name);
const char* synth_kind_name(SynthKind kind) noexcept;

/// Procedural square test image of side `size`. Deterministic in the RNG state.
GrayImage synth_image(SynthKind kind, std::size_t size, Rng& rng);

}  // namespace coe
