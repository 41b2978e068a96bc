#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "coe/image.hpp"
#include "coe/rng.hpp"

namespace coe {

enum class NoiseSource { AWGN, JPEG };

const char* noise_source_name(NoiseSource s) noexcept;

inline constexpr double kMaxSigma = 55.0;
inline constexpr int kMinQuality = 5;
inline constexpr int kMaxQuality = 100;

/// Noise source plus level: sigma on the 0-255 scale for AWGN, integer
/// quality for JPEG. The trainer never sees this; it is logged for analysis.
struct NoiseSpec {
  NoiseSource source = NoiseSource::AWGN;
  double level = 0.0;

  static NoiseSpec awgn(double sigma);
  static NoiseSpec jpeg(int quality);

  int quality() const { return static_cast<int>(level); }
  std::string str() const;  // "awgn:25" / "jpeg:40"

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

NoiseSpec parse_noise_spec(const std::string& text);

/// Adds N(0, sigma/255) independently to each pixel. No clamping.
GrayImage add_awgn(const GrayImage& image, double sigma, Rng& rng);

using QuantTable = std::array<int, 64>;

/// Baseline-JPEG luminance table at quality 50, row-major.
const QuantTable& standard_luma_table() noexcept;

/// Luminance table scaled with the conventional libjpeg quality mapping.
QuantTable quant_table(int quality);

using Block8 = std::array<double, 64>;

/// Orthonormal 8x8 2-D DCT-II and its inverse.
Block8 dct8x8(const Block8& block);
Block8 idct8x8(const Block8& coeffs);

/// Luma-only JPEG round trip: 8x8 DCT, quantize/dequantize, inverse DCT,
/// clamp to [0,1]. Partial edge blocks are padded by edge replication.
GrayImage jpeg_degrade(const GrayImage& image, int quality);

/// Applies `spec`; AWGN consumes normals from `rng`, JPEG is deterministic.
GrayImage apply_noise(const GrayImage& image, const NoiseSpec& spec, Rng& rng);

/// Fair coin between sources, level uniform on [0,55] or integer-uniform on [5,100].
NoiseSpec sample_noise_spec(Rng& rng);

/// Distribution the trainer draws a NoiseSpec from each iteration: either the
/// full two-source range, or a uniform pick from a fixed list of specs.
class NoiseMix {
 public:
  NoiseMix() = default;  // full two-source range
  explicit NoiseMix(std::vector<NoiseSpec> choices);

  /// "paper" for the full range, else a ';'-separated list such as
  /// "awgn:5,50" or "awgn:15;jpeg:10,40".
  static NoiseMix parse(const std::string& text);

  NoiseSpec sample(Rng& rng) const;
  bool is_full_range() const noexcept { return choices_.empty(); }
  const std::vector<NoiseSpec>& choices() const noexcept { return choices_; }
  std::string str() const;

 private:
  std::vector<NoiseSpec> choices_;
};

struct GridEntry {
  std::size_t image_index = 0;
  NoiseSpec spec;
};

using EvalGrid = std::vector<GridEntry>;

/// Graded evaluation levels for n images: sigma_i = i*55/n for AWGN,
/// q_i = round(5 + i*95/n) for JPEG, i = 0..n-1.
EvalGrid make_eval_grid(NoiseSource kind, std::size_t n);

/// CSV with header "image_index,source,level".
void write_grid_csv(const std::filesystem::path& path, const EvalGrid& grid);
EvalGrid read_grid_csv(const std::filesystem::path& path);

}  // namespace coe
