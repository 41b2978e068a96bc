#include "coe/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace coe {

const char* noise_source_name(NoiseSource s) noexcept {
  return s == NoiseSource::AWGN ? "awgn" : "jpeg";
}

NoiseSpec NoiseSpec::awgn(double sigma) {
  if (!(sigma >= 0.0 && sigma <= kMaxSigma))
    throw std::invalid_argument("AWGN sigma " + std::to_string(sigma) + " outside [0, 55]");
  return {NoiseSource::AWGN, sigma};
}

NoiseSpec NoiseSpec::jpeg(int quality) {
  if (quality < kMinQuality || quality > kMaxQuality)
    throw std::invalid_argument("JPEG quality " + std::to_string(quality) + " outside [5, 100]");
  return {NoiseSource::JPEG, static_cast<double>(quality)};
}

std::string NoiseSpec::str() const {
  std::ostringstream os;
  os << noise_source_name(source) << ":";
  if (source == NoiseSource::JPEG)
    os << quality();
  else
    os << std::setprecision(10) << level;
  return os.str();
}

NoiseSpec parse_noise_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("noise spec '" + text + "' lacks ':'");
  const std::string kind = text.substr(0, colon), value = text.substr(colon + 1);
  if (kind == "awgn") return NoiseSpec::awgn(std::stod(value));
  if (kind == "jpeg") return NoiseSpec::jpeg(std::stoi(value));
  throw std::invalid_argument("unknown noise source '" + kind + "'");
}

GrayImage add_awgn(const GrayImage& image, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("AWGN sigma must be non-negative");
  GrayImage out = image;
  if (sigma == 0.0) return out;
  const double scale = sigma / 255.0;
  for (auto& p : out.pixels) p = static_cast<float>(p + scale * rng.normal());
  return out;
}

const QuantTable& standard_luma_table() noexcept {
  static constexpr QuantTable table = {
      16, 11, 10, 16, 24,  40,  51,  61,   //
      12, 12, 14, 19, 26,  58,  60,  55,   //
      14, 13, 16, 24, 40,  57,  69,  56,   //
      14, 17, 22, 29, 51,  87,  80,  62,   //
      18, 22, 37, 56, 68,  109, 103, 77,   //
      24, 35, 55, 64, 81,  104, 113, 92,   //
      49, 64, 78, 87, 103, 121, 120, 101,  //
      72, 92, 95, 98, 112, 100, 103, 99};
  return table;
}

QuantTable quant_table(int quality) {
  if (quality < 1 || quality > 100)
    throw std::invalid_argument("JPEG quality " + std::to_string(quality) + " outside [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTable q{};
  const auto& base = standard_luma_table();
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return q;
}

namespace {

// basis[u][x] = c(u) cos((2x+1) u pi / 16)
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u][x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

}  // namespace

Block8 dct8x8(const Block8& block) {
  const auto& b = dct_basis();
  Block8 tmp{}, out{};
  // rows, then columns
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += b[u][x] * block[y * 8 + x];
      tmp[y * 8 + u] = acc;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += b[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = acc;
    }
  return out;
}

Block8 idct8x8(const Block8& coeffs) {
  const auto& b = dct_basis();
  Block8 tmp{}, out{};
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += b[u][x] * coeffs[v * 8 + u];
      tmp[v * 8 + x] = acc;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += b[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = acc;
    }
  return out;
}

GrayImage jpeg_degrade(const GrayImage& image, int quality) {
  const QuantTable q = quant_table(quality);
  if (image.width == 0 || image.height == 0) throw std::invalid_argument("jpeg_degrade: empty image");
  const std::size_t w = image.width, h = image.height;
  GrayImage out(w, h);
  Block8 block{};
  for (std::size_t by = 0; by < h; by += 8)
    for (std::size_t bx = 0; bx < w; bx += 8) {
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t sx = std::min(bx + x, w - 1), sy = std::min(by + y, h - 1);
          block[y * 8 + x] = (static_cast<double>(image(sx, sy)) - 0.5) * 255.0;
        }
      Block8 coeffs = dct8x8(block);
      for (std::size_t i = 0; i < 64; ++i) coeffs[i] = std::round(coeffs[i] / q[i]) * q[i];
      const Block8 rec = idct8x8(coeffs);
      for (std::size_t y = 0; y < 8 && by + y < h; ++y)
        for (std::size_t x = 0; x < 8 && bx + x < w; ++x)
          out(bx + x, by + y) = static_cast<float>(std::clamp(rec[y * 8 + x] / 255.0 + 0.5, 0.0, 1.0));
    }
  return out;
}

GrayImage apply_noise(const GrayImage& image, const NoiseSpec& spec, Rng& rng) {
  if (spec.source == NoiseSource::AWGN) return add_awgn(image, spec.level, rng);
  return jpeg_degrade(image, spec.quality());
}

NoiseSpec sample_noise_spec(Rng& rng) {
  if (rng.uniform() < 0.5) return NoiseSpec::awgn(rng.uniform(0.0, kMaxSigma));
  return NoiseSpec::jpeg(static_cast<int>(rng.uniform_int(kMinQuality, kMaxQuality)));
}

NoiseMix::NoiseMix(std::vector<NoiseSpec> choices) : choices_(std::move(choices)) {
  if (choices_.empty()) throw std::invalid_argument("noise mix needs at least one spec");
}

NoiseMix NoiseMix::parse(const std::string& text) {
  if (text.empty() || text == "paper" || text == "full") return NoiseMix{};
  std::vector<NoiseSpec> specs;
  std::stringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    const auto colon = group.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("noise mix group '" + group + "' lacks ':'");
    const std::string kind = group.substr(0, colon);
    std::stringstream levels(group.substr(colon + 1));
    std::string level;
    while (std::getline(levels, level, ','))
      specs.push_back(parse_noise_spec(kind + ":" + level));
  }
  return NoiseMix(std::move(specs));
}

NoiseSpec NoiseMix::sample(Rng& rng) const {
  if (choices_.empty()) return sample_noise_spec(rng);
  return choices_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(choices_.size()) - 1))];
}

std::string NoiseMix::str() const {
  if (choices_.empty()) return "paper";
  std::string s;
  for (std::size_t i = 0; i < choices_.size(); ++i) {
    if (i) s += ";";
    s += choices_[i].str();
  }
  return s;
}

EvalGrid make_eval_grid(NoiseSource kind, std::size_t n) {
  if (n == 0) throw std::invalid_argument("evaluation grid needs n >= 1");
  EvalGrid grid;
  grid.reserve(n);
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double di = static_cast<double>(i);
    if (kind == NoiseSource::AWGN)
      grid.push_back({i, NoiseSpec::awgn(di * kMaxSigma / dn)});
    else
      grid.push_back({i, NoiseSpec::jpeg(static_cast<int>(std::lround(5.0 + di * 95.0 / dn)))});
  }
  return grid;
}

void write_grid_csv(const std::filesystem::path& path, const EvalGrid& grid) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "image_index,source,level\n";
  out << std::setprecision(17);
  for (const auto& e : grid) {
    out << e.image_index << "," << noise_source_name(e.spec.source) << ",";
    if (e.spec.source == NoiseSource::JPEG)
      out << e.spec.quality();
    else
      out << e.spec.level;
    out << "\n";
  }
}

EvalGrid read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::string line;
  if (!std::getline(in, line) || line != "image_index,source,level")
    throw std::runtime_error(path.string() + ": unexpected grid CSV header");
  EvalGrid grid;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string idx, src, lvl;
    if (!std::getline(row, idx, ',') || !std::getline(row, src, ',') || !std::getline(row, lvl))
      throw std::runtime_error(path.string() + ": malformed grid row '" + line + "'");
    grid.push_back({static_cast<std::size_t>(std::stoul(idx)), parse_noise_spec(src + ":" + lvl)});
  }
  return grid;
}

}  // namespace coe
