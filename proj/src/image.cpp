#include "coe/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace coe {

GrayImage::GrayImage(std::size_t w, std::size_t h, float fill) : width(w), height(h), pixels(w * h, fill) {}

Tensor to_tensor(const GrayImage& image) {
  return Tensor(Shape{1, 1, image.height, image.width}, image.pixels);
}

GrayImage from_tensor(const Tensor& t, std::size_t index) {
  expect_rank(t, 4, "image tensor");
  if (t.dim(1) != 1) throw ShapeError("image tensor must have one channel, got " + shape_str(t.shape()));
  if (index >= t.dim(0)) throw std::out_of_range("image index out of range");
  GrayImage img(t.dim(3), t.dim(2));
  const std::size_t n = img.size();
  std::copy(t.data() + index * n, t.data() + (index + 1) * n, img.pixels.begin());
  return img;
}

GrayImage clamp01(GrayImage image) {
  for (auto& p : image.pixels) p = std::clamp(p, 0.0f, 1.0f);
  return image;
}

GrayImage crop(const GrayImage& image, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > image.width || y0 + h > image.height)
    throw std::out_of_range("crop window exceeds image bounds");
  GrayImage out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>((y0 + y) * image.width + x0), w,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * w));
  return out;
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const std::string& where) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw ImageIOError(where + ": truncated PGM header");
  return tok;
}

std::size_t pgm_number(std::istream& in, const std::string& where) {
  const std::string tok = pgm_token(in, where);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size()) throw ImageIOError(where + ": malformed PGM header field '" + tok + "'");
  return v;
}

}  // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIOError(where + ": cannot open for reading");
  if (pgm_token(in, where) != "P5") throw ImageIOError(where + ": not a binary PGM (P5) file");
  const std::size_t w = pgm_number(in, where);
  const std::size_t h = pgm_number(in, where);
  const std::size_t maxval = pgm_number(in, where);
  if (w == 0 || h == 0) throw ImageIOError(where + ": zero image dimension");
  if (maxval != 255)
    throw ImageIOError(where + ": unsupported bit depth (maxval " + std::to_string(maxval) +
                       ", only 8-bit maxval 255 is supported)");
  // pgm_token consumed exactly one whitespace byte after maxval.
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw ImageIOError(where + ": truncated pixel data");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

void save_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIOError(path.string() + ": cannot open for writing");
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIOError(path.string() + ": write failed");
}

std::vector<std::filesystem::path> list_pgm(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ImageIOError(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<GrayImage> load_pgm_dir(const std::filesystem::path& dir) {
  std::vector<GrayImage> images;
  for (const auto& p : list_pgm(dir)) images.push_back(load_pgm(p));
  return images;
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "gradient") return SynthKind::Gradient;
  if (name == "checker") return SynthKind::Checker;
  if (name == "perlin" || name == "perlin-like") return SynthKind::Perlin;
  if (name == "mixed") return SynthKind::Mixed;
  throw std::invalid_argument("unknown synthetic image kind '" + name + "'");
}

const char* synth_kind_name(SynthKind kind) noexcept {
  switch (kind) {
    case SynthKind::Gradient: return "gradient";
    case SynthKind::Checker: return "checker";
    case SynthKind::Perlin: return "perlin";
    case SynthKind::Mixed: return "mixed";
  }
  return "?";
}

namespace {

GrayImage make_gradient(std::size_t size, Rng& rng) {
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double lo = rng.uniform(0.0, 0.4), hi = rng.uniform(0.6, 1.0);
  const double cx = std::cos(angle), cy = std::sin(angle);
  const double half = 0.5 * static_cast<double>(size);
  const double extent = half * (std::abs(cx) + std::abs(cy)) + 1e-9;
  GrayImage img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = ((x - half) * cx + (y - half) * cy) / extent;  // [-1, 1]
      img(x, y) = static_cast<float>(lo + (hi - lo) * 0.5 * (t + 1.0));
    }
  return img;
}

GrayImage make_checker(std::size_t size, Rng& rng) {
  const auto max_cell = static_cast<std::int64_t>(std::max<std::size_t>(1, size / 4));
  const auto cell = static_cast<std::size_t>(rng.uniform_int(std::min<std::int64_t>(4, max_cell), max_cell));
  // Byte-exact levels so the two values survive a PGM round trip unchanged.
  const float lo = static_cast<float>(rng.uniform_int(0, 100)) / 255.0f;
  const float hi = static_cast<float>(rng.uniform_int(155, 255)) / 255.0f;
  GrayImage img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) img(x, y) = ((x / cell + y / cell) % 2) ? hi : lo;
  return img;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Multi-octave value noise on a random lattice, normalized to [0, 1].
GrayImage make_value_noise(std::size_t size, Rng& rng) {
  const int octaves = 4;
  std::vector<double> acc(size * size, 0.0);
  double amp = 1.0;
  std::size_t cells = static_cast<std::size_t>(rng.uniform_int(2, 5));
  for (int o = 0; o < octaves; ++o) {
    const std::size_t g = cells + 1;
    std::vector<double> lattice(g * g);
    for (auto& v : lattice) v = rng.uniform();
    const double step = static_cast<double>(cells) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
      const double fy = y * step;
      const auto iy = std::min(static_cast<std::size_t>(fy), cells - 1);
      const double ty = smoothstep(fy - iy);
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = x * step;
        const auto ix = std::min(static_cast<std::size_t>(fx), cells - 1);
        const double tx = smoothstep(fx - ix);
        const double a = lattice[iy * g + ix], b = lattice[iy * g + ix + 1];
        const double c = lattice[(iy + 1) * g + ix], d = lattice[(iy + 1) * g + ix + 1];
        const double top = a + (b - a) * tx, bot = c + (d - c) * tx;
        acc[y * size + x] += amp * (top + (bot - top) * ty);
      }
    }
    amp *= 0.5;
    cells *= 2;
  }
  const auto [mn, mx] = std::minmax_element(acc.begin(), acc.end());
  const double range = std::max(*mx - *mn, 1e-12);
  GrayImage img(size, size);
  for (std::size_t i = 0; i < acc.size(); ++i) img.pixels[i] = static_cast<float>((acc[i] - *mn) / range);
  return img;
}

// Value-noise texture plus a gradient, random rectangles/disks and a striped
// region: smooth areas, hard edges and fine texture in one image.
GrayImage make_mixed(std::size_t size, Rng& rng) {
  GrayImage base = make_value_noise(size, rng);
  const GrayImage grad = make_gradient(size, rng);
  for (std::size_t i = 0; i < base.size(); ++i) base.pixels[i] = 0.55f * base.pixels[i] + 0.45f * grad.pixels[i];

  const double s = static_cast<double>(size);
  const int shapes = static_cast<int>(rng.uniform_int(3, 7));
  for (int k = 0; k < shapes; ++k) {
    const float level = static_cast<float>(rng.uniform());
    const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
    const double r = rng.uniform(0.08, 0.3) * s;
    const bool disk = rng.uniform() < 0.5;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = x - cx, dy = y - cy;
        const bool inside = disk ? (dx * dx + dy * dy <= r * r) : (std::abs(dx) <= r && std::abs(dy) <= 0.6 * r);
        if (inside) base(x, y) = level;
      }
  }

  const double period = rng.uniform(3.0, 9.0);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double x0 = rng.uniform(0.0, 0.5 * s), y0 = rng.uniform(0.0, 0.5 * s);
  const double w = rng.uniform(0.25, 0.5) * s;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      if (x < x0 || x > x0 + w || y < y0 || y > y0 + w) continue;
      const double t = x * std::cos(angle) + y * std::sin(angle);
      base(x, y) = static_cast<float>(0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * t / period));
    }
  return clamp01(std::move(base));
}

}  // namespace

GrayImage synth_image(SynthKind kind, std::size_t size, Rng& rng) {
  if (size == 0) throw std::invalid_argument("synthetic image size must be positive");
  switch (kind) {
    case SynthKind::Gradient: return make_gradient(size, rng);
    case SynthKind::Checker: return make_checker(size, rng);
    case SynthKind::Perlin: return make_value_noise(size, rng);
    case SynthKind::Mixed: return make_mixed(size, rng);
  }
  return {};
}

}  // namespace coe
