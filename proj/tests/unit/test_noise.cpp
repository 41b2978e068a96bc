#include <doctest.h>

#include <cmath>
#include <numbers>

#include "coe/noise.hpp"
#include "helpers.hpp"

using namespace coe;

namespace {

double image_mse(const GrayImage& a, const GrayImage& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a.pixels[i]) - b.pixels[i]) * (double(a.pixels[i]) - b.pixels[i]);
  return s / double(a.size());
}

// libjpeg quality scaling, written out independently.
int scaled_entry(int base, int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const int v = (base * scale + 50) / 100;
  return v < 1 ? 1 : (v > 255 ? 255 : v);
}

}  // namespace

TEST_CASE("standard luminance table") {
  const int expected[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                            14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                            18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                            49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  for (int i = 0; i < 64; ++i) CHECK(standard_luma_table()[i] == expected[i]);
  CHECK(quant_table(50) == standard_luma_table());
}

TEST_CASE("quality scaling of the quantization table") {
  for (int q : {1, 5, 10, 25, 49, 50, 51, 75, 90, 99, 100})
    for (int i = 0; i < 64; ++i) CHECK(quant_table(q)[i] == scaled_entry(standard_luma_table()[i], q));
  for (int v : quant_table(100)) CHECK(v == 1);
  CHECK(quant_table(10)[0] == 80);  // 16 * 500% = 80
  CHECK(quant_table(1)[63] == 255);
  CHECK_THROWS(quant_table(0));
  CHECK_THROWS(quant_table(101));
}

TEST_CASE("DCT is orthonormal") {
  Rng rng(3);
  Block8 b{};
  for (auto& v : b) v = rng.normal(0.0, 50.0);
  const Block8 c = dct8x8(b);
  double e_in = 0.0, e_out = 0.0;
  for (int i = 0; i < 64; ++i) {
    e_in += b[i] * b[i];
    e_out += c[i] * c[i];
  }
  CHECK(e_out == doctest::Approx(e_in).epsilon(1e-12));
  const Block8 r = idct8x8(c);
  for (int i = 0; i < 64; ++i) CHECK(std::abs(r[i] - b[i]) < 1e-9);

  Block8 flat{};
  flat.fill(3.0);
  const Block8 fc = dct8x8(flat);
  CHECK(fc[0] == doctest::Approx(24.0));
  for (int i = 1; i < 64; ++i) CHECK(std::abs(fc[i]) < 1e-12);

  // Single orthonormal basis function c(1) c(2) cos cos with c = 1/2: coefficient (v=1, u=2).
  Block8 basis{};
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      basis[y * 8 + x] = 0.25 * std::cos((2 * y + 1) * std::numbers::pi / 16.0) *
                         std::cos((2 * x + 1) * 2 * std::numbers::pi / 16.0);
  const Block8 bc = dct8x8(basis);
  CHECK(bc[1 * 8 + 2] == doctest::Approx(1.0));
  CHECK(std::abs(bc[2 * 8 + 1]) < 1e-12);
}

TEST_CASE("JPEG of a constant image is off by at most a DC quantization step") {
  for (int q : {5, 10, 30, 50, 80, 100})
    for (float c : {0.1f, 0.5f, 0.73f}) {
      const GrayImage img(16, 16, c);
      const GrayImage out = jpeg_degrade(img, q);
      // A constant block only has DC = 8 (255c - 127.5); rounding it to a multiple of Q0
      // moves each pixel by at most Q0 / 16 on the 0-255 scale.
      const double bound = quant_table(q)[0] / 16.0 / 255.0 + 1e-6;
      for (float v : out.pixels) CHECK(std::abs(v - c) <= bound);
    }
}

TEST_CASE("JPEG at quality 100 is nearly lossless and error grows as quality drops") {
  const GrayImage img = testing::textured(64, 4);
  // Unit steps: each coefficient moves by at most 1/2, so the pixel MSE is at most 1/4 on the 0-255 scale.
  CHECK(image_mse(jpeg_degrade(img, 100), img) <= 0.25 / (255.0 * 255.0) + 1e-9);
  const double m10 = image_mse(jpeg_degrade(img, 10), img);
  const double m40 = image_mse(jpeg_degrade(img, 40), img);
  const double m80 = image_mse(jpeg_degrade(img, 80), img);
  CHECK(m10 > m40);
  CHECK(m40 > m80);
  CHECK(jpeg_degrade(img, 40) == jpeg_degrade(img, 40));
  for (float v : jpeg_degrade(img, 5).pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("JPEG handles sizes that are not multiples of 8") {
  const GrayImage img = testing::textured(21, 7);
  const GrayImage out = jpeg_degrade(crop(img, 0, 0, 21, 13), 60);
  CHECK(out.width == 21);
  CHECK(out.height == 13);
  CHECK_THROWS(jpeg_degrade(img, 0));
}

TEST_CASE("AWGN has the requested standard deviation and is not clamped") {
  Rng rng(17);
  const GrayImage img(256, 256, 0.5f);
  const GrayImage out = add_awgn(img, 25.0, rng);
  const double n = double(out.size());
  double s = 0.0, s2 = 0.0;
  bool outside = false;
  for (float v : out.pixels) {
    const double d = v - 0.5;
    s += d;
    s2 += d * d;
  }
  const double sd = 25.0 / 255.0;
  CHECK(std::abs(s / n) < 4.0 * sd / std::sqrt(n));
  CHECK(std::sqrt(s2 / n) == doctest::Approx(sd).epsilon(0.02));

  Rng rng2(1);
  const GrayImage dark = add_awgn(GrayImage(64, 64, 0.0f), 50.0, rng2);
  for (float v : dark.pixels) outside = outside || v < 0.0f;
  CHECK(outside);
  Rng rng3(1);
  CHECK(add_awgn(img, 0.0, rng3) == img);
}

TEST_CASE("noise spec validation and text form") {
  CHECK(NoiseSpec::awgn(25).str() == "awgn:25");
  CHECK(NoiseSpec::jpeg(40).str() == "jpeg:40");
  CHECK(parse_noise_spec("awgn:12.5") == NoiseSpec::awgn(12.5));
  CHECK(parse_noise_spec("jpeg:7") == NoiseSpec::jpeg(7));
  CHECK_THROWS(NoiseSpec::awgn(55.5));
  CHECK_THROWS(NoiseSpec::awgn(-1));
  CHECK_THROWS(NoiseSpec::jpeg(4));
  CHECK_THROWS(NoiseSpec::jpeg(101));
  CHECK_THROWS(parse_noise_spec("gauss:5"));
  CHECK_THROWS(parse_noise_spec("awgn"));
}

TEST_CASE("sampled noise specs cover both sources and their ranges") {
  Rng rng(2);
  int awgn = 0;
  double lo = 1e9, hi = -1e9;
  int qlo = 1000, qhi = -1;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const NoiseSpec s = sample_noise_spec(rng);
    if (s.source == NoiseSource::AWGN) {
      ++awgn;
      lo = std::min(lo, s.level);
      hi = std::max(hi, s.level);
    } else {
      qlo = std::min(qlo, s.quality());
      qhi = std::max(qhi, s.quality());
      CHECK(s.level == std::floor(s.level));
    }
  }
  CHECK(std::abs(awgn - n / 2) < 4.0 * std::sqrt(n / 4.0));
  CHECK(lo >= 0.0);
  CHECK(lo < 0.1);
  CHECK(hi <= 55.0);
  CHECK(hi > 54.9);
  CHECK(qlo == 5);
  CHECK(qhi == 100);
}

TEST_CASE("noise mix parsing") {
  CHECK(NoiseMix::parse("paper").is_full_range());
  const NoiseMix m = NoiseMix::parse("awgn:5,50");
  REQUIRE(m.choices().size() == 2);
  CHECK(m.choices()[1] == NoiseSpec::awgn(50));
  const NoiseMix m2 = NoiseMix::parse("awgn:15;jpeg:10,40");
  CHECK(m2.choices().size() == 3);
  CHECK(m2.str() == "awgn:15;jpeg:10;jpeg:40");
  CHECK(NoiseMix::parse(m2.str()).choices() == m2.choices());
  CHECK_THROWS(NoiseMix::parse("awgn"));
  CHECK_THROWS(NoiseMix::parse("awgn:99"));
  Rng rng(0);
  int high = 0;
  for (int i = 0; i < 1000; ++i) high += m.sample(rng) == NoiseSpec::awgn(50);
  CHECK(high > 400);
  CHECK(high < 600);
}

TEST_CASE("evaluation grid levels") {
  const EvalGrid a = make_eval_grid(NoiseSource::AWGN, 68);
  REQUIRE(a.size() == 68);
  CHECK(a[0].spec.level == 0.0);
  CHECK(a[34].spec.level == doctest::Approx(27.5));
  CHECK(a[67].spec.level == doctest::Approx(67.0 * 55.0 / 68.0));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].image_index == i);

  const EvalGrid j = make_eval_grid(NoiseSource::JPEG, 68);
  CHECK(j[0].spec.quality() == 5);
  // 5 + 67 * 95 / 68 = 98.60...
  CHECK(j[67].spec.quality() == 99);
  CHECK(j[1].spec.quality() == 6);  // 6.397
  CHECK(j[34].spec.quality() == 53);  // 52.5 rounds half away from zero
  CHECK_THROWS(make_eval_grid(NoiseSource::JPEG, 0));
}

TEST_CASE("grid CSV round trip") {
  const auto dir = testing::temp_dir("grid_csv");
  EvalGrid g = make_eval_grid(NoiseSource::AWGN, 5);
  const EvalGrid j = make_eval_grid(NoiseSource::JPEG, 5);
  g.insert(g.end(), j.begin(), j.end());
  write_grid_csv(dir / "grid.csv", g);
  const EvalGrid r = read_grid_csv(dir / "grid.csv");
  REQUIRE(r.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(r[i].image_index == g[i].image_index);
    CHECK(r[i].spec == g[i].spec);
  }
}

TEST_CASE("apply_noise dispatches by source") {
  const GrayImage img = testing::textured(32, 1);
  Rng a(5), b(5);
  CHECK(apply_noise(img, NoiseSpec::awgn(10), a) == add_awgn(img, 10, b));
  CHECK(apply_noise(img, NoiseSpec::jpeg(30), a) == jpeg_degrade(img, 30));
}
