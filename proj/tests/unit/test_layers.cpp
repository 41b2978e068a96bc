#include <doctest.h>

#include <cmath>
#include <vector>

#include "coe/layers.hpp"
#include "coe/rng.hpp"
#include "helpers.hpp"

using namespace coe;
using testing::random_tensor;
using testing::rel_err;

namespace {

// Direct zero-padded 3x3 cross-correlation.
Tensor64 naive_conv(const Tensor64& x, const Tensor64& w, const Tensor64& b) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0);
  Tensor64 y(Shape{n, co, h, wd});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < wd; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long rr = long(r) + dy, cc = long(c) + dx;
                if (rr < 0 || cc < 0 || rr >= long(h) || cc >= long(wd)) continue;
                acc += w.at(o, i, dy + 1, dx + 1) * x.at(s, i, rr, cc);
              }
          y.at(s, o, r, c) = acc;
        }
  return y;
}

// Central difference of sum(c * f(x)) with respect to x[i].
template <typename F>
double fd(Tensor64 x, std::size_t i, const Tensor64& c, F f, double h = 1e-6) {
  auto eval = [&](double v) {
    x[i] = v;
    const Tensor64 y = f(x);
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) s += c[k] * y[k];
    return s;
  };
  const double x0 = x[i];
  return (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("conv of ones with a ones kernel counts in-image neighbours") {
  Tensor x(Shape{1, 1, 5, 5}, 1.0f);
  Tensor w(Shape{1, 1, 3, 3}, 1.0f);
  Tensor b(Shape{1});
  const Tensor y = conv3x3_forward(x, w, b);
  CHECK(y.at(0, 0, 2, 2) == 9.0f);
  CHECK(y.at(0, 0, 0, 0) == 4.0f);
  CHECK(y.at(0, 0, 4, 4) == 4.0f);
  CHECK(y.at(0, 0, 0, 2) == 6.0f);
  CHECK(y.at(0, 0, 3, 4) == 6.0f);
}

TEST_CASE("conv with the identity kernel is exact") {
  Rng rng(3);
  const Tensor x = random_tensor<float>({2, 1, 6, 7}, rng);
  Tensor w(Shape{1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0f;
  const Tensor y = conv3x3_forward(x, w, Tensor(Shape{1}));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv of a zero input is the bias") {
  Tensor b(Shape{3}, {0.5f, -1.0f, 2.0f});
  Rng rng(1);
  const Tensor w = random_tensor<float>({3, 2, 3, 3}, rng);
  const Tensor y = conv3x3_forward(Tensor(Shape{1, 2, 4, 4}), w, b);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK(y.at(0, o, r, c) == b[o]);
}

TEST_CASE("conv rejects mismatched shapes") {
  const Tensor x(Shape{1, 2, 4, 4});
  CHECK_THROWS_AS(conv3x3_forward(x, Tensor(Shape{1, 3, 3, 3}), Tensor(Shape{1})), ShapeError);
  CHECK_THROWS_AS(conv3x3_forward(x, Tensor(Shape{1, 2, 3, 3}), Tensor(Shape{2})), ShapeError);
  CHECK_THROWS_AS(conv3x3_forward(Tensor(Shape{2, 4, 4}), Tensor(Shape{1, 2, 3, 3}), Tensor(Shape{1})),
                  ShapeError);
}

TEST_CASE("conv matches a direct loop and is linear") {
  Rng rng(11);
  const Tensor64 x = random_tensor<double>({2, 3, 7, 5}, rng);
  const Tensor64 x2 = random_tensor<double>({2, 3, 7, 5}, rng);
  const Tensor64 w = random_tensor<double>({4, 3, 3, 3}, rng);
  const Tensor64 b = random_tensor<double>({4}, rng);
  const Tensor64 y = conv3x3_forward(x, w, b);
  const Tensor64 ref = naive_conv(x, w, b);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  const Tensor64 zero_b(Shape{4});
  Tensor64 sum = x;
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0 * x[i] + x2[i];
  const Tensor64 ya = conv3x3_forward(x, w, zero_b), yb = conv3x3_forward(x2, w, zero_b);
  const Tensor64 ys = conv3x3_forward(sum, w, zero_b);
  for (std::size_t i = 0; i < ys.size(); ++i) CHECK(ys[i] == doctest::Approx(2.0 * ya[i] + yb[i]).epsilon(1e-10));
}

TEST_CASE("conv backward agrees with finite differences of the direct loop") {
  Rng rng(5);
  const Tensor64 x = random_tensor<double>({2, 2, 5, 4}, rng);
  const Tensor64 w = random_tensor<double>({3, 2, 3, 3}, rng);
  const Tensor64 b = random_tensor<double>({3}, rng);
  const Tensor64 c = random_tensor<double>({2, 3, 5, 4}, rng);
  const ConvGrads<double> g = conv3x3_backward(c, x, w);

  for (std::size_t i = 0; i < x.size(); i += 3)
    CHECK(rel_err(g.input[i], fd(x, i, c, [&](const Tensor64& v) { return naive_conv(v, w, b); })) < 1e-6);
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(rel_err(g.weight[i], fd(w, i, c, [&](const Tensor64& v) { return naive_conv(x, v, b); })) < 1e-6);
  for (std::size_t i = 0; i < b.size(); ++i)
    CHECK(rel_err(g.bias[i], fd(b, i, c, [&](const Tensor64& v) { return naive_conv(x, w, v); })) < 1e-6);
}

TEST_CASE("fc forward and backward") {
  const Tensor64 x(Shape{2, 3}, {1, 2, 3, -1, 0, 4});
  const Tensor64 w(Shape{2, 3}, {1, 0, -1, 0.5, 0.5, 0.5});
  const Tensor64 b(Shape{2}, {10, 20});
  const Tensor64 y = fc_forward(x, w, b);
  CHECK(y[0] == 1 - 3 + 10);
  CHECK(y[1] == 3 + 20);
  CHECK(y[2] == -1 - 4 + 10);
  CHECK(y[3] == 1.5 + 20);

  Rng rng(2);
  const Tensor64 c = random_tensor<double>({2, 2}, rng);
  const FcGrads<double> g = fc_backward(c, x, w);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(rel_err(g.input[i], fd(x, i, c, [&](const Tensor64& v) { return fc_forward(v, w, b); })) < 1e-7);
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(rel_err(g.weight[i], fd(w, i, c, [&](const Tensor64& v) { return fc_forward(x, v, b); })) < 1e-7);
  CHECK(g.bias[0] == doctest::Approx(c[0] + c[2]));
  CHECK_THROWS_AS(fc_forward(x, Tensor64(Shape{2, 4}), b), ShapeError);
}

TEST_CASE("relu and its gradient") {
  const Tensor64 x(Shape{1, 1, 1, 4}, {-2.0, -0.0, 0.5, 3.0});
  const Tensor64 y = relu_forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[2] == 0.5);
  const Tensor64 g = relu_backward(Tensor64(Shape{1, 1, 1, 4}, 1.0), x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[3] == 1.0);
}

TEST_CASE("prelu uses one slope per channel and accumulates slope gradients") {
  Tensor64 x(Shape{2, 2, 1, 2}, {-1, 2, -3, 4, -5, 6, 7, -8});
  const Tensor64 a(Shape{2}, {0.25, 0.5});
  const Tensor64 y = prelu_forward(x, a);
  CHECK(y[0] == -0.25);
  CHECK(y[1] == 2.0);
  CHECK(y[2] == -1.5);
  CHECK(y[4] == -1.25);
  CHECK(y[7] == -4.0);

  const Tensor64 c(Shape{2, 2, 1, 2}, 1.0);
  const PReluGrads<double> g = prelu_backward(c, x, a);
  // Slope gradient sums x over negative inputs of its channel across the batch.
  CHECK(g.slope[0] == doctest::Approx(-1.0 + -5.0));
  CHECK(g.slope[1] == doctest::Approx(-3.0 + -8.0));
  CHECK(g.input[0] == 0.25);
  CHECK(g.input[1] == 1.0);

  Rng rng(4);
  const Tensor64 c2 = random_tensor<double>({2, 2, 1, 2}, rng);
  const PReluGrads<double> g2 = prelu_backward(c2, x, a);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(rel_err(g2.slope[i], fd(a, i, c2, [&](const Tensor64& v) { return prelu_forward(x, v); })) < 1e-7);

  const Tensor64 x2(Shape{3, 2}, {-1, 1, 2, -2, -3, 3});
  const Tensor64 y2 = prelu_forward(x2, a);
  CHECK(y2[0] == -0.25);
  CHECK(y2[3] == -1.0);
  CHECK_THROWS_AS(prelu_forward(x, Tensor64(Shape{3})), ShapeError);
}

TEST_CASE("global average pooling") {
  Tensor64 x(Shape{1, 2, 2, 2}, {1, 2, 3, 6, -1, -1, -1, 3});
  const Tensor64 y = gap_forward(x);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 0.0);
  const Tensor64 g = gap_backward(Tensor64(Shape{1, 2}, {4.0, 8.0}), x.shape());
  CHECK(g[0] == 1.0);
  CHECK(g[7] == 2.0);
}

TEST_CASE("mse loss and gradient") {
  const Tensor64 p(Shape{4}, {1, 2, 3, 4});
  const Tensor64 t(Shape{4}, {1, 1, 1, 1});
  const LossResult<double> r = mse_loss(p, t);
  CHECK(r.loss == doctest::Approx((0 + 1 + 4 + 9) / 4.0));
  CHECK(r.grad[3] == doctest::Approx(2.0 * 3.0 / 4.0));
  CHECK(mse_value(p, t) == doctest::Approx(r.loss));
  CHECK_THROWS_AS(mse_loss(p, Tensor64(Shape{5})), ShapeError);
}

TEST_CASE("softmax cross-entropy of uniform logits is ln K") {
  const Tensor64 z(Shape{3, 7});
  const std::vector<int> labels{0, 3, 6};
  const auto r = softmax_cross_entropy(z, std::span<const int>(labels));
  CHECK(r.loss == doctest::Approx(std::log(7.0)));
  // (softmax - onehot) / N
  CHECK(r.grad[0] == doctest::Approx((1.0 / 7.0 - 1.0) / 3.0));
  CHECK(r.grad[1] == doctest::Approx((1.0 / 7.0) / 3.0));
}

TEST_CASE("softmax cross-entropy is stable for large logits") {
  const Tensor64 z(Shape{1, 3}, {1000.0, 0.0, 0.0});
  const std::vector<int> hit{0}, miss{1};
  const auto a = softmax_cross_entropy(z, std::span<const int>(hit));
  const auto b = softmax_cross_entropy(z, std::span<const int>(miss));
  CHECK(std::isfinite(a.loss));
  CHECK(a.loss == doctest::Approx(0.0));
  CHECK(b.loss == doctest::Approx(1000.0));
  const Tensor64 s = softmax_rows(z);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s.all_finite());

  const Tensor zf(Shape{1, 2}, {1000.0f, -1000.0f});
  const std::vector<int> l{1};
  CHECK(std::isfinite(softmax_cross_entropy(zf, std::span<const int>(l)).loss));
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  Rng rng(8);
  const Tensor64 z = random_tensor<double>({4, 5}, rng, 2.0);
  const std::vector<int> labels{4, 0, 2, 2};
  const auto r = softmax_cross_entropy(z, std::span<const int>(labels));
  for (std::size_t i = 0; i < z.size(); ++i) {
    Tensor64 zp = z, zm = z;
    zp[i] += 1e-6;
    zm[i] -= 1e-6;
    const double num = (softmax_cross_entropy(zp, std::span<const int>(labels)).loss -
                        softmax_cross_entropy(zm, std::span<const int>(labels)).loss) / 2e-6;
    CHECK(rel_err(r.grad[i], num) < 1e-6);
  }
}

TEST_CASE("softmax cross-entropy rejects bad labels") {
  const Tensor64 z(Shape{2, 3});
  const std::vector<int> out_of_range{0, 3}, negative{-1, 0}, short_list{0};
  CHECK_THROWS(softmax_cross_entropy(z, std::span<const int>(out_of_range)));
  CHECK_THROWS(softmax_cross_entropy(z, std::span<const int>(negative)));
  CHECK_THROWS(softmax_cross_entropy(z, std::span<const int>(short_list)));
}
