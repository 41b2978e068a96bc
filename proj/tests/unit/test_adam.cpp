#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>

#include "coe/adam.hpp"

using namespace coe;

TEST_CASE("first Adam step moves each parameter by lr against its gradient sign") {
  Tensor p(Shape{4}, {1.0f, 1.0f, 1.0f, 1.0f});
  const Tensor g(Shape{4}, {0.3f, -2.0f, 1e-3f, -50.0f});
  AdamState st(p.shape(), 1e-2);
  adam_step(p, g, st, "p");
  CHECK(st.step_count == 1);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 1e-2).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(1.0 + 1e-2).epsilon(1e-5));
  CHECK(p[2] == doctest::Approx(1.0 - 1e-2 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-5));
  CHECK(p[3] == doctest::Approx(1.0 + 1e-2).epsilon(1e-5));
}

TEST_CASE("a zero gradient leaves fresh parameters unchanged") {
  Tensor p(Shape{3}, {0.5f, -0.5f, 2.0f});
  const Tensor before = p;
  AdamState st(p.shape());
  adam_step(p, Tensor(Shape{3}), st, "p");
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == before[i]);
}

TEST_CASE("Adam on x^2 follows the textbook recurrence") {
  // Independent scalar reference.
  double x_ref = 3.0, m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor64 x(Shape{1}, {3.0});
  Tensor64 mm(Shape{1}), vv(Shape{1});
  std::uint64_t step = 0;
  for (int t = 1; t <= 50; ++t) {
    const double g = 2.0 * x_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x_ref -= lr * mh / (std::sqrt(vh) + eps);

    const Tensor64 grad(Shape{1}, {2.0 * x[0]});
    adam_step(x, grad, step, mm, vv, lr, b1, b2, eps);
    CHECK(x[0] == doctest::Approx(x_ref).epsilon(1e-12));
  }
  CHECK(step == 50);
  CHECK(std::abs(x_ref) < 3.0);
}

TEST_CASE("non-finite gradients throw naming the tensor and leave params untouched") {
  Tensor p(Shape{2}, {1.0f, 2.0f});
  AdamState st(p.shape());
  const Tensor bad(Shape{2}, {0.0f, std::numeric_limits<float>::quiet_NaN()});
  try {
    adam_step(p, bad, st, "3.weight");
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("3.weight") != std::string::npos);
  }
  CHECK(p[0] == 1.0f);
  CHECK(p[1] == 2.0f);
  CHECK(st.step_count == 0);
  const Tensor inf(Shape{2}, {std::numeric_limits<float>::infinity(), 0.0f});
  CHECK_THROWS_AS(adam_step(p, inf, st, "x"), NonFiniteError);
}

TEST_CASE("gradient shape must match") {
  Tensor p(Shape{2});
  AdamState st(p.shape());
  CHECK_THROWS_AS(adam_step(p, Tensor(Shape{3}), st, "p"), ShapeError);
}

TEST_CASE("per-tensor states are independent of update order") {
  Tensor a1(Shape{2}, {1.0f, 2.0f}), b1(Shape{2}, {-1.0f, 0.5f});
  Tensor a2 = a1, b2 = b1;
  AdamState sa1(a1.shape()), sb1(b1.shape()), sa2(a1.shape()), sb2(b1.shape());
  const Tensor ga(Shape{2}, {0.1f, -0.2f}), gb(Shape{2}, {3.0f, 0.0f});
  for (int i = 0; i < 5; ++i) {
    adam_step(a1, ga, sa1, "a");
    adam_step(b1, gb, sb1, "b");
  }
  for (int i = 0; i < 5; ++i) adam_step(b2, gb, sb2, "b");
  for (int i = 0; i < 5; ++i) adam_step(a2, ga, sa2, "a");
  CHECK(a1.storage() == a2.storage());
  CHECK(b1.storage() == b2.storage());
}

TEST_CASE("reset zeroes moments and keeps hyperparameters") {
  Tensor p(Shape{2}, {1.0f, 1.0f});
  AdamState st(p.shape(), 0.5);
  adam_step(p, Tensor(Shape{2}, {1.0f, 1.0f}), st, "p");
  st.reset();
  CHECK(st.step_count == 0);
  CHECK(st.m[0] == 0.0f);
  CHECK(st.v[1] == 0.0f);
  CHECK(st.lr == 0.5);
  CHECK(st == AdamState(p.shape(), 0.5));
}
