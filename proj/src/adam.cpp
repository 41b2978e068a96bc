#include "coe/adam.hpp"

#include <cmath>
#include <string>

namespace coe {

void AdamState::reset() {
  step_count = 0;
  m.fill(0.0f);
  v.fill(0.0f);
}

namespace {

template <typename T>
void check_grads(const BasicTensor<T>& params, const BasicTensor<T>& grads, const BasicTensor<T>& m,
                 const BasicTensor<T>& v, std::string_view name) {
  const std::string what(name);
  expect_shape(grads, params.shape(), ("adam gradient for " + what).c_str());
  expect_shape(m, params.shape(), ("adam first moment for " + what).c_str());
  expect_shape(v, params.shape(), ("adam second moment for " + what).c_str());
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NonFiniteError("non-finite gradient in parameter tensor '" + what + "' at element " +
                           std::to_string(i));
}

template <typename T>
void apply(BasicTensor<T>& params, const BasicTensor<T>& grads, std::uint64_t& step, BasicTensor<T>& m,
           BasicTensor<T>& v, double lr, double beta1, double beta2, double eps) {
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T e = static_cast<T>(eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    params[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + e);
  }
}

}  // namespace

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, std::string_view param_name) {
  check_grads(params, grads, state.m, state.v, param_name);
  apply(params, grads, state.step_count, state.m, state.v, state.lr, state.beta1, state.beta2,
        state.eps);
}

void adam_step(Tensor64& params, const Tensor64& grads, std::uint64_t& step_count, Tensor64& m,
               Tensor64& v, double lr, double beta1, double beta2, double eps) {
  check_grads(params, grads, m, v, "double");
  apply(params, grads, step_count, m, v, lr, beta1, beta2, eps);
}

}  // namespace coe
