#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>

#include "coe/tensor.hpp"

namespace coe {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultLearningRate = 1e-4;

/// Per-tensor Adam moments. One state per parameter tensor, so the update of
/// one tensor never reads another's state.
struct AdamState {
  std::uint64_t step_count = 0;
  Tensor m;
  Tensor v;
  double lr = kDefaultLearningRate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const Shape& shape, double learning_rate = kDefaultLearningRate)
      : m(shape), v(shape), lr(learning_rate) {}

  /// Zero the moments and step counter, keeping hyperparameters.
  void reset();

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Throws NonFiniteError naming `param_name`
/// if any gradient entry is NaN/Inf; `params` is untouched in that case.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state, std::string_view param_name);

/// Double-precision variant, used only by optimizer tests and oracles.
void adam_step(Tensor64& params, const Tensor64& grads, std::uint64_t& step_count, Tensor64& m,
               Tensor64& v, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace coe
