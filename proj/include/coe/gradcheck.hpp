#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coe/layers.hpp"
#include "coe/network.hpp"

namespace coe {

/// Maps a network output to (loss, dLoss/dOutput), in double precision.
using LossFn = std::function<LossResult<double>(const Tensor64& output)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for relative error, so near-zero gradients compare absolutely.
  double abs_floor = 1e-6;
  /// Cap on probed coordinates per tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;  // picks coordinates when capped
  /// output = input - net(input) instead of net(input).
  bool residual = false;
  bool check_input = true;
};

struct GradCheckEntry {
  std::string name;  // parameter name, or "input"
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +/-step probe flipped a ReLU/PReLU input sign (a kink).
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
  std::string str() const;
};

/// Central-difference check of every parameter tensor (and the input) of a
/// double-precision network against its hand-wired backward pass.
GradCheckReport finite_difference_check(const Network<double>& net, const Tensor64& input, const LossFn& loss,
                                        const GradCheckOptions& options = {});

/// L = sum_i c_i * out_i with fixed random c: every output element gets a distinct nonzero gradient.
LossFn random_projection_loss(const Shape& output_shape, std::uint64_t seed);
/// L = mse(out, target).
LossFn mse_target_loss(Tensor64 target);

}  // namespace coe
