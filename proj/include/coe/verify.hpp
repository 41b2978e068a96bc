#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace coe {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst relative error for numeric checks, NaN where it does not apply.
  double max_rel_error = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Negate the conv weight gradient for the duration of the run.
  bool inject_conv_sign_fault = false;
};

/// Gradient checks, winner-take-all freeze, clone tie-break, DCT round trip,
/// quantization table and metric identities.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

}  // namespace coe
