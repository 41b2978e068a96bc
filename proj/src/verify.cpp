#include "coe/verify.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "coe/evaluator.hpp"
#include "coe/gradcheck.hpp"
#include "coe/layers.hpp"
#include "coe/models.hpp"
#include "coe/noise.hpp"
#include "coe/trainer.hpp"

namespace coe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Tensor64 random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(shape);
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

CheckResult from_report(std::string name, const GradCheckReport& r, double tol) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  std::size_t checked = 0, skipped = 0;
  for (const auto& e : r.entries) {
    checked += e.checked;
    skipped += e.skipped;
  }
  os << "tol=" << tol << " checked=" << checked << " kinks_skipped=" << skipped;
  return {std::move(name), r.passed(tol) && checked > 0, r.max_rel_error(), os.str()};
}

CheckResult linear_check(std::uint64_t seed) {
  Rng rng(seed);
  Network<double> net({LayerSpec::fc(5, 3)});
  net.initialize(rng);
  const Tensor64 x = random_tensor({4, 5}, rng);
  GradCheckOptions opt;
  opt.seed = seed;
  return from_report("gradcheck fc layer", finite_difference_check(net, x, random_projection_loss({4, 3}, seed + 1), opt),
                     1e-6);
}

CheckResult conv_check(std::uint64_t seed) {
  Rng rng(seed);
  Network<double> net({LayerSpec::conv(2, 3)});
  net.initialize(rng);
  for (auto& v : net.params()[1].values()) v = rng.normal();
  const Tensor64 x = random_tensor({1, 2, 5, 5}, rng);
  GradCheckOptions opt;
  opt.seed = seed;
  return from_report("gradcheck conv3x3 layer",
                     finite_difference_check(net, x, random_projection_loss({1, 3, 5, 5}, seed + 1), opt), 1e-4);
}

CheckResult expert_check(std::uint64_t seed) {
  Rng rng(seed);
  ExpertNet e = build_expert({3, 4}, rng);
  Network<double> net = e.network().cast<double>();
  for (std::size_t p = 0; p < net.params().size(); ++p)
    if (net.param_names()[p].ends_with("bias"))
      for (auto& v : net.params()[p].values()) v = rng.normal(0.0, 0.1);
  Tensor64 x(Shape{2, 1, 6, 6});
  for (auto& v : x.values()) v = rng.uniform();
  Tensor64 target(x.shape());
  for (auto& v : target.values()) v = rng.uniform();
  GradCheckOptions opt;
  opt.seed = seed;
  opt.residual = true;
  return from_report("gradcheck expert d3c4", finite_difference_check(net, x, mse_target_loss(target), opt), 1e-4);
}

CheckResult gate_check(std::uint64_t seed) {
  Rng rng(seed);
  GateNet g = build_gate(7, rng);
  Network<double> net = g.network().cast<double>();
  for (std::size_t p = 0; p < net.params().size(); ++p) {
    if (net.param_names()[p].ends_with("bias"))
      for (auto& v : net.params()[p].values()) v = rng.normal(0.0, 0.1);
    if (net.param_names()[p].ends_with("slope"))
      for (auto& v : net.params()[p].values()) v = rng.uniform(0.05, 0.5);
  }
  Tensor64 x(Shape{2, 1, 6, 6});
  for (auto& v : x.values()) v = rng.uniform();
  const std::vector<int> labels{3, 5};
  LossFn ce = [labels](const Tensor64& out) { return softmax_cross_entropy(out, labels); };
  GradCheckOptions opt;
  opt.seed = seed;
  return from_report("gradcheck gate N'=7", finite_difference_check(net, x, ce, opt), 1e-4);
}

PatchBatch toy_batch(Rng& rng, std::size_t size, double sigma) {
  GrayImage clean = synth_image(SynthKind::Mixed, size, rng);
  GrayImage noisy = add_awgn(clean, sigma, rng);
  return sample_patch_batch(noisy, clean, 4, 16, rng);
}

CheckResult freeze_check(std::uint64_t seed) {
  Rng rng(seed);
  ExpertNet e1 = build_expert({3, 4}, rng);
  auto experts = clone_experts(e1, 3);
  GateNet gate = build_gate(3, rng);
  // Perturb clones so different experts win.
  for (std::size_t j = 1; j < experts.size(); ++j)
    for (auto& p : experts[j].network().params())
      for (auto& v : p.values()) v += static_cast<float>(rng.normal(0.0, 0.05));
  std::size_t violations = 0, steps = 40;
  for (std::size_t it = 0; it < steps; ++it) {
    const PatchBatch b = toy_batch(rng, 32, it % 2 ? 50.0 : 5.0);
    std::vector<std::uint64_t> before;
    for (const auto& e : experts) before.push_back(e.param_hash());
    const StepResult r = competition_step(experts, &gate, b);
    for (std::size_t j = 0; j < experts.size(); ++j) {
      const bool changed = experts[j].param_hash() != before[j];
      if (changed != (j == r.winner)) ++violations;
    }
  }
  return {"winner-take-all freeze", violations == 0, kNaN,
          std::to_string(steps) + " steps, " + std::to_string(violations) + " violations"};
}

CheckResult clone_check(std::uint64_t seed) {
  Rng rng(seed);
  ExpertNet e1 = build_expert({3, 4}, rng);
  auto experts = clone_experts(e1, 4);
  GateNet gate = build_gate(4, rng);
  const PatchBatch b = toy_batch(rng, 32, 25.0);
  const auto losses = compute_loss_vector(experts, b);
  bool equal = true;
  for (double l : losses) equal = equal && l == losses.front();
  const StepResult r = competition_step(experts, &gate, b);
  return {"clone tie-break", equal && r.winner == 0, kNaN,
          std::string(equal ? "losses bit-identical" : "losses differ") + ", first winner " + std::to_string(r.winner)};
}

CheckResult dct_check(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Block8 b;
    for (auto& v : b) v = rng.uniform(-128.0, 127.0);
    const Block8 r = idct8x8(dct8x8(b));
    for (std::size_t i = 0; i < 64; ++i) worst = std::max(worst, std::abs(r[i] - b[i]));
  }
  return {"dct round trip", worst < 1e-10, worst, "max abs error over 100 blocks"};
}

CheckResult quant_check() {
  const bool q50 = quant_table(50) == standard_luma_table();
  bool q100 = true;
  for (int v : quant_table(100)) q100 = q100 && v == 1;
  return {"quantization tables", q50 && q100, kNaN,
          std::string("q50 ") + (q50 ? "matches" : "differs") + ", q100 " + (q100 ? "all ones" : "not all ones")};
}

CheckResult metric_check(std::uint64_t seed) {
  Rng rng(seed);
  GrayImage a = synth_image(SynthKind::Mixed, 48, rng);
  for (auto& p : a.pixels) p = 0.1f + 0.8f * p;
  GrayImage b = a;
  for (auto& p : b.pixels) p = static_cast<float>(p + 0.1);
  const double p20 = psnr(a, b);
  const bool ok_psnr = std::abs(p20 - 20.0) < 0.01;
  const bool ok_inf = std::isinf(psnr(a, a));
  const bool ok_ssim = ssim(a, a) == 1.0;
  const auto grid = make_eval_grid(NoiseSource::AWGN, 68);
  const auto jgrid = make_eval_grid(NoiseSource::JPEG, 68);
  const bool ok_grid = grid.front().spec.level == 0.0 && std::abs(grid.back().spec.level - 54.191) < 1e-3 &&
                       jgrid.front().spec.level == 5.0 &&
                       jgrid.back().spec.level == std::round(5.0 + 67.0 * 95.0 / 68.0);
  std::ostringstream os;
  os.precision(6);
  os << "psnr(0.1 diff)=" << p20 << " psnr(x,x)=" << (ok_inf ? "inf" : "finite") << " ssim(x,x)=" << ssim(a, a)
     << " grid=" << (ok_grid ? "ok" : "wrong");
  return {"metric identities", ok_psnr && ok_inf && ok_ssim && ok_grid, kNaN, os.str()};
}

CheckResult count_check() {
  const std::size_t d5c16 = expert_param_count({5, 16}), d5c8 = expert_param_count({5, 8});
  const std::size_t gate7 = gate_param_count(7);
  Rng rng(0);
  const bool runtime = count_params(build_expert({5, 16}, rng)) == d5c16 && count_params(build_gate(7, rng)) == gate7;
  const Complexity c = effective_complexity({5, 16}, 7, 481, 321);
  const bool ok = d5c16 == 7265 && d5c8 == 80 + 3 * 584 + 73 && gate7 == 7287 && runtime && std::abs(c.params_effective - 8231) <= 1.0;
  std::ostringstream os;
  os.precision(6);
  os << "d5c16=" << d5c16 << " d5c8=" << d5c8 << " gate7=" << gate7 << " effective(481x321)=" << c.params_effective;
  return {"parameter counts", ok, kNaN, os.str()};
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
  const bool previous = conv_backward_sign_fault();
  set_conv_backward_sign_fault(options.inject_conv_sign_fault);
  std::vector<CheckResult> out;
  try {
    const std::uint64_t s = options.seed;
    out.push_back(linear_check(s));
    out.push_back(conv_check(s));
    out.push_back(expert_check(s));
    out.push_back(gate_check(s));
    out.push_back(freeze_check(s));
    out.push_back(clone_check(s));
    out.push_back(dct_check(s));
    out.push_back(quant_check());
    out.push_back(metric_check(s));
    out.push_back(count_check());
  } catch (...) {
    set_conv_backward_sign_fault(previous);
    throw;
  }
  set_conv_backward_sign_fault(previous);
  return out;
}

}  // namespace coe
