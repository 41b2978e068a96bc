#include "coe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "coe/rng.hpp"

namespace coe {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::str() const {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(3);
  for (const auto& e : entries)
    os << e.name << ": max_rel_err=" << e.max_rel_error << " checked=" << e.checked << " skipped=" << e.skipped
       << "\n";
  return os.str();
}

namespace {

struct Probe {
  double loss = 0.0;
  std::vector<std::uint8_t> signs;  // sign pattern at every ReLU/PReLU input
};

Probe evaluate(const Network<double>& net, const Tensor64& input, const LossFn& loss, bool residual) {
  ForwardCache<double> cache;
  Tensor64 out = net.forward(input, &cache);
  if (residual)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] - out[i];
  Probe p;
  p.loss = loss(out).loss;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const LayerKind k = net.layers()[l].kind;
    if (k != LayerKind::ReLU && k != LayerKind::PReLU) continue;
    for (double v : cache.inputs[l].values()) p.signs.push_back(v > 0.0 ? 1 : 0);
  }
  return p;
}

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& opt, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (opt.max_coords_per_tensor == 0 || n <= opt.max_coords_per_tensor) return idx;
  for (std::size_t i = 0; i < opt.max_coords_per_tensor; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(opt.max_coords_per_tensor);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace

GradCheckReport finite_difference_check(const Network<double>& net, const Tensor64& input, const LossFn& loss,
                                        const GradCheckOptions& opt) {
  // Analytic gradients.
  ForwardCache<double> cache;
  Tensor64 out = net.forward(input, &cache);
  if (opt.residual)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] - out[i];
  LossResult<double> lr = loss(out);
  Tensor64 g_net = lr.grad;
  if (opt.residual)
    for (auto& v : g_net.values()) v = -v;
  std::vector<Tensor64> grads;
  Tensor64 g_input = net.backward(cache, g_net, grads);
  // d/dx [x - r(x)] = g - J^T g; backward(-g) already returned -J^T g.
  if (opt.residual)
    for (std::size_t i = 0; i < g_input.size(); ++i) g_input[i] += lr.grad[i];

  const Probe base = evaluate(net, input, loss, opt.residual);
  Rng rng(opt.seed);
  GradCheckReport report;
  Network<double> work = net;

  auto check_tensor = [&](const std::string& name, Tensor64& target, const Tensor64& analytic, const auto& eval) {
    GradCheckEntry e{name};
    for (std::size_t i : pick_coords(target.size(), opt, rng)) {
      const double orig = target[i];
      target[i] = orig + opt.step;
      const Probe plus = eval();
      target[i] = orig - opt.step;
      const Probe minus = eval();
      target[i] = orig;
      if (plus.signs != base.signs || minus.signs != base.signs) {
        ++e.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * opt.step);
      e.max_rel_error = std::max(e.max_rel_error, rel_error(analytic[i], numeric, opt.abs_floor));
      ++e.checked;
    }
    report.entries.push_back(std::move(e));
  };

  for (std::size_t p = 0; p < work.params().size(); ++p)
    check_tensor(work.param_names()[p], work.params()[p], grads[p],
                 [&] { return evaluate(work, input, loss, opt.residual); });

  if (opt.check_input) {
    Tensor64 x = input;
    check_tensor("input", x, g_input, [&] { return evaluate(work, x, loss, opt.residual); });
  }
  return report;
}

LossFn random_projection_loss(const Shape& output_shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor64 c(output_shape);
  for (auto& v : c.values()) v = rng.normal();
  return [c](const Tensor64& out) {
    expect_shape(out, c.shape(), "projection loss input");
    LossResult<double> r{0.0, c};
    for (std::size_t i = 0; i < out.size(); ++i) r.loss += c[i] * out[i];
    return r;
  };
}

LossFn mse_target_loss(Tensor64 target) {
  return [target = std::move(target)](const Tensor64& out) { return mse_loss(out, target); };
}

}  // namespace coe
