#include "coe/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "coe/trainer.hpp"

namespace coe {

void ModelBundle::validate() const {
  if (experts.empty()) throw std::invalid_argument("model bundle holds no experts");
  for (std::size_t j = 0; j < experts.size(); ++j)
    if (experts[j].config() != expert_config)
      throw std::invalid_argument("expert " + std::to_string(j) + " is " + experts[j].config().name() + ", bundle declares " +
                                  expert_config.name());
  if (gate.n_experts() != static_cast<int>(experts.size()))
    throw std::invalid_argument("gate has " + std::to_string(gate.n_experts()) + " outputs for " +
                                std::to_string(experts.size()) + " experts");
}

ModelBundle ModelBundle::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.gate) throw std::invalid_argument("checkpoint has no gate");
  ModelBundle b{ckpt.expert_config, ckpt.experts, *ckpt.gate};
  b.validate();
  return b;
}

// ---------------------------------------------------------------- routing

namespace {

bool overlaps(const PatchWindow& a, const PatchWindow& b) {
  return a.x < b.x + b.size && b.x < a.x + a.size && a.y < b.y + b.size && b.y < a.y + a.size;
}

template <typename Fn>
void parallel_rows(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<PatchWindow> routing_windows(std::size_t width, std::size_t height, std::size_t patch) {
  if (width == 0 || height == 0) throw std::invalid_argument("routing on an empty image");
  if (patch == 0) throw std::invalid_argument("routing patch size must be positive");
  const std::size_t s = patch;
  if (width >= s && height >= s) {
    std::vector<PatchWindow> corners{{0, 0, s},
                                     {width - s, 0, s},
                                     {0, height - s, s},
                                     {width - s, height - s, s},
                                     {(width - s) / 2, (height - s) / 2, s}};
    bool disjoint = true;
    for (std::size_t i = 0; i < corners.size() && disjoint; ++i)
      for (std::size_t j = i + 1; j < corners.size() && disjoint; ++j) disjoint = !overlaps(corners[i], corners[j]);
    if (disjoint) return corners;

    const std::size_t nx = width / s, ny = height / s;
    const std::size_t ox = (width - nx * s) / 2, oy = (height - ny * s) / 2;
    std::vector<PatchWindow> grid;
    for (std::size_t gy = 0; gy < ny && grid.size() < kRoutingPatchCount; ++gy)
      for (std::size_t gx = 0; gx < nx && grid.size() < kRoutingPatchCount; ++gx)
        grid.push_back({ox + gx * s, oy + gy * s, s});
    if (grid.size() > 1) return grid;
  }
  const std::size_t c = std::min({width, height, s});
  return {{(width - c) / 2, (height - c) / 2, c}};
}

Tensor routing_patches(const GrayImage& image, std::size_t patch) {
  const auto windows = routing_windows(image.width, image.height, patch);
  const std::size_t s = windows.front().size;
  Tensor t(Shape{windows.size(), 1, s, s});
  for (std::size_t k = 0; k < windows.size(); ++k)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) t.at(k, 0, y, x) = image(windows[k].x + x, windows[k].y + y);
  return t;
}

std::size_t select_from_logits(const Tensor& logits) {
  expect_rank(logits, 2, "gate logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0 || k == 0) throw std::invalid_argument("empty gate logits");
  std::vector<double> avg(k, 0.0), row(k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += row[j] = std::exp(static_cast<double>(logits[i * k + j]) - mx);
    for (std::size_t j = 0; j < k; ++j) avg[j] += row[j] / z;
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (avg[j] > avg[best]) best = j;
  return best;
}

std::size_t select_expert(const GateNet& gate, const GrayImage& image, std::size_t patch) {
  return select_from_logits(gate.logits(routing_patches(image, patch)));
}

GrayImage denoise_with(const ExpertNet& expert, const GrayImage& image) {
  return clamp01(from_tensor(expert.denoise(to_tensor(image))));
}

BlindResult denoise_blind(const std::vector<ExpertNet>& experts, const GateNet& gate, const GrayImage& image) {
  if (experts.empty()) throw std::invalid_argument("no experts to route to");
  std::size_t j = 0;
  if (experts.size() > 1) {
    if (gate.n_experts() != static_cast<int>(experts.size()))
      throw std::invalid_argument("gate width does not match the expert count");
    j = select_expert(gate, image);
  }
  return {denoise_with(experts[j], image), j};
}

BlindResult denoise_blind(const ModelBundle& bundle, const GrayImage& image) {
  return denoise_blind(bundle.experts, bundle.gate, image);
}

// ---------------------------------------------------------------- metrics

namespace {
void check_same_dims(const GrayImage& a, const GrayImage& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  if (a.size() == 0) throw std::invalid_argument(std::string(what) + ": empty image");
}
}  // namespace

double mse(const GrayImage& a, const GrayImage& b) {
  check_same_dims(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const GrayImage& a, const GrayImage& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

namespace {

constexpr std::size_t kSsimWindow = 11;

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  double z = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    z += w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
  }
  for (auto& v : w) v /= z;
  return w;
}

// Valid-mode separable filtering of a W x H plane into (W-10) x (H-10).
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t w, std::size_t h,
                                 const std::array<double, kSsimWindow>& g) {
  const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(ow * h), out(ow * oh);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const GrayImage& a, const GrayImage& b) {
  check_same_dims(a, b, "ssim");
  if (a.width < kSsimWindow || a.height < kSsimWindow)
    throw std::invalid_argument("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " is smaller than the 11x11 window");
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.pixels[i];
    y[i] = b.pixels[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto g = gaussian_window();
  const std::size_t w = a.width, h = a.height;
  const auto mx = filter_valid(x, w, h, g), my = filter_valid(y, w, h, g);
  const auto sxx = filter_valid(xx, w, h, g), syy = filter_valid(yy, w, h, g), sxy = filter_valid(xy, w, h, g);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------- grid evaluation

GrayImage grid_noisy_image(const GrayImage& clean, const NoiseSpec& spec, std::uint64_t seed, std::size_t row) {
  Rng rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(Stream::Eval)), row));
  return apply_noise(clean, spec, rng);
}

namespace {

struct LevelRange {
  double lo, hi;
};

LevelRange source_range(NoiseSource s) {
  return s == NoiseSource::AWGN ? LevelRange{0.0, kMaxSigma} : LevelRange{double(kMinQuality), double(kMaxQuality)};
}

std::size_t bucket_of(const NoiseSpec& spec) {
  const auto r = source_range(spec.source);
  const double t = (spec.level - r.lo) / (r.hi - r.lo);
  return static_cast<std::size_t>(std::clamp(std::floor(t * 4.0), 0.0, 3.0));
}

EvalAggregate summarize(std::string source, std::string bucket, double lo, double hi,
                        const std::vector<const EvalRow*>& rows) {
  EvalAggregate a{std::move(source), std::move(bucket), lo, hi, rows.size()};
  std::size_t finite_noisy = 0, finite_denoised = 0;
  for (const EvalRow* r : rows) {
    if (std::isfinite(r->psnr_noisy)) {
      a.mean_psnr_noisy += r->psnr_noisy;
      ++finite_noisy;
    }
    if (std::isfinite(r->psnr_denoised)) {
      a.mean_psnr_denoised += r->psnr_denoised;
      ++finite_denoised;
    } else {
      ++a.infinite_psnr;
    }
    a.mean_ssim_denoised += r->ssim_denoised;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  a.mean_psnr_noisy = finite_noisy ? a.mean_psnr_noisy / double(finite_noisy) : nan;
  a.mean_psnr_denoised = finite_denoised ? a.mean_psnr_denoised / double(finite_denoised) : nan;
  a.mean_ssim_denoised = rows.empty() ? nan : a.mean_ssim_denoised / double(rows.size());
  return a;
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

std::vector<EvalAggregate> EvalReport::aggregates() const {
  std::vector<EvalAggregate> out;
  std::vector<const EvalRow*> all;
  for (NoiseSource s : {NoiseSource::AWGN, NoiseSource::JPEG}) {
    const auto r = source_range(s);
    std::vector<const EvalRow*> by_source;
    std::array<std::vector<const EvalRow*>, 4> buckets;
    for (const auto& row : rows)
      if (row.spec.source == s) {
        by_source.push_back(&row);
        buckets[bucket_of(row.spec)].push_back(&row);
      }
    if (by_source.empty()) continue;
    const double step = (r.hi - r.lo) / 4.0;
    for (std::size_t b = 0; b < 4; ++b)
      if (!buckets[b].empty())
        out.push_back(summarize(noise_source_name(s), "b" + std::to_string(b), r.lo + step * double(b),
                                r.lo + step * double(b + 1), buckets[b]));
    out.push_back(summarize(noise_source_name(s), "all", r.lo, r.hi, by_source));
    all.insert(all.end(), by_source.begin(), by_source.end());
  }
  if (!all.empty()) {
    double lo = std::numeric_limits<double>::quiet_NaN(), hi = lo;
    out.push_back(summarize("all", "all", lo, hi, all));
  }
  return out;
}

double EvalReport::mean_psnr_denoised() const {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (std::isfinite(r.psnr_denoised)) {
      acc += r.psnr_denoised;
      ++n;
    }
  return n ? acc / double(n) : std::numeric_limits<double>::quiet_NaN();
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "image_index,source,level,expert,expert_label,psnr_noisy,psnr_denoised,ssim_denoised\n";
  for (const auto& r : rows)
    out << r.image_index << "," << noise_source_name(r.spec.source) << "," << num(r.spec.level) << "," << r.expert
        << "," << r.expert + 1 << "," << num(r.psnr_noisy) << "," << num(r.psnr_denoised) << ","
        << num(r.ssim_denoised) << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void EvalReport::write_aggregates_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "source,bucket,level_lo,level_hi,count,infinite_psnr,mean_psnr_noisy,mean_psnr_denoised,mean_ssim_denoised\n";
  for (const auto& a : aggregates())
    out << a.source << "," << a.bucket << "," << num(a.level_lo) << "," << num(a.level_hi) << "," << a.count << ","
        << a.infinite_psnr << "," << num(a.mean_psnr_noisy) << "," << num(a.mean_psnr_denoised) << ","
        << num(a.mean_ssim_denoised) << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

EvalReport evaluate_grid(const ModelBundle& bundle, const std::vector<GrayImage>& clean, const EvalGrid& grid,
                         std::uint64_t seed, const EvalOptions& options) {
  bundle.validate();
  for (const auto& e : grid)
    if (e.image_index >= clean.size())
      throw std::out_of_range("grid references image " + std::to_string(e.image_index) + " but only " +
                              std::to_string(clean.size()) + " images were given");
  EvalReport report;
  report.rows.resize(grid.size());
  std::vector<GrayImage> noisy_out, denoised_out;
  if (options.on_row) {
    noisy_out.resize(grid.size());
    denoised_out.resize(grid.size());
  }
  parallel_rows(grid.size(), options.threads, [&](std::size_t i) {
    const GrayImage& ref = clean[grid[i].image_index];
    GrayImage noisy = grid_noisy_image(ref, grid[i].spec, seed, i);
    BlindResult res = denoise_blind(bundle, noisy);
    report.rows[i] = {grid[i].image_index, grid[i].spec, res.expert, psnr(clamp01(noisy), ref), psnr(res.image, ref),
                      ssim(res.image, ref)};
    if (options.on_row) {
      noisy_out[i] = std::move(noisy);
      denoised_out[i] = std::move(res.image);
    }
  });
  if (options.on_row)
    for (std::size_t i = 0; i < grid.size(); ++i) options.on_row(i, noisy_out[i], denoised_out[i]);
  return report;
}

// ---------------------------------------------------------------- assignment

double AssignmentGrid::agreement() const {
  std::size_t same = 0, total = 0;
  for (std::size_t l = 0; l < oracle.size(); ++l)
    for (std::size_t i = 0; i < oracle[l].size(); ++i) {
      same += oracle[l][i] == routed[l][i] ? 1 : 0;
      ++total;
    }
  return total ? double(same) / double(total) : 1.0;
}

void AssignmentGrid::write_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "level_row,source,level,image_index,oracle_expert,routed_expert,oracle_psnr,routed_psnr\n";
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (std::size_t i = 0; i < n_images; ++i)
      out << l << "," << noise_source_name(levels[l].source) << "," << num(levels[l].level) << "," << i << ","
          << oracle[l][i] << "," << routed[l][i] << "," << num(oracle_psnr[l][i]) << "," << num(routed_psnr[l][i])
          << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::vector<NoiseSpec> paper_assignment_levels(NoiseSource source) {
  std::vector<NoiseSpec> out;
  if (source == NoiseSource::AWGN)
    for (double s : {5.0, 10.0, 15.0, 25.0, 35.0, 50.0}) out.push_back(NoiseSpec::awgn(s));
  else
    for (int q : {80, 60, 40, 20, 10, 5}) out.push_back(NoiseSpec::jpeg(q));
  return out;
}

AssignmentGrid assignment_grid(const ModelBundle& bundle, const std::vector<GrayImage>& clean,
                               const std::vector<NoiseSpec>& levels, std::uint64_t seed, int threads) {
  bundle.validate();
  if (clean.empty()) throw std::invalid_argument("assignment grid needs at least one image");
  if (levels.empty()) throw std::invalid_argument("assignment grid needs at least one level");
  AssignmentGrid g;
  g.levels = levels;
  g.n_images = clean.size();
  const std::size_t nl = levels.size(), ni = clean.size();
  g.oracle.assign(nl, std::vector<std::size_t>(ni));
  g.routed = g.oracle;
  g.oracle_psnr.assign(nl, std::vector<double>(ni));
  g.routed_psnr = g.oracle_psnr;
  parallel_rows(nl * ni, threads, [&](std::size_t cell) {
    const std::size_t l = cell / ni, i = cell % ni;
    const GrayImage noisy = grid_noisy_image(clean[i], levels[l], seed, cell);
    std::vector<double> scores(bundle.experts.size());
    for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = psnr(denoise_with(bundle.experts[j], noisy), clean[i]);
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j)
      if (scores[j] > scores[best]) best = j;
    const std::size_t routed = bundle.experts.size() > 1 ? select_expert(bundle.gate, noisy) : 0;
    g.oracle[l][i] = best;
    g.routed[l][i] = routed;
    g.oracle_psnr[l][i] = scores[best];
    g.routed_psnr[l][i] = scores[routed];
  });
  return g;
}

// ---------------------------------------------------------------- complexity

Complexity effective_complexity(const ExpertConfig& expert, int n_experts, std::size_t width, std::size_t height) {
  if (n_experts < 1) throw std::invalid_argument("complexity needs at least one expert");
  if (width == 0 || height == 0) throw std::invalid_argument("complexity needs a non-empty image");
  Complexity c;
  c.params_expert = expert_param_count(expert);
  c.params_gate = gate_param_count(n_experts);
  c.params_total = c.params_expert * static_cast<std::size_t>(n_experts) + c.params_gate;
  std::size_t area = 0;
  for (const auto& w : routing_windows(width, height)) area += w.size * w.size;
  c.area_ratio = std::min(1.0, double(area) / (double(width) * double(height)));
  c.params_effective = double(c.params_expert) + double(c.params_gate) * c.area_ratio;
  return c;
}

Complexity effective_complexity(const ModelBundle& bundle, std::size_t width, std::size_t height) {
  bundle.validate();
  return effective_complexity(bundle.expert_config, static_cast<int>(bundle.n_experts()), width, height);
}

}  // namespace coe
