#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "coe/checkpoint.hpp"
#include "coe/image.hpp"
#include "coe/models.hpp"
#include "coe/noise.hpp"

namespace coe {

/// Experts plus the gate that routes between them.
struct ModelBundle {
  ExpertConfig expert_config;
  std::vector<ExpertNet> experts;
  GateNet gate;

  /// Throws unless every expert matches expert_config and the gate width equals the expert count.
  void validate() const;
  std::size_t n_experts() const noexcept { return experts.size(); }

  static ModelBundle from_checkpoint(const Checkpoint& ckpt);
};

inline constexpr std::size_t kRoutingPatchSize = 64;
inline constexpr std::size_t kRoutingPatchCount = 5;

struct PatchWindow {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t size = 0;
};

/// Deterministic disjoint windows fed to the gate. Four corners plus the
/// center when those are disjoint; otherwise up to five cells of a centered
/// grid of `patch`-sized tiles in row-major order; otherwise one center crop
/// of side min(W, H, patch).
std::vector<PatchWindow> routing_windows(std::size_t width, std::size_t height,
                                         std::size_t patch = kRoutingPatchSize);

/// [k, 1, s, s] stack of the routing windows.
Tensor routing_patches(const GrayImage& image, std::size_t patch = kRoutingPatchSize);

/// Softmax per row, probabilities averaged over rows, argmax with the smallest index on ties.
std::size_t select_from_logits(const Tensor& logits);

std::size_t select_expert(const GateNet& gate, const GrayImage& image, std::size_t patch = kRoutingPatchSize);

struct BlindResult {
  GrayImage image;
  std::size_t expert = 0;
};

/// Routes the image, then runs only the selected expert on the whole image.
/// Output is clamped to [0, 1]. A single expert bypasses the gate.
BlindResult denoise_blind(const std::vector<ExpertNet>& experts, const GateNet& gate, const GrayImage& image);
BlindResult denoise_blind(const ModelBundle& bundle, const GrayImage& image);

/// Full-image forward of one expert, clamped to [0, 1].
GrayImage denoise_with(const ExpertNet& expert, const GrayImage& image);

double mse(const GrayImage& a, const GrayImage& b);
/// 10 log10(1 / MSE); +infinity for identical images.
double psnr(const GrayImage& a, const GrayImage& b);
/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1, mean over valid window positions.
double ssim(const GrayImage& a, const GrayImage& b);

/// Deterministic noisy version of grid row `row` under `seed`.
GrayImage grid_noisy_image(const GrayImage& clean, const NoiseSpec& spec, std::uint64_t seed, std::size_t row);

struct EvalRow {
  std::size_t image_index = 0;
  NoiseSpec spec;
  std::size_t expert = 0;
  double psnr_noisy = 0.0;
  double psnr_denoised = 0.0;
  double ssim_denoised = 0.0;
};

struct EvalAggregate {
  std::string source;  // "awgn", "jpeg" or "all"
  std::string bucket;  // "b0".."b3" or "all"
  double level_lo = 0.0;
  double level_hi = 0.0;
  std::size_t count = 0;
  std::size_t infinite_psnr = 0;  // rows left out of the denoised PSNR mean
  double mean_psnr_noisy = 0.0;
  double mean_psnr_denoised = 0.0;
  double mean_ssim_denoised = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  /// Per source, per quarter of the source's level range, per source overall,
  /// and overall. PSNR means cover finite values only.
  std::vector<EvalAggregate> aggregates() const;
  double mean_psnr_denoised() const;

  /// Columns: image_index,source,level,expert,expert_label,psnr_noisy,psnr_denoised,ssim_denoised.
  void write_csv(const std::filesystem::path& path) const;
  /// Columns: source,bucket,level_lo,level_hi,count,infinite_psnr,mean_psnr_noisy,mean_psnr_denoised,mean_ssim_denoised.
  void write_aggregates_csv(const std::filesystem::path& path) const;
};

struct EvalOptions {
  int threads = 1;
  /// Called once per row with (row, noisy, denoised), in row order.
  std::function<void(std::size_t, const GrayImage&, const GrayImage&)> on_row;
};

EvalReport evaluate_grid(const ModelBundle& bundle, const std::vector<GrayImage>& clean, const EvalGrid& grid,
                         std::uint64_t seed, const EvalOptions& options = {});

/// (level, image) matrices of the PSNR-maximizing expert and the routed expert.
struct AssignmentGrid {
  std::vector<NoiseSpec> levels;
  std::size_t n_images = 0;
  std::vector<std::vector<std::size_t>> oracle;  // [level][image]
  std::vector<std::vector<std::size_t>> routed;
  std::vector<std::vector<double>> oracle_psnr;
  std::vector<std::vector<double>> routed_psnr;

  double agreement() const;
  /// Columns: level_row,source,level,image_index,oracle_expert,routed_expert,oracle_psnr,routed_psnr.
  void write_csv(const std::filesystem::path& path) const;
};

/// The paper's analysis levels: AWGN 5,10,15,25,35,50 and JPEG 80,60,40,20,10,5.
std::vector<NoiseSpec> paper_assignment_levels(NoiseSource source);

AssignmentGrid assignment_grid(const ModelBundle& bundle, const std::vector<GrayImage>& clean,
                               const std::vector<NoiseSpec>& levels, std::uint64_t seed, int threads = 1);

struct Complexity {
  std::size_t params_total = 0;
  std::size_t params_expert = 0;
  std::size_t params_gate = 0;
  double area_ratio = 0.0;  // routed patch area over image area, at most 1
  double params_effective = 0.0;
};

Complexity effective_complexity(const ExpertConfig& expert, int n_experts, std::size_t width, std::size_t height);
Complexity effective_complexity(const ModelBundle& bundle, std::size_t width, std::size_t height);

}  // namespace coe
