#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coe/checkpoint.hpp"
#include "coe/image.hpp"
#include "coe/models.hpp"
#include "coe/noise.hpp"

namespace coe {

/// Run configuration. Keys of the flat config file mirror the CLI flags
/// (see docs/formats.md).
struct TrainConfig {
  int n_experts = 2;
  ExpertConfig expert{3, 8};
  std::size_t patch_size = 32;
  std::size_t patches_per_batch = 8;
  int pretrain_epochs = 30;
  int compete_epochs = 60;
  int iterations_per_epoch = 200;
  double lr = kDefaultLearningRate;
  std::uint64_t seed = 0;
  bool train_gate = true;
  /// Zero E1's Adam moments when the competition starts (clones always start fresh).
  bool reset_optimizer_on_clone = true;
  std::string noise = "paper";
  int threads = 1;

  /// Small single-core profile: d3c8, N'=2, 32x32 patches, 8 per batch,
  /// 30 + 60 epochs of 200 iterations.
  static TrainConfig desk_profile();
  /// Full-scale shape: d5c16, N'=7, 16 patches of 64x64, 200 + 400 epochs.
  static TrainConfig paper_profile();

  void validate() const;
  int total_epochs() const { return pretrain_epochs + compete_epochs; }

  std::map<std::string, std::string> to_kv() const;
  /// Applies known keys over the current values; unknown keys throw.
  void apply_kv(const std::map<std::string, std::string>& kv);
  void write_file(const std::filesystem::path& path) const;
  static std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);
};

/// N_p aligned noisy/clean patches cut from one image pair.
struct PatchBatch {
  Tensor noisy;  // [N_p, 1, s, s]
  Tensor clean;
  std::size_t image_index = 0;
  NoiseSpec spec;
  std::vector<std::pair<std::size_t, std::size_t>> origins;  // (x, y) of each patch
};

class ImageTooSmallError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Independent uniform patch positions, identical windows in both images.
PatchBatch sample_patch_batch(const GrayImage& noisy, const GrayImage& clean, std::size_t n_patches,
                              std::size_t patch_size, Rng& rng);

/// MSE of each expert's reconstruction on the batch (mean over all patch
/// elements). Forward only. With threads > 1 experts run concurrently; the
/// result is identical to the serial one.
std::vector<double> compute_loss_vector(const std::vector<ExpertNet>& experts, const PatchBatch& batch,
                                        int threads = 1);

/// Index of the smallest loss, smallest index on ties. Throws on NaN or empty input.
std::size_t winner(const std::vector<double>& losses);

/// One Adam step on `expert` against the batch; returns the pre-update loss.
double pretrain_step(ExpertNet& expert, const PatchBatch& batch);

/// n copies of `source` with fresh optimizer state. When `reset_source` is set
/// the first element's moments are zeroed too; otherwise it keeps source's.
std::vector<ExpertNet> clone_experts(const ExpertNet& source, int n, bool reset_source = true);

struct StepResult {
  std::size_t winner = 0;
  double winning_loss = 0.0;
  double gate_loss = 0.0;  // NaN when no gate was trained
  std::vector<double> losses;
};

/// Winner-take-all step: losses for all experts, one Adam step for the
/// winner only, and (if `gate` is given) one cross-entropy step labeling every
/// patch of the batch with the winner index.
StepResult competition_step(std::vector<ExpertNet>& experts, GateNet* gate, const PatchBatch& batch,
                            int threads = 1);

struct IterationRecord {
  int epoch = 0;  // 1-based
  int iteration = 0;
  std::size_t image_index = 0;
  NoiseSpec spec;
  std::size_t winner = 0;
  double winning_loss = 0.0;
  double gate_loss = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based, pretraining epochs first
  bool competition = false;
  std::vector<std::size_t> wins;
  std::vector<double> mean_winning_loss;  // NaN where an expert won nothing
  std::optional<double> eval_psnr;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<IterationRecord> iterations;

  /// Experts with nonzero wins in the final epoch.
  std::size_t effective_clusters() const;

  /// Columns: epoch,expert_id,wins,mean_winning_loss,eval_psnr (expert_id 0-based).
  void write_csv(const std::filesystem::path& path) const;
  /// Columns: epoch,iteration,image_index,source,level,winner,winning_loss,gate_loss.
  void write_iterations_csv(const std::filesystem::path& path) const;
  static TrainLog read_csv(const std::filesystem::path& epochs_csv, const std::filesystem::path& iterations_csv);

  /// Drops everything after `epoch`.
  void truncate(int epoch);
};

/// Noisy/clean pair used for per-epoch evaluation PSNR.
struct EvalPair {
  GrayImage noisy;
  GrayImage clean;
};

/// Algorithm driver: pretrains E1, clones it, runs the competition and
/// trains the gate alongside. Epochs run one at a time so callers can
/// checkpoint between them.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<GrayImage> dataset);

  /// Restores experts, gate, RNG stream and epoch counter from a checkpoint
  /// taken at an epoch boundary, plus the log up to that epoch.
  void resume(const Checkpoint& ckpt, TrainLog log);
  Checkpoint checkpoint() const;

  void set_eval_set(std::vector<EvalPair> eval);
  /// Called after every iteration with the record and the step's state.
  void set_iteration_hook(std::function<void(const IterationRecord&, const Trainer&)> hook);

  bool done() const { return epoch_ >= config_.total_epochs(); }
  bool in_competition() const { return epoch_ >= config_.pretrain_epochs; }
  int completed_epochs() const { return epoch_; }

  void run_epoch();
  void run(const std::function<void(const Trainer&)>& on_epoch_end = {});

  const TrainConfig& config() const noexcept { return config_; }
  const std::vector<ExpertNet>& experts() const noexcept { return experts_; }
  std::vector<ExpertNet>& experts() noexcept { return experts_; }
  const GateNet& gate() const noexcept { return gate_; }
  const TrainLog& log() const noexcept { return log_; }

 private:
  void start_competition();

  TrainConfig config_;
  NoiseMix mix_;
  std::vector<GrayImage> dataset_;
  std::vector<ExpertNet> experts_;
  GateNet gate_;
  Rng rng_;
  int epoch_ = 0;
  TrainLog log_;
  std::vector<EvalPair> eval_;
  std::function<void(const IterationRecord&, const Trainer&)> hook_;
};

struct TrainResult {
  std::vector<ExpertNet> experts;
  GateNet gate;
  TrainLog log;
};

TrainResult train(const TrainConfig& config, const std::vector<GrayImage>& dataset);

/// Stream ids for derive_seed(run_seed, id).
enum class Stream : std::uint64_t { Init = 1, Data = 2, Eval = 3, Synth = 4 };

}  // namespace coe
