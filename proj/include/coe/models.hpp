#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "coe/adam.hpp"
#include "coe/network.hpp"
#include "coe/rng.hpp"

namespace coe {

/// DnCNN without batch normalization, depth X and Y filters ("dXcY").
struct ExpertConfig {
  int depth = 5;
  int channels = 16;

  /// Parses "d5c16".
  static ExpertConfig parse(const std::string& text);
  std::string name() const;
  void validate() const;

  /// Conv(1->Y)+ReLU, (X-2) x [Conv(Y->Y)+ReLU], Conv(Y->1).
  std::vector<LayerSpec> layers() const;

  friend bool operator==(const ExpertConfig&, const ExpertConfig&) = default;
};

/// (9Y+Y) + (X-2)(9Y^2+Y) + (9Y+1): grayscale expert with biases.
std::size_t expert_param_count(const ExpertConfig& config);

/// Four 16-filter conv layers, PReLU after the first three, GAP, FC(16->N').
std::vector<LayerSpec> gate_layers(int n_experts);
std::size_t gate_param_count(int n_experts);

inline constexpr int kGateFilters = 16;

/// Residual denoiser: output = input - net(input).
class ExpertNet {
 public:
  ExpertNet() = default;
  ExpertNet(ExpertConfig config, Network<float> net, double lr = kDefaultLearningRate);

  const ExpertConfig& config() const noexcept { return config_; }
  Network<float>& network() noexcept { return net_; }
  const Network<float>& network() const noexcept { return net_; }
  std::vector<AdamState>& optimizer() noexcept { return adam_; }
  const std::vector<AdamState>& optimizer() const noexcept { return adam_; }

  /// [N,1,H,W] -> [N,1,H,W]. Never clamps.
  Tensor denoise(const Tensor& noisy, ForwardCache<float>* cache = nullptr) const;

  /// Backpropagates dL/d(output) through the residual and applies one Adam step.
  void update(const ForwardCache<float>& cache, const Tensor& grad_output);

  void reset_optimizer();
  void set_learning_rate(double lr);
  std::size_t param_count() const noexcept { return net_.param_count(); }
  /// Hash over every parameter tensor; changes iff any parameter bit changes.
  std::uint64_t param_hash() const;

 private:
  ExpertConfig config_;
  Network<float> net_;
  std::vector<AdamState> adam_;
};

/// Routing network; stores logits only, consumers apply softmax.
class GateNet {
 public:
  GateNet() = default;
  GateNet(int n_experts, Network<float> net, double lr = kDefaultLearningRate);

  int n_experts() const noexcept { return n_experts_; }
  Network<float>& network() noexcept { return net_; }
  const Network<float>& network() const noexcept { return net_; }
  std::vector<AdamState>& optimizer() noexcept { return adam_; }
  const std::vector<AdamState>& optimizer() const noexcept { return adam_; }

  /// [N,1,h,w] -> [N, N'] for any h, w >= 1.
  Tensor logits(const Tensor& patches, ForwardCache<float>* cache = nullptr) const;

  /// One cross-entropy step with every row labeled `label`. Returns the loss
  /// measured before the update.
  double train_step(const Tensor& patches, int label);

  void reset_optimizer();
  void set_learning_rate(double lr);
  std::size_t param_count() const noexcept { return net_.param_count(); }
  std::uint64_t param_hash() const;

 private:
  int n_experts_ = 0;
  Network<float> net_;
  std::vector<AdamState> adam_;
};

ExpertNet build_expert(const ExpertConfig& config, Rng& rng, double lr = kDefaultLearningRate);
GateNet build_gate(int n_experts, Rng& rng, double lr = kDefaultLearningRate);

/// Free-function forms of the model operations.
Tensor expert_denoise(const ExpertNet& expert, const Tensor& image);
Tensor gate_logits(const GateNet& gate, const Tensor& patches);
std::size_t count_params(const ExpertNet& expert);
std::size_t count_params(const GateNet& gate);

/// Residual forward in any precision; the gradient checker uses the double form.
template <typename T>
BasicTensor<T> residual_forward(const Network<T>& net, const BasicTensor<T>& noisy,
                                ForwardCache<T>* cache = nullptr);

/// Process-wide count of full expert forward passes (ExpertNet::denoise calls).
std::uint64_t expert_forward_passes() noexcept;

}  // namespace coe
