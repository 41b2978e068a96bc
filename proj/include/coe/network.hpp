#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "coe/layers.hpp"
#include "coe/rng.hpp"
#include "coe/tensor.hpp"

namespace coe {

enum class LayerKind { Conv3x3, ReLU, PReLU, GlobalAvgPool, FullyConnected };

const char* layer_kind_name(LayerKind kind) noexcept;

/// in/out channels are meaningful for Conv3x3 and FullyConnected; PReLU uses
/// in_channels as its slope count.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool has_bias = true;

  static LayerSpec conv(std::size_t in, std::size_t out, bool bias = true) {
    return {LayerKind::Conv3x3, in, out, bias};
  }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0, false}; }
  static LayerSpec prelu(std::size_t channels) { return {LayerKind::PReLU, channels, channels, false}; }
  static LayerSpec gap() { return {LayerKind::GlobalAvgPool, 0, 0, false}; }
  static LayerSpec fc(std::size_t in, std::size_t out, bool bias = true) {
    return {LayerKind::FullyConnected, in, out, bias};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Activations entering each layer, kept for the backward pass.
template <typename T>
struct ForwardCache {
  std::vector<BasicTensor<T>> inputs;
};

/// A plain layer stack with hand-wired backpropagation. Parameters live in one
/// ordered list; `param_names()` gives each a stable name such as "0.weight".
template <typename T>
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerSpec> layers);

  /// Kaiming fan-in normal weights, zero biases, PReLU slopes 0.25.
  void initialize(Rng& rng);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::vector<BasicTensor<T>>& params() noexcept { return params_; }
  const std::vector<BasicTensor<T>>& params() const noexcept { return params_; }
  const std::vector<std::string>& param_names() const noexcept { return names_; }
  std::size_t param_count() const noexcept;

  BasicTensor<T> forward(const BasicTensor<T>& input, ForwardCache<T>* cache = nullptr) const;

  /// Fills `grads` (same layout as params()) and returns the input gradient.
  BasicTensor<T> backward(const ForwardCache<T>& cache, const BasicTensor<T>& grad_out,
                          std::vector<BasicTensor<T>>& grads) const;

  template <typename U>
  Network<U> cast() const {
    Network<U> out(layers_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = params_[i].template cast<U>();
    return out;
  }

 private:
  struct Slots {
    int weight = -1;
    int bias = -1;
  };

  std::vector<LayerSpec> layers_;
  std::vector<Slots> slots_;
  std::vector<BasicTensor<T>> params_;
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> zero_bias_;  // stand-ins for bias-free layers
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace coe
