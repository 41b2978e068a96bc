#include "coe/network.hpp"

#include <cmath>
#include <stdexcept>

namespace coe {

const char* layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::ReLU: return "relu";
    case LayerKind::PReLU: return "prelu";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::FullyConnected: return "fc";
  }
  return "?";
}

template <typename T>
Network<T>::Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  slots_.resize(layers_.size());
  zero_bias_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::string prefix = std::to_string(i) + ".";
    auto add = [&](Shape shape, const std::string& name) {
      params_.emplace_back(std::move(shape));
      names_.push_back(prefix + name);
      return static_cast<int>(params_.size() - 1);
    };
    switch (l.kind) {
      case LayerKind::Conv3x3:
      case LayerKind::FullyConnected: {
        if (l.in_channels == 0 || l.out_channels == 0)
          throw std::invalid_argument("layer " + std::to_string(i) + " needs positive channel counts");
        Shape ws = l.kind == LayerKind::Conv3x3 ? Shape{l.out_channels, l.in_channels, 3, 3}
                                                : Shape{l.out_channels, l.in_channels};
        slots_[i].weight = add(std::move(ws), "weight");
        if (l.has_bias)
          slots_[i].bias = add(Shape{l.out_channels}, "bias");
        else
          zero_bias_[i] = BasicTensor<T>(Shape{l.out_channels});
        break;
      }
      case LayerKind::PReLU:
        if (l.in_channels == 0)
          throw std::invalid_argument("prelu layer " + std::to_string(i) + " needs a channel count");
        slots_[i].weight = add(Shape{l.in_channels}, "slope");
        break;
      case LayerKind::ReLU:
      case LayerKind::GlobalAvgPool:
        break;
    }
  }
}

template <typename T>
void Network<T>::initialize(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    if (l.kind == LayerKind::PReLU) {
      params_[slots_[i].weight].fill(T(0.25));
      continue;
    }
    if (l.kind != LayerKind::Conv3x3 && l.kind != LayerKind::FullyConnected) continue;
    const double fan_in = static_cast<double>(l.in_channels) * (l.kind == LayerKind::Conv3x3 ? 9.0 : 1.0);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& w : params_[slots_[i].weight].values()) w = static_cast<T>(rng.normal(0.0, stddev));
    if (slots_[i].bias >= 0) params_[slots_[i].bias].fill(T(0));
  }
}

template <typename T>
std::size_t Network<T>::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& input, ForwardCache<T>* cache) const {
  if (cache) {
    cache->inputs.clear();
    cache->inputs.reserve(layers_.size());
  }
  BasicTensor<T> x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const Slots& s = slots_[i];
    BasicTensor<T> y;
    switch (l.kind) {
      case LayerKind::Conv3x3:
        y = conv3x3_forward(x, params_[s.weight], s.bias >= 0 ? params_[s.bias] : zero_bias_[i]);
        break;
      case LayerKind::ReLU: y = relu_forward(x); break;
      case LayerKind::PReLU: y = prelu_forward(x, params_[s.weight]); break;
      case LayerKind::GlobalAvgPool: y = gap_forward(x); break;
      case LayerKind::FullyConnected:
        y = fc_forward(x, params_[s.weight], s.bias >= 0 ? params_[s.bias] : zero_bias_[i]);
        break;
    }
    if (cache)
      cache->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

template <typename T>
BasicTensor<T> Network<T>::backward(const ForwardCache<T>& cache, const BasicTensor<T>& grad_out,
                                    std::vector<BasicTensor<T>>& grads) const {
  if (cache.inputs.size() != layers_.size())
    throw std::logic_error("backward called without a matching forward cache");
  grads.resize(params_.size());
  BasicTensor<T> g = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const LayerSpec& l = layers_[k];
    const Slots& s = slots_[k];
    const BasicTensor<T>& x = cache.inputs[k];
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        auto cg = conv3x3_backward(g, x, params_[s.weight]);
        grads[s.weight] = std::move(cg.weight);
        if (s.bias >= 0) grads[s.bias] = std::move(cg.bias);
        g = std::move(cg.input);
        break;
      }
      case LayerKind::ReLU: g = relu_backward(g, x); break;
      case LayerKind::PReLU: {
        auto pg = prelu_backward(g, x, params_[s.weight]);
        grads[s.weight] = std::move(pg.slope);
        g = std::move(pg.input);
        break;
      }
      case LayerKind::GlobalAvgPool: g = gap_backward(g, x.shape()); break;
      case LayerKind::FullyConnected: {
        auto fg = fc_backward(g, x, params_[s.weight]);
        grads[s.weight] = std::move(fg.weight);
        if (s.bias >= 0) grads[s.bias] = std::move(fg.bias);
        g = std::move(fg.input);
        break;
      }
    }
  }
  return g;
}

template class Network<float>;
template class Network<double>;

}  // namespace coe
