#include "coe/models.hpp"

#include <atomic>
#include <cmath>
#include <regex>
#include <stdexcept>

namespace coe {

namespace {
std::atomic<std::uint64_t> g_expert_forwards{0};

std::vector<AdamState> make_adam(const Network<float>& net, double lr) {
  std::vector<AdamState> states;
  states.reserve(net.params().size());
  for (const auto& p : net.params()) states.emplace_back(p.shape(), lr);
  return states;
}

std::uint64_t hash_params(const Network<float>& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : net.params()) h = tensor_hash(p, h);
  return h;
}

void apply_adam(Network<float>& net, std::vector<AdamState>& adam, const std::vector<Tensor>& grads) {
  auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) adam_step(params[i], grads[i], adam[i], net.param_names()[i]);
}
}  // namespace

std::uint64_t expert_forward_passes() noexcept { return g_expert_forwards.load(); }

ExpertConfig ExpertConfig::parse(const std::string& text) {
  static const std::regex re(R"(d(\d+)c(\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re))
    throw std::invalid_argument("expert architecture '" + text + "' is not of the form dXcY");
  ExpertConfig c{std::stoi(m[1]), std::stoi(m[2])};
  c.validate();
  return c;
}

std::string ExpertConfig::name() const {
  return "d" + std::to_string(depth) + "c" + std::to_string(channels);
}

void ExpertConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("expert depth must be at least 2, got " + std::to_string(depth));
  if (channels < 1) throw std::invalid_argument("expert channels must be at least 1");
}

std::vector<LayerSpec> ExpertConfig::layers() const {
  validate();
  const auto y = static_cast<std::size_t>(channels);
  std::vector<LayerSpec> layers{LayerSpec::conv(1, y), LayerSpec::relu()};
  for (int i = 0; i < depth - 2; ++i) {
    layers.push_back(LayerSpec::conv(y, y));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::conv(y, 1));
  return layers;
}

std::size_t expert_param_count(const ExpertConfig& config) {
  config.validate();
  const auto x = static_cast<std::size_t>(config.depth), y = static_cast<std::size_t>(config.channels);
  return (9 * y + y) + (x - 2) * (9 * y * y + y) + (9 * y + 1);
}

std::vector<LayerSpec> gate_layers(int n_experts) {
  if (n_experts < 1) throw std::invalid_argument("gate needs at least one output");
  const std::size_t f = kGateFilters;
  return {LayerSpec::conv(1, f),   LayerSpec::prelu(f), LayerSpec::conv(f, f), LayerSpec::prelu(f),
          LayerSpec::conv(f, f),   LayerSpec::prelu(f), LayerSpec::conv(f, f), LayerSpec::gap(),
          LayerSpec::fc(f, static_cast<std::size_t>(n_experts))};
}

std::size_t gate_param_count(int n_experts) {
  const std::size_t f = kGateFilters, k = static_cast<std::size_t>(n_experts);
  return (9 * f + f) + 3 * (9 * f * f + f) + 3 * f + (f * k + k);
}

ExpertNet::ExpertNet(ExpertConfig config, Network<float> net, double lr)
    : config_(config), net_(std::move(net)), adam_(make_adam(net_, lr)) {
  if (net_.layers() != config_.layers())
    throw std::invalid_argument("network layers do not match expert config " + config_.name());
}

Tensor ExpertNet::denoise(const Tensor& noisy, ForwardCache<float>* cache) const {
  g_expert_forwards.fetch_add(1, std::memory_order_relaxed);
  return residual_forward(net_, noisy, cache);
}

void ExpertNet::update(const ForwardCache<float>& cache, const Tensor& grad_output) {
  // output = x - r(x), so dL/dr = -dL/doutput.
  Tensor grad_residual = grad_output;
  for (auto& g : grad_residual.values()) g = -g;
  std::vector<Tensor> grads;
  net_.backward(cache, grad_residual, grads);
  apply_adam(net_, adam_, grads);
}

void ExpertNet::reset_optimizer() {
  for (auto& s : adam_) s.reset();
}

void ExpertNet::set_learning_rate(double lr) {
  for (auto& s : adam_) s.lr = lr;
}

std::uint64_t ExpertNet::param_hash() const { return hash_params(net_); }

GateNet::GateNet(int n_experts, Network<float> net, double lr)
    : n_experts_(n_experts), net_(std::move(net)), adam_(make_adam(net_, lr)) {
  if (net_.layers() != gate_layers(n_experts))
    throw std::invalid_argument("network layers do not match a gate for " + std::to_string(n_experts) +
                                " experts");
}

Tensor GateNet::logits(const Tensor& patches, ForwardCache<float>* cache) const {
  expect_rank(patches, 4, "gate input");
  if (patches.dim(1) != 1) throw ShapeError("gate input must be single-channel, got " + shape_str(patches.shape()));
  return net_.forward(patches, cache);
}

double GateNet::train_step(const Tensor& patches, int label) {
  if (n_experts_ == 1) {
    // One class: the loss and every gradient are exactly zero, so Adam only advances its step counters.
    expect_rank(patches, 4, "gate patches");
    if (label != 0) throw std::out_of_range("gate label " + std::to_string(label) + " out of range for 1 expert");
    for (auto& s : adam_) ++s.step_count;
    return 0.0;
  }
  ForwardCache<float> cache;
  const Tensor out = logits(patches, &cache);
  const std::vector<int> labels(patches.dim(0), label);
  auto ce = softmax_cross_entropy(out, labels);
  if (!std::isfinite(ce.loss)) throw NonFiniteError("gate cross-entropy is not finite");
  std::vector<Tensor> grads;
  net_.backward(cache, ce.grad, grads);
  apply_adam(net_, adam_, grads);
  return ce.loss;
}

void GateNet::reset_optimizer() {
  for (auto& s : adam_) s.reset();
}

void GateNet::set_learning_rate(double lr) {
  for (auto& s : adam_) s.lr = lr;
}

std::uint64_t GateNet::param_hash() const { return hash_params(net_); }

ExpertNet build_expert(const ExpertConfig& config, Rng& rng, double lr) {
  Network<float> net(config.layers());
  net.initialize(rng);
  return ExpertNet(config, std::move(net), lr);
}

GateNet build_gate(int n_experts, Rng& rng, double lr) {
  Network<float> net(gate_layers(n_experts));
  net.initialize(rng);
  return GateNet(n_experts, std::move(net), lr);
}

Tensor expert_denoise(const ExpertNet& expert, const Tensor& image) { return expert.denoise(image); }
Tensor gate_logits(const GateNet& gate, const Tensor& patches) { return gate.logits(patches); }
std::size_t count_params(const ExpertNet& expert) { return expert.param_count(); }
std::size_t count_params(const GateNet& gate) { return gate.param_count(); }

template <typename T>
BasicTensor<T> residual_forward(const Network<T>& net, const BasicTensor<T>& noisy, ForwardCache<T>* cache) {
  expect_rank(noisy, 4, "expert input");
  if (noisy.dim(1) != 1)
    throw ShapeError("experts take grayscale [N,1,H,W] input, got " + shape_str(noisy.shape()));
  const BasicTensor<T> residual = net.forward(noisy, cache);
  BasicTensor<T> out = noisy;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= residual[i];
  return out;
}

template Tensor residual_forward(const Network<float>&, const Tensor&, ForwardCache<float>*);
template Tensor64 residual_forward(const Network<double>&, const Tensor64&, ForwardCache<double>*);

}  // namespace coe
