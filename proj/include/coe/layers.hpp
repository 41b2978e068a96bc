#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "coe/tensor.hpp"

namespace coe {

// Layer kernels. All tensors are NCHW (rank 4) except FullyConnected, which
// is [N, C]. Shapes never broadcast: any mismatch throws ShapeError.

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// 3x3 convolution, stride 1, zero padding 1. weight is [C_out, C_in, 3, 3].
template <typename T>
BasicTensor<T> conv3x3_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const BasicTensor<T>& bias);

template <typename T>
ConvGrads<T> conv3x3_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                              const BasicTensor<T>& weight);

/// Test fixture: while enabled, conv3x3_backward negates its weight gradient.
/// Exists so the gradient checker's sensitivity can be demonstrated.
void set_conv_backward_sign_fault(bool enabled) noexcept;
bool conv_backward_sign_fault() noexcept;

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

template <typename T>
struct PReluGrads {
  BasicTensor<T> input;
  BasicTensor<T> slope;
};

/// Parametric ReLU with one slope per channel (axis 1). Accepts rank 2 or 4.
template <typename T>
BasicTensor<T> prelu_forward(const BasicTensor<T>& input, const BasicTensor<T>& slope);

template <typename T>
PReluGrads<T> prelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& slope);

/// Global average pooling [N,C,H,W] -> [N,C].
template <typename T>
BasicTensor<T> gap_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> gap_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

template <typename T>
struct FcGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// y = x W^T + b with x [N, C_in], W [C_out, C_in], b [C_out].
template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                          const BasicTensor<T>& bias);

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                       const BasicTensor<T>& weight);

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad;
};

/// Mean of squared differences over all elements; grad = 2 (pred - target) / numel.
template <typename T>
LossResult<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Forward-only MSE, for callers that never backpropagate.
template <typename T>
double mse_value(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Mean over rows of -log softmax(logits)[label]; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax of [N, K] logits, max-subtracted.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits);

}  // namespace coe
