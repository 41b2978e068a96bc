#include "coe/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace coe {

namespace {

std::atomic<bool> g_conv_sign_fault{false};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Unfolds one [C, H, W] image into a [C*9, H*W] block of shifted copies
// (row index c*9 + ky*3 + kx, row stride ld), zero outside the image.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, T* cols, std::size_t ld) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + ((c * 3 + ky) * 3 + kx) * ld;
        const int dx = kx - 1;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + sy * w;
          if (dx == 0) {
            std::copy(src, src + w, dst);
          } else if (dx < 0) {
            dst[0] = T(0);
            std::copy(src, src + w - 1, dst + 1);
          } else {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a [C*9, H*W] block back into [C, H, W].
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, T* img, std::size_t ld) {
  const std::size_t hw = h * w;
  std::fill(img, img + channels * hw, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + ((c * 3 + ky) * 3 + kx) * ld;
        const int dx = kx - 1;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const T* src = row + y * w;
          T* dst = plane + sy * w;
          if (dx == 0) {
            for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
          } else if (dx < 0) {
            for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& weight) {
  expect_rank(input, 4, "conv3x3 input");
  expect_rank(weight, 4, "conv3x3 weight");
  if (weight.dim(2) != 3 || weight.dim(3) != 3)
    throw ShapeError("conv3x3 weight must be [C_out,C_in,3,3], got " + shape_str(weight.shape()));
  if (weight.dim(1) != input.dim(1))
    throw ShapeError("conv3x3: input has " + std::to_string(input.dim(1)) +
                     " channels but weight expects " + std::to_string(weight.dim(1)));
}

template <typename T>
std::size_t channel_extent(const BasicTensor<T>& t) {
  // Elements per channel per sample: H*W for rank 4, 1 for rank 2.
  return t.rank() == 4 ? t.dim(2) * t.dim(3) : 1;
}

}  // namespace

void set_conv_backward_sign_fault(bool enabled) noexcept { g_conv_sign_fault.store(enabled); }
bool conv_backward_sign_fault() noexcept { return g_conv_sign_fault.load(); }

template <typename T>
BasicTensor<T> conv3x3_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const BasicTensor<T>& bias) {
  check_conv_shapes(input, weight);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0);
  expect_shape(bias, Shape{cout}, "conv3x3 bias");
  const std::size_t hw = h * w, k = cin * 9;

  BasicTensor<T> out(Shape{n, cout, h, w});
  AlignedVector<T> cols(k * hw);
  ConstMatMap<T> wmat(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.data() + s * cin * hw, cin, h, w, cols.data(), hw);
    ConstMatMap<T> cmat(cols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    MatMap<T> omat(out.data() + s * cout * hw, static_cast<Eigen::Index>(cout),
                   static_cast<Eigen::Index>(hw));
    omat.noalias() = wmat * cmat;
    for (std::size_t c = 0; c < cout; ++c) omat.row(static_cast<Eigen::Index>(c)).array() += bias[c];
  }
  return out;
}

template <typename T>
ConvGrads<T> conv3x3_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                              const BasicTensor<T>& weight) {
  check_conv_shapes(input, weight);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0);
  expect_shape(grad_out, Shape{n, cout, h, w}, "conv3x3 grad_out");
  const std::size_t hw = h * w, k = cin * 9;

  ConvGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()),
                 BasicTensor<T>(Shape{cout})};
  AlignedVector<T> cols(k * hw), gcols(k * hw);
  ConstMatMap<T> wmat(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
  MatMap<T> gw(g.weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.data() + s * cin * hw, cin, h, w, cols.data(), hw);
    ConstMatMap<T> cmat(cols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    ConstMatMap<T> go(grad_out.data() + s * cout * hw, static_cast<Eigen::Index>(cout),
                      static_cast<Eigen::Index>(hw));
    gw.noalias() += go * cmat.transpose();
    for (std::size_t c = 0; c < cout; ++c) {
      const T* row = grad_out.data() + (s * cout + c) * hw;
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += row[i];
      g.bias[c] += acc;
    }
    MatMap<T> gc(gcols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    gc.noalias() = wmat.transpose() * go;
    col2im(gcols.data(), cin, h, w, g.input.data() + s * cin * hw, hw);
  }
  if (g_conv_sign_fault.load(std::memory_order_relaxed))
    for (auto& v : g.weight.values()) v = -v;
  return g;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  expect_shape(grad_out, input.shape(), "relu grad_out");
  BasicTensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input[i] > T(0) ? g[i] : T(0);
  return g;
}

template <typename T>
BasicTensor<T> prelu_forward(const BasicTensor<T>& input, const BasicTensor<T>& slope) {
  if (input.rank() != 2 && input.rank() != 4)
    throw ShapeError("prelu input must be rank 2 or 4, got " + shape_str(input.shape()));
  expect_shape(slope, Shape{input.dim(1)}, "prelu slope");
  const std::size_t n = input.dim(0), c = input.dim(1), ext = channel_extent(input);
  BasicTensor<T> out = input;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (s * c + ch) * ext;
      const T a = slope[ch];
      for (std::size_t i = 0; i < ext; ++i) p[i] = p[i] > T(0) ? p[i] : p[i] * a;
    }
  return out;
}

template <typename T>
PReluGrads<T> prelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& slope) {
  if (input.rank() != 2 && input.rank() != 4)
    throw ShapeError("prelu input must be rank 2 or 4, got " + shape_str(input.shape()));
  expect_shape(slope, Shape{input.dim(1)}, "prelu slope");
  expect_shape(grad_out, input.shape(), "prelu grad_out");
  const std::size_t n = input.dim(0), c = input.dim(1), ext = channel_extent(input);
  PReluGrads<T> g{grad_out, BasicTensor<T>(slope.shape())};
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (s * c + ch) * ext;
      const T a = slope[ch];
      T acc = 0;
      for (std::size_t i = 0; i < ext; ++i) {
        const T x = input[off + i];
        const T go = grad_out[off + i];
        const bool neg = !(x > T(0));
        acc += neg ? go * x : T(0);
        g.input[off + i] = neg ? go * a : go;
      }
      g.slope[ch] += acc;
    }
  return g;
}

template <typename T>
BasicTensor<T> gap_forward(const BasicTensor<T>& input) {
  expect_rank(input, 4, "gap input");
  const std::size_t n = input.dim(0), c = input.dim(1), ext = channel_extent(input);
  BasicTensor<T> out(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* p = input.data() + i * ext;
    T acc = 0;
    for (std::size_t j = 0; j < ext; ++j) acc += p[j];
    out[i] = acc / static_cast<T>(ext);
  }
  return out;
}

template <typename T>
BasicTensor<T> gap_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  if (input_shape.size() != 4) throw ShapeError("gap input shape must be rank 4");
  expect_shape(grad_out, Shape{input_shape[0], input_shape[1]}, "gap grad_out");
  const std::size_t ext = input_shape[2] * input_shape[3];
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const T v = grad_out[i] / static_cast<T>(ext);
    std::fill(g.data() + i * ext, g.data() + (i + 1) * ext, v);
  }
  return g;
}

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                          const BasicTensor<T>& bias) {
  expect_rank(input, 2, "fc input");
  expect_rank(weight, 2, "fc weight");
  if (weight.dim(1) != input.dim(1))
    throw ShapeError("fc: input has " + std::to_string(input.dim(1)) + " features but weight expects " +
                     std::to_string(weight.dim(1)));
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  expect_shape(bias, Shape{cout}, "fc bias");
  BasicTensor<T> out(Shape{n, cout});
  ConstMatMap<T> x(input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cin));
  ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin));
  MatMap<T> y(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
  y.noalias() = x * wm.transpose();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < cout; ++c) out[r * cout + c] += bias[c];
  return out;
}

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                       const BasicTensor<T>& weight) {
  expect_rank(input, 2, "fc input");
  expect_rank(weight, 2, "fc weight");
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  if (weight.dim(1) != cin) throw ShapeError("fc: weight/input feature mismatch");
  expect_shape(grad_out, Shape{n, cout}, "fc grad_out");
  FcGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()),
               BasicTensor<T>(Shape{cout})};
  ConstMatMap<T> x(input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cin));
  ConstMatMap<T> wm(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin));
  ConstMatMap<T> go(grad_out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
  MatMap<T> gx(g.input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cin));
  MatMap<T> gw(g.weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin));
  gx.noalias() = go * wm;
  gw.noalias() = go.transpose() * x;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < cout; ++c) g.bias[c] += grad_out[r * cout + c];
  return g;
}

template <typename T>
double mse_value(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

template <typename T>
LossResult<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  LossResult<T> r{mse_value(pred, target), BasicTensor<T>(pred.shape())};
  const T scale = T(2) / static_cast<T>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) r.grad[i] = scale * (pred[i] - target[i]);
  return r;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
  expect_rank(logits, 2, "softmax logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j)
      p[r * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
  }
  return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  expect_rank(logits, 2, "cross-entropy logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw std::out_of_range("cross-entropy label " + std::to_string(l) + " outside [0," +
                              std::to_string(k) + ")");
  LossResult<T> r{0.0, BasicTensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t row = 0; row < n; ++row) {
    const T* x = logits.data() + row * k;
    const double mx = static_cast<double>(*std::max_element(x, x + k));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(x[j]) - mx);
    const double log_z = std::log(z) + mx;
    const auto label = static_cast<std::size_t>(labels[row]);
    total += log_z - static_cast<double>(x[label]);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(x[j]) - log_z);
      r.grad[row * k + j] = static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

#define COE_INSTANTIATE_LAYERS(T)                                                                  \
  template BasicTensor<T> conv3x3_forward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                          const BasicTensor<T>&);                                  \
  template ConvGrads<T> conv3x3_backward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                         const BasicTensor<T>&);                                   \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                     \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> prelu_forward(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template PReluGrads<T> prelu_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                        const BasicTensor<T>&);                                    \
  template BasicTensor<T> gap_forward(const BasicTensor<T>&);                                      \
  template BasicTensor<T> gap_backward(const BasicTensor<T>&, const Shape&);                       \
  template BasicTensor<T> fc_forward(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                     const BasicTensor<T>&);                                       \
  template FcGrads<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                  const BasicTensor<T>&);                                          \
  template double mse_value(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template LossResult<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                     \
  template LossResult<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);

COE_INSTANTIATE_LAYERS(float)
COE_INSTANTIATE_LAYERS(double)

#undef COE_INSTANTIATE_LAYERS

}  // namespace coe
