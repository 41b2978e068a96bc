#include "coe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace coe {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

namespace {
std::uint64_t fnv_bytes(std::uint64_t h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}
}  // namespace

template <typename T>
std::uint64_t tensor_hash(const BasicTensor<T>& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto d : t.shape()) {
    const std::uint64_t d64 = d;
    h = fnv_bytes(h, &d64, sizeof d64);
  }
  return fnv_bytes(h, t.data(), t.size() * sizeof(T));
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template std::uint64_t tensor_hash(const BasicTensor<float>&, std::uint64_t);
template std::uint64_t tensor_hash(const BasicTensor<double>&, std::uint64_t);

}  // namespace coe
