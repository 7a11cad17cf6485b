#include "mmtod/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mmtod {

static size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

void Tensor::zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void Tensor::add_scaled(const Tensor& other, double s) {
  if (!same_shape(other)) throw std::invalid_argument("add_scaled: shape mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

uint64_t Tensor::checksum() const {
  uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(data_.data());
  size_t n = data_.size() * sizeof(double);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mmtod
