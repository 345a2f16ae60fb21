#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "lgt/common.hpp"
#include "lgt/rng.hpp"

namespace lgt {

// Dense contiguous row-major tensor. Rank is dynamic but in practice
// everything here is rank 1..4 ([C,H,W] feature maps, [N,D] matrices).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> dims) : dims_(std::move(dims)) {
    data_.assign(static_cast<size_t>(numel_of(dims_)), T(0));
  }
  Tensor(std::vector<int64_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_shape(static_cast<int64_t>(data_.size()) == numel_of(dims_),
                "tensor data size does not match dims");
  }

  static Tensor zeros(std::vector<int64_t> dims) { return Tensor(std::move(dims)); }
  static Tensor full(std::vector<int64_t> dims, T value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor randn(std::vector<int64_t> dims, Rand& rng, T mean = T(0), T stddev = T(1)) {
    Tensor t(std::move(dims));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }
  static Tensor rand_uniform(std::vector<int64_t> dims, Rand& rng, T lo, T hi) {
    Tensor t(std::move(dims));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const std::vector<int64_t>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // [C,H,W] accessor.
  T& at3(int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>((c * dims_[1] + y) * dims_[2] + x)];
  }
  const T& at3(int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>((c * dims_[1] + y) * dims_[2] + x)];
  }
  // [N,D] accessor.
  T& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dims_[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * dims_[1] + j)];
  }

  Tensor reshaped(std::vector<int64_t> dims) const {
    check_shape(numel_of(dims) == numel(), "reshape changes element count");
    Tensor t = *this;
    t.dims_ = std::move(dims);
    return t;
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(dims_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << "]";
    return os.str();
  }

  static int64_t numel_of(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

 private:
  std::vector<int64_t> dims_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace lgt
