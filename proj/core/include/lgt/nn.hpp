#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lgt/autograd.hpp"
#include "lgt/rng.hpp"
#include "lgt/tensor.hpp"

namespace lgt {

// A named tree of parameter tensors (a "network state"). Parameters are
// autodiff leaves; insertion order is the canonical order for the optimizer,
// EMA updates and serialization.
template <typename T>
class ParamStore {
 public:
  Var<T>& create(const std::string& path, Tensor<T> init, bool requires_grad = true) {
    check_config(!vars_.count(path), "duplicate parameter path: " + path);
    order_.push_back(path);
    auto [it, ok] = vars_.emplace(path, leaf<T>(std::move(init), requires_grad));
    return it->second;
  }

  const Var<T>& at(const std::string& path) const {
    auto it = vars_.find(path);
    check_config(it != vars_.end(), "unknown parameter path: " + path);
    return it->second;
  }
  Var<T>& at(const std::string& path) {
    auto it = vars_.find(path);
    check_config(it != vars_.end(), "unknown parameter path: " + path);
    return it->second;
  }
  bool has(const std::string& path) const { return vars_.count(path) != 0; }

  const std::vector<std::string>& paths() const { return order_; }
  size_t size() const { return order_.size(); }

  // Paths selected by prefix, in insertion order.
  std::vector<std::string> paths_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& p : order_)
      if (p.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
  }

  void zero_grads() {
    for (const auto& p : order_) vars_[p]->zero_grad();
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& p : order_) n += vars_.at(p)->val.numel();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Var<T>> vars_;
};

// Weight init used throughout: N(0, 0.02) kernels, zero biases.
template <typename T>
void init_conv(ParamStore<T>& ps, const std::string& name, std::vector<int64_t> w_dims,
               int64_t cout, Rand& rng, bool requires_grad = true) {
  ps.create(name + ".w", Tensor<T>::randn(std::move(w_dims), rng, T(0), T(0.02)), requires_grad);
  ps.create(name + ".b", Tensor<T>::zeros({cout}), requires_grad);
}

// Linear layers follow the usual uniform fan-in recipe; the nonzero bias
// keeps projection heads away from the exactly-zero output corner.
template <typename T>
void init_linear(ParamStore<T>& ps, const std::string& name, int64_t out_dim, int64_t in_dim,
                 Rand& rng, bool requires_grad = true) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_dim)));
  ps.create(name + ".w", Tensor<T>::rand_uniform({out_dim, in_dim}, rng, -bound, bound),
            requires_grad);
  ps.create(name + ".b", Tensor<T>::rand_uniform({out_dim}, rng, -bound, bound), requires_grad);
}

// conv -> InstanceNorm -> ReLU block (the default layer recipe).
template <typename T>
Var<T> conv_in_relu(const Var<T>& x, const ParamStore<T>& ps, const std::string& name,
                    const ConvSpec& spec, T eps = T(1e-5)) {
  auto y = conv2d<T>(x, ps.at(name + ".w"), ps.at(name + ".b"), spec);
  return relu<T>(instance_norm<T>(y, eps));
}

template <typename T>
Var<T> convt_in_relu(const Var<T>& x, const ParamStore<T>& ps, const std::string& name,
                     const ConvTransposeSpec& spec, T eps = T(1e-5)) {
  auto y = conv_transpose2d<T>(x, ps.at(name + ".w"), ps.at(name + ".b"), spec);
  return relu<T>(instance_norm<T>(y, eps));
}

// Two-layer perceptron head: Linear -> ReLU -> Linear.
template <typename T>
Var<T> mlp_head(const Var<T>& x, const ParamStore<T>& ps, const std::string& name) {
  auto h = relu<T>(linear<T>(x, ps.at(name + ".fc1.w"), ps.at(name + ".fc1.b")));
  return linear<T>(h, ps.at(name + ".fc2.w"), ps.at(name + ".fc2.b"));
}

template <typename T>
void init_mlp_head(ParamStore<T>& ps, const std::string& name, int64_t in_dim, int64_t hidden,
                   int64_t out_dim, Rand& rng, bool requires_grad = true) {
  init_linear(ps, name + ".fc1", hidden, in_dim, rng, requires_grad);
  init_linear(ps, name + ".fc2", out_dim, hidden, rng, requires_grad);
}

}  // namespace lgt
