#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "lgt/conv.hpp"
#include "lgt/tensor.hpp"

namespace lgt {

// Tape-style reverse-mode autodiff. Ops build shared Node graphs; backward()
// walks the tape in reverse topological order. Nodes whose inputs all have
// requires_grad == false skip closure construction entirely, which is how the
// momentum/no-grad paths stay cheap and provably gradient-free.

template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (grad.numel() != val.numel()) grad = Tensor<T>::zeros(val.dims());
  }
  void zero_grad() {
    if (grad.numel()) grad.fill(T(0));
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(value);
  n->requires_grad = false;
  return n;
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return n;
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant<T>(x->val);
}

namespace ag {

template <typename T>
bool any_grad(std::initializer_list<const Var<T>*> vars) {
  for (auto* v : vars)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(value);
  for (auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

template <typename T>
void accum(const Var<T>& p, const Tensor<T>& delta) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  T* g = p->grad.data();
  const T* d = delta.data();
  for (int64_t i = 0; i < delta.numel(); ++i) g[i] += d[i];
}

}  // namespace ag

// Runs reverse-mode accumulation from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
  check_shape(root->val.numel() == 1, "backward() root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next].get();
      ++next;
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) n->ensure_grad();
  root->grad.fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and affine ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_shape(a->val.same_shape(b->val), "add: shape mismatch " + a->val.shape_str() + " vs " +
                                             b->val.shape_str());
  Tensor<T> out(a->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] + b->val[i];
  return ag::make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    ag::accum(a, n.grad);
    ag::accum(b, n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_shape(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor<T> out(a->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] - b->val[i];
  return ag::make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    ag::accum(a, n.grad);
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_shape(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor<T> out(a->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * b->val[i];
  return ag::make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * b->val[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] += n.grad[i] * a->val[i];
    }
  });
}

// y = scale * x + shift
template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = scale * x->val[i] + shift;
  return ag::make_node<T>(std::move(out), {x}, [x, scale](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += scale * n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->val[i] > T(0) ? x->val[i] : T(0);
  return ag::make_node<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (x->val[i] > T(0)) x->grad[i] += n.grad[i];
  });
}

template <typename T>
Var<T> tanh_act(const Var<T>& x) {
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x->val[i]);
  return ag::make_node<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      x->grad[i] += n.grad[i] * (T(1) - n.val[i] * n.val[i]);
  });
}

template <typename T>
Var<T> sigmoid_act(const Var<T>& x) {
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) {
    T v = x->val[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                       : std::exp(v) / (T(1) + std::exp(v));
  }
  return ag::make_node<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      x->grad[i] += n.grad[i] * n.val[i] * (T(1) - n.val[i]);
  });
}

template <typename T>
Var<T> log_op(const Var<T>& x) {
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(x->val[i]);
  return ag::make_node<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] / x->val[i];
  });
}

// Clamp with zero gradient outside the active range.
template <typename T>
Var<T> clamp_op(const Var<T>& x, T lo, T hi) {
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, x->val[i]));
  return ag::make_node<T>(std::move(out), {x}, [x, lo, hi](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (x->val[i] > lo && x->val[i] < hi) x->grad[i] += n.grad[i];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const T inv = T(1) / static_cast<T>(x->val.numel());
  T acc(0);
  for (int64_t i = 0; i < x->val.numel(); ++i) acc += x->val[i];
  return ag::make_node<T>(Tensor<T>::scalar(acc * inv), {x}, [x, inv](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const T g = n.grad[0] * inv;
    for (int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += g;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T acc(0);
  for (int64_t i = 0; i < x->val.numel(); ++i) acc += x->val[i];
  return ag::make_node<T>(Tensor<T>::scalar(acc), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += n.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> dims) {
  Tensor<T> out = x->val.reshaped(std::move(dims));
  return ag::make_node<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i];
  });
}

// Channel slice of a [C,H,W] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t c0, int64_t count) {
  check_shape(x->val.rank() == 3, "slice_channels expects [C,H,W]");
  check_shape(c0 >= 0 && c0 + count <= x->val.dim(0), "slice_channels out of range");
  const int64_t hw = x->val.dim(1) * x->val.dim(2);
  Tensor<T> out({count, x->val.dim(1), x->val.dim(2)});
  std::copy_n(x->val.data() + c0 * hw, count * hw, out.data());
  return ag::make_node<T>(std::move(out), {x}, [x, c0, hw](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    T* g = x->grad.data() + c0 * hw;
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
  });
}

// Stack rank-1 vectors into a [R,D] matrix.
template <typename T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
  check_shape(!rows.empty(), "stack_rows: empty input");
  const int64_t d = rows[0]->val.numel();
  Tensor<T> out({static_cast<int64_t>(rows.size()), d});
  for (size_t r = 0; r < rows.size(); ++r) {
    check_shape(rows[r]->val.numel() == d, "stack_rows: ragged rows");
    std::copy_n(rows[r]->val.data(), d, out.data() + static_cast<int64_t>(r) * d);
  }
  std::vector<Var<T>> parents(rows.begin(), rows.end());
  return ag::make_node<T>(std::move(out), parents, [rows, d](Node<T>& n) {
    for (size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r]->requires_grad) continue;
      rows[r]->ensure_grad();
      const T* g = n.grad.data() + static_cast<int64_t>(r) * d;
      for (int64_t i = 0; i < d; ++i) rows[r]->grad[i] += g[i];
    }
  });
}

// Mean over rows of [R,D] -> [D].
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  check_shape(x->val.rank() == 2, "mean_rows expects [R,D]");
  const int64_t r = x->val.dim(0), d = x->val.dim(1);
  Tensor<T> out({d});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < d; ++j) out[j] += x->val.at2(i, j);
  const T inv = T(1) / static_cast<T>(r);
  for (int64_t j = 0; j < d; ++j) out[j] *= inv;
  return ag::make_node<T>(std::move(out), {x}, [x, r, d, inv](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < d; ++j) x->grad.at2(i, j) += n.grad[j] * inv;
  });
}

// Extract one row of [R,D] as a rank-1 vector.
template <typename T>
Var<T> take_row(const Var<T>& x, int64_t row) {
  check_shape(x->val.rank() == 2, "take_row expects [R,D]");
  const int64_t d = x->val.dim(1);
  Tensor<T> out({d});
  std::copy_n(x->val.data() + row * d, d, out.data());
  return ag::make_node<T>(std::move(out), {x}, [x, row, d](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    T* g = x->grad.data() + row * d;
    for (int64_t i = 0; i < d; ++i) g[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Structured ops
// ---------------------------------------------------------------------------

// Broadcast-multiply a [C,H,W] tensor by a single-channel [1,H,W] mask.
template <typename T>
Var<T> mul_mask(const Var<T>& x, const Var<T>& mask) {
  check_shape(x->val.rank() == 3 && mask->val.rank() == 3 && mask->val.dim(0) == 1,
              "mul_mask expects [C,H,W] and [1,H,W]");
  check_shape(x->val.dim(1) == mask->val.dim(1) && x->val.dim(2) == mask->val.dim(2),
              "mul_mask spatial mismatch");
  const int64_t c = x->val.dim(0), hw = x->val.dim(1) * x->val.dim(2);
  Tensor<T> out(x->val.dims());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < hw; ++i) out[ch * hw + i] = x->val[ch * hw + i] * mask->val[i];
  return ag::make_node<T>(std::move(out), {x, mask}, [x, mask, c, hw](Node<T>& n) {
    if (x->requires_grad) {
      x->ensure_grad();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < hw; ++i) x->grad[ch * hw + i] += n.grad[ch * hw + i] * mask->val[i];
    }
    if (mask->requires_grad) {
      mask->ensure_grad();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < hw; ++i) mask->grad[i] += n.grad[ch * hw + i] * x->val[ch * hw + i];
    }
  });
}

// Instance normalization over spatial dims, per channel, no affine terms.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  check_shape(x->val.rank() == 3, "instance_norm expects [C,H,W]");
  const int64_t c = x->val.dim(0), hw = x->val.dim(1) * x->val.dim(2);
  Tensor<T> out(x->val.dims());
  Tensor<T> inv_std({c});
  for (int64_t ch = 0; ch < c; ++ch) {
    const T* row = x->val.data() + ch * hw;
    T mean(0);
    for (int64_t i = 0; i < hw; ++i) mean += row[i];
    mean /= static_cast<T>(hw);
    T var(0);
    for (int64_t i = 0; i < hw; ++i) {
      T d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(hw);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[ch] = is;
    T* orow = out.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) orow[i] = (row[i] - mean) * is;
  }
  return ag::make_node<T>(std::move(out), {x},
                          [x, c, hw, inv_std = std::move(inv_std)](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xhat = n.val.data() + ch * hw;
      const T* dy = n.grad.data() + ch * hw;
      T* dx = x->grad.data() + ch * hw;
      T mean_dy(0), mean_dyx(0);
      for (int64_t i = 0; i < hw; ++i) {
        mean_dy += dy[i];
        mean_dyx += dy[i] * xhat[i];
      }
      mean_dy /= static_cast<T>(hw);
      mean_dyx /= static_cast<T>(hw);
      const T is = inv_std[ch];
      for (int64_t i = 0; i < hw; ++i)
        dx[i] += is * (dy[i] - mean_dy - xhat[i] * mean_dyx);
    }
  });
}

// Per-pixel softmax across the channel axis of [C,H,W].
template <typename T>
Var<T> softmax_channel(const Var<T>& x) {
  check_shape(x->val.rank() == 3, "softmax_channel expects [C,H,W]");
  const int64_t c = x->val.dim(0), hw = x->val.dim(1) * x->val.dim(2);
  Tensor<T> out(x->val.dims());
  for (int64_t i = 0; i < hw; ++i) {
    T mx = x->val[i];
    for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, x->val[ch * hw + i]);
    T z(0);
    for (int64_t ch = 0; ch < c; ++ch) {
      T e = std::exp(x->val[ch * hw + i] - mx);
      out[ch * hw + i] = e;
      z += e;
    }
    const T iz = T(1) / z;
    for (int64_t ch = 0; ch < c; ++ch) out[ch * hw + i] *= iz;
  }
  return ag::make_node<T>(std::move(out), {x}, [x, c, hw](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < hw; ++i) {
      T dot(0);
      for (int64_t ch = 0; ch < c; ++ch) dot += n.val[ch * hw + i] * n.grad[ch * hw + i];
      for (int64_t ch = 0; ch < c; ++ch)
        x->grad[ch * hw + i] += n.val[ch * hw + i] * (n.grad[ch * hw + i] - dot);
    }
  });
}

// Global average pool [C,H,W] -> [C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  check_shape(x->val.rank() == 3, "global_avg_pool expects [C,H,W]");
  const int64_t c = x->val.dim(0), hw = x->val.dim(1) * x->val.dim(2);
  const T inv = T(1) / static_cast<T>(hw);
  Tensor<T> out({c});
  for (int64_t ch = 0; ch < c; ++ch) {
    T acc(0);
    const T* row = x->val.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) acc += row[i];
    out[ch] = acc * inv;
  }
  return ag::make_node<T>(std::move(out), {x}, [x, c, hw, inv](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      const T g = n.grad[ch] * inv;
      T* row = x->grad.data() + ch * hw;
      for (int64_t i = 0; i < hw; ++i) row[i] += g;
    }
  });
}

// Gather feature vectors at flat spatial positions: [C,H,W] + S positions -> [S,C].
template <typename T>
Var<T> gather_locations(const Var<T>& x, std::vector<int> positions) {
  check_shape(x->val.rank() == 3, "gather_locations expects [C,H,W]");
  const int64_t c = x->val.dim(0), hw = x->val.dim(1) * x->val.dim(2);
  const int64_t s = static_cast<int64_t>(positions.size());
  Tensor<T> out({s, c});
  for (int64_t i = 0; i < s; ++i) {
    check_shape(positions[i] >= 0 && positions[i] < hw, "gather_locations: position out of range");
    for (int64_t ch = 0; ch < c; ++ch) out.at2(i, ch) = x->val[ch * hw + positions[i]];
  }
  return ag::make_node<T>(std::move(out), {x},
                          [x, c, hw, s, positions = std::move(positions)](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < s; ++i)
      for (int64_t ch = 0; ch < c; ++ch) x->grad[ch * hw + positions[i]] += n.grad.at2(i, ch);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

// x [R,in] (or rank-1 [in]) times W^T plus bias: returns [R,out] (or [out]).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const bool vec = x->val.rank() == 1;
  const int64_t rows = vec ? 1 : x->val.dim(0);
  const int64_t in = vec ? x->val.dim(0) : x->val.dim(1);
  check_shape(w->val.rank() == 2 && w->val.dim(1) == in,
              "linear: weight shape mismatch " + w->val.shape_str());
  const int64_t out_dim = w->val.dim(0);
  Tensor<T> out(vec ? std::vector<int64_t>{out_dim} : std::vector<int64_t>{rows, out_dim});
  // out = x * W^T
  gemm<T>(x->val.data(), rows, in, false, w->val.data(), out_dim, in, true, out.data());
  if (b) {
    check_shape(b->val.numel() == out_dim, "linear: bias size mismatch");
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += b->val[j];
  }
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return ag::make_node<T>(std::move(out), parents, [x, w, b, rows, in, out_dim](Node<T>& n) {
    if (x->requires_grad) {
      x->ensure_grad();
      Tensor<T> dx({rows, in});
      gemm<T>(n.grad.data(), rows, out_dim, false, w->val.data(), out_dim, in, false, dx.data());
      for (int64_t i = 0; i < dx.numel(); ++i) x->grad[i] += dx[i];
    }
    if (w->requires_grad) {
      w->ensure_grad();
      Tensor<T> dw({out_dim, in});
      gemm<T>(n.grad.data(), rows, out_dim, true, x->val.data(), rows, in, false, dw.data());
      for (int64_t i = 0; i < dw.numel(); ++i) w->grad[i] += dw[i];
    }
    if (b && b->requires_grad) {
      b->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < out_dim; ++j) b->grad[j] += n.grad[r * out_dim + j];
    }
  });
}

// A [m,k] x B [k,n] -> [m,n], optional transposes on the stored operands.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  check_shape(a->val.rank() == 2 && b->val.rank() == 2, "matmul expects matrices");
  const int64_t am = a->val.dim(0), an = a->val.dim(1);
  const int64_t bm = b->val.dim(0), bn = b->val.dim(1);
  const int64_t m = ta ? an : am, k = ta ? am : an;
  const int64_t k2 = tb ? bn : bm, n2 = tb ? bm : bn;
  check_shape(k == k2, "matmul inner dim mismatch");
  Tensor<T> out({m, n2});
  gemm<T>(a->val.data(), am, an, ta, b->val.data(), bm, bn, tb, out.data());
  return ag::make_node<T>(std::move(out), {a, b}, [a, b, ta, tb, am, an, bm, bn](Node<T>& n) {
    const int64_t m = ta ? an : am, n2 = tb ? bm : bn;
    if (a->requires_grad) {
      a->ensure_grad();
      Tensor<T> da({am, an});
      if (!ta) {
        // dA = dY * B^T (or dY * B when B is used transposed)
        gemm<T>(n.grad.data(), m, n2, false, b->val.data(), bm, bn, !tb, da.data());
      } else {
        // A used transposed: dA = B * dY^T (resp. B^T * dY^T)
        gemm<T>(b->val.data(), bm, bn, tb, n.grad.data(), m, n2, true, da.data());
      }
      for (int64_t i = 0; i < da.numel(); ++i) a->grad[i] += da[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      Tensor<T> db({bm, bn});
      if (!tb) {
        gemm<T>(a->val.data(), am, an, !ta, n.grad.data(), m, n2, false, db.data());
      } else {
        gemm<T>(n.grad.data(), m, n2, true, a->val.data(), am, an, ta, db.data());
      }
      for (int64_t i = 0; i < db.numel(); ++i) b->grad[i] += db[i];
    }
  });
}

// Row-wise dot products of two [R,D] matrices -> [R].
template <typename T>
Var<T> rowwise_dot(const Var<T>& a, const Var<T>& b) {
  check_shape(a->val.same_shape(b->val) && a->val.rank() == 2, "rowwise_dot: [R,D] pair expected");
  const int64_t r = a->val.dim(0), d = a->val.dim(1);
  Tensor<T> out({r});
  for (int64_t i = 0; i < r; ++i) {
    T acc(0);
    for (int64_t j = 0; j < d; ++j) acc += a->val.at2(i, j) * b->val.at2(i, j);
    out[i] = acc;
  }
  return ag::make_node<T>(std::move(out), {a, b}, [a, b, r, d](Node<T>& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < d; ++j) a->grad.at2(i, j) += n.grad[i] * b->val.at2(i, j);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < d; ++j) b->grad.at2(i, j) += n.grad[i] * a->val.at2(i, j);
    }
  });
}

// L2-normalize rows of [R,D] (or a rank-1 vector).
template <typename T>
Var<T> l2_normalize(const Var<T>& x, T eps = T(1e-12)) {
  const bool vec = x->val.rank() == 1;
  const int64_t r = vec ? 1 : x->val.dim(0);
  const int64_t d = vec ? x->val.dim(0) : x->val.dim(1);
  Tensor<T> out(x->val.dims());
  Tensor<T> inv_norm({r});
  for (int64_t i = 0; i < r; ++i) {
    const T* row = x->val.data() + i * d;
    T s(0);
    for (int64_t j = 0; j < d; ++j) s += row[j] * row[j];
    const T nrm = std::max(std::sqrt(s), eps);
    inv_norm[i] = T(1) / nrm;
    T* orow = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = row[j] * inv_norm[i];
  }
  return ag::make_node<T>(std::move(out), {x},
                          [x, r, d, inv_norm = std::move(inv_norm)](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t i = 0; i < r; ++i) {
      const T* y = n.val.data() + i * d;
      const T* dy = n.grad.data() + i * d;
      T* dx = x->grad.data() + i * d;
      T dot(0);
      for (int64_t j = 0; j < d; ++j) dot += y[j] * dy[j];
      for (int64_t j = 0; j < d; ++j) dx[j] += inv_norm[i] * (dy[j] - y[j] * dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvSpec& s) {
  Tensor<T> y = conv2d_forward<T>(x->val, w->val, b ? b->val : Tensor<T>(), s);
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return ag::make_node<T>(std::move(y), parents, [x, w, b, s](Node<T>& n) {
    if (x->requires_grad) {
      Tensor<T> dx = conv2d_backward_data<T>(n.grad, w->val, x->val.dims(), s);
      ag::accum(x, dx);
    }
    if (w->requires_grad) {
      Tensor<T> dw = conv2d_backward_weight<T>(x->val, n.grad, w->val.dims(), s);
      ag::accum(w, dw);
    }
    if (b && b->requires_grad) {
      Tensor<T> db = conv2d_backward_bias<T>(n.grad);
      ag::accum(b, db);
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
                        const ConvTransposeSpec& ts) {
  Tensor<T> y = conv_transpose2d_forward<T>(x->val, w->val, b ? b->val : Tensor<T>(), ts);
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return ag::make_node<T>(std::move(y), parents, [x, w, b, ts](Node<T>& n) {
    if (x->requires_grad) {
      Tensor<T> dx = conv_transpose2d_backward_data<T>(n.grad, w->val, ts);
      ag::accum(x, dx);
    }
    if (w->requires_grad) {
      Tensor<T> dw = conv_transpose2d_backward_weight<T>(x->val, n.grad, w->val.dims(), ts);
      ag::accum(w, dw);
    }
    if (b && b->requires_grad) {
      Tensor<T> db = conv2d_backward_bias<T>(n.grad);
      ag::accum(b, db);
    }
  });
}

// ---------------------------------------------------------------------------
// Contrastive scoring op
// ---------------------------------------------------------------------------

// Mean InfoNCE over R queries given positive logits [R] and negative logits
// [R,N] (N may be 0): mean_i( logsumexp([pos_i, negs_i]/tau) - pos_i/tau ).
// Computed with max subtraction; backward is softmax-minus-indicator.
template <typename T>
Var<T> nce_from_logits(const Var<T>& pos, const Var<T>& negs, T tau) {
  check_config(tau > T(0) && std::isfinite(static_cast<double>(tau)),
               "InfoNCE temperature must be positive and finite");
  check_shape(pos->val.rank() == 1, "nce_from_logits: pos must be [R]");
  const int64_t r = pos->val.dim(0);
  const int64_t nneg = negs ? negs->val.dim(1) : 0;
  if (negs) {
    check_shape(negs->val.rank() == 2 && negs->val.dim(0) == r,
                "nce_from_logits: negs must be [R,N]");
  }
  // Softmax over each row of [pos_i, negs_i]/tau; probs kept for backward.
  Tensor<T> probs({r, nneg + 1});
  T total(0);
  for (int64_t i = 0; i < r; ++i) {
    T mx = pos->val[i];
    for (int64_t j = 0; j < nneg; ++j) mx = std::max(mx, negs->val.at2(i, j));
    T z = std::exp((pos->val[i] - mx) / tau);
    probs.at2(i, 0) = z;
    for (int64_t j = 0; j < nneg; ++j) {
      T e = std::exp((negs->val.at2(i, j) - mx) / tau);
      probs.at2(i, j + 1) = e;
      z += e;
    }
    const T iz = T(1) / z;
    for (int64_t j = 0; j <= nneg; ++j) probs.at2(i, j) *= iz;
    total += std::log(z) + (mx - pos->val[i]) / tau;
  }
  total /= static_cast<T>(r);
  std::vector<Var<T>> parents = negs ? std::vector<Var<T>>{pos, negs} : std::vector<Var<T>>{pos};
  return ag::make_node<T>(Tensor<T>::scalar(total), parents,
                          [pos, negs, tau, r, nneg, probs = std::move(probs)](Node<T>& n) {
    const T scale = n.grad[0] / (static_cast<T>(r) * tau);
    if (pos->requires_grad) {
      pos->ensure_grad();
      for (int64_t i = 0; i < r; ++i) pos->grad[i] += scale * (probs.at2(i, 0) - T(1));
    }
    if (negs && negs->requires_grad) {
      negs->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < nneg; ++j) negs->grad.at2(i, j) += scale * probs.at2(i, j + 1);
    }
  });
}

// InfoNCE where positives sit on the diagonal of a square logit matrix
// [S,S]; off-diagonal entries of each row are that query's negatives.
template <typename T>
Var<T> nce_from_square_logits(const Var<T>& logits, T tau) {
  check_config(tau > T(0), "InfoNCE temperature must be positive");
  check_shape(logits->val.rank() == 2 && logits->val.dim(0) == logits->val.dim(1),
              "nce_from_square_logits expects [S,S]");
  const int64_t s = logits->val.dim(0);
  Tensor<T> probs({s, s});
  T total(0);
  for (int64_t i = 0; i < s; ++i) {
    T mx = logits->val.at2(i, 0);
    for (int64_t j = 1; j < s; ++j) mx = std::max(mx, logits->val.at2(i, j));
    T z(0);
    for (int64_t j = 0; j < s; ++j) {
      T e = std::exp((logits->val.at2(i, j) - mx) / tau);
      probs.at2(i, j) = e;
      z += e;
    }
    const T iz = T(1) / z;
    for (int64_t j = 0; j < s; ++j) probs.at2(i, j) *= iz;
    total += std::log(z) + (mx - logits->val.at2(i, i)) / tau;
  }
  total /= static_cast<T>(s);
  return ag::make_node<T>(Tensor<T>::scalar(total), {logits},
                          [logits, tau, s, probs = std::move(probs)](Node<T>& n) {
    if (!logits->requires_grad) return;
    logits->ensure_grad();
    const T scale = n.grad[0] / (static_cast<T>(s) * tau);
    for (int64_t i = 0; i < s; ++i)
      for (int64_t j = 0; j < s; ++j)
        logits->grad.at2(i, j) += scale * (probs.at2(i, j) - (i == j ? T(1) : T(0)));
  });
}

}  // namespace lgt
