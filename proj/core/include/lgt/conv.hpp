#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include "lgt/tensor.hpp"

namespace lgt {

// 2-D convolution plumbing shared by the autodiff ops: an index map from
// column-matrix entries back into the (virtually padded) input, plus GEMM
// bridges through Eigen. Transposed convolution reuses the same kernels with
// the data/weight roles swapped, so only one gather/scatter pair exists.

enum class PadMode { kZero, kReflect };

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int pad_t = 0, pad_l = 0, pad_b = 0, pad_r = 0;
  int groups = 1;
  PadMode pad_mode = PadMode::kZero;

  static ConvSpec same(int kernel, int stride, int pad, PadMode mode = PadMode::kZero,
                       int groups = 1) {
    ConvSpec s;
    s.kernel = kernel;
    s.stride = stride;
    s.pad_t = s.pad_l = s.pad_b = s.pad_r = pad;
    s.groups = groups;
    s.pad_mode = mode;
    return s;
  }
};

inline int conv_out_size(int in, int kernel, int stride, int pad_lo, int pad_hi) {
  return (in + pad_lo + pad_hi - kernel) / stride + 1;
}

// Entry < 0 means "reads zero padding".
struct ColIndexMap {
  int cin = 0, h = 0, w = 0;
  int oh = 0, ow = 0, kernel = 0;
  std::vector<int32_t> idx;  // (cin*k*k) x (oh*ow)
};

namespace detail {

inline int reflect_index(int t, int n) {
  // 101-style reflection (edge not repeated); requires pad < n.
  while (t < 0 || t >= n) {
    if (t < 0) t = -t;
    if (t >= n) t = 2 * n - 2 - t;
  }
  return t;
}

using ColMapKey = std::tuple<int, int, int, int, int, int, int, int, int, int>;

inline std::shared_ptr<const ColIndexMap> col_index_map(int cin, int h, int w,
                                                        const ConvSpec& s) {
  static std::mutex mu;
  static std::map<ColMapKey, std::shared_ptr<const ColIndexMap>> cache;
  static size_t cache_bytes = 0;

  ColMapKey key{cin, h, w, s.kernel, s.stride, s.pad_t, s.pad_l, s.pad_b, s.pad_r,
                static_cast<int>(s.pad_mode)};
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }

  auto m = std::make_shared<ColIndexMap>();
  m->cin = cin;
  m->h = h;
  m->w = w;
  m->kernel = s.kernel;
  m->oh = conv_out_size(h, s.kernel, s.stride, s.pad_t, s.pad_b);
  m->ow = conv_out_size(w, s.kernel, s.stride, s.pad_l, s.pad_r);
  check_shape(m->oh > 0 && m->ow > 0, "convolution output would be empty");
  const int k = s.kernel;
  const int64_t cols = static_cast<int64_t>(m->oh) * m->ow;
  m->idx.resize(static_cast<size_t>(cin) * k * k * cols);

  for (int c = 0; c < cin; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        int32_t* row = m->idx.data() + ((static_cast<int64_t>(c) * k + kh) * k + kw) * cols;
        for (int oy = 0; oy < m->oh; ++oy) {
          int iy = oy * s.stride - s.pad_t + kh;
          for (int ox = 0; ox < m->ow; ++ox) {
            int ix = ox * s.stride - s.pad_l + kw;
            int32_t v;
            if (s.pad_mode == PadMode::kReflect) {
              int ry = reflect_index(iy, h);
              int rx = reflect_index(ix, w);
              v = static_cast<int32_t>((static_cast<int64_t>(c) * h + ry) * w + rx);
            } else if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
              v = -1;
            } else {
              v = static_cast<int32_t>((static_cast<int64_t>(c) * h + iy) * w + ix);
            }
            row[static_cast<int64_t>(oy) * m->ow + ox] = v;
          }
        }
      }
    }
  }

  std::lock_guard<std::mutex> lock(mu);
  cache_bytes += m->idx.size() * sizeof(int32_t);
  if (cache_bytes > (size_t(512) << 20)) {  // shed everything if the cache balloons
    cache.clear();
    cache_bytes = m->idx.size() * sizeof(int32_t);
  }
  cache[key] = m;
  return m;
}

template <typename T>
std::vector<T>& col_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>>;

template <typename T>
void im2col(const T* x, const ColIndexMap& m, T* col) {
  const int64_t rows = static_cast<int64_t>(m.cin) * m.kernel * m.kernel;
  const int64_t cols = static_cast<int64_t>(m.oh) * m.ow;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const int32_t* src = m.idx.data() + r * cols;
    T* dst = col + r * cols;
    for (int64_t c = 0; c < cols; ++c) {
      int32_t i = src[c];
      dst[c] = i < 0 ? T(0) : x[i];
    }
  }
}

// Scatter-add of a column matrix back into input layout. Serial: reflect
// padding and stride overlaps make destinations collide across rows.
template <typename T>
void col2im_add(const T* col, const ColIndexMap& m, T* x) {
  const int64_t rows = static_cast<int64_t>(m.cin) * m.kernel * m.kernel;
  const int64_t cols = static_cast<int64_t>(m.oh) * m.ow;
  for (int64_t r = 0; r < rows; ++r) {
    const int32_t* src = m.idx.data() + r * cols;
    const T* v = col + r * cols;
    for (int64_t c = 0; c < cols; ++c) {
      int32_t i = src[c];
      if (i >= 0) x[i] += v[c];
    }
  }
}

}  // namespace detail

// x: [Cin,H,W], w: [Cout, Cin/groups, k, k], b: [Cout] or empty -> [Cout,OH,OW]
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& s) {
  check_shape(x.rank() == 3, "conv2d input must be [C,H,W], got " + x.shape_str());
  check_shape(w.rank() == 4, "conv2d weight must be [Cout,Cin/g,k,k]");
  const int cin = static_cast<int>(x.dim(0));
  const int cout = static_cast<int>(w.dim(0));
  check_shape(w.dim(1) * s.groups == cin,
              "conv2d weight shape " + w.shape_str() + " does not match input channels");
  check_shape(cout % s.groups == 0 && cin % s.groups == 0, "channels not divisible by groups");
  auto m = detail::col_index_map(cin, static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), s);
  const int64_t cols = static_cast<int64_t>(m->oh) * m->ow;
  const int64_t krows = static_cast<int64_t>(cin) * s.kernel * s.kernel;

  auto& col = detail::col_scratch<T>();
  col.resize(static_cast<size_t>(krows * cols));
  detail::im2col(x.data(), *m, col.data());

  Tensor<T> y({cout, m->oh, m->ow});
  const int cog = cout / s.groups;
  const int64_t wg = static_cast<int64_t>(w.dim(1)) * s.kernel * s.kernel;
  for (int g = 0; g < s.groups; ++g) {
    detail::CMapRM<T> W(w.data() + static_cast<int64_t>(g) * cog * wg, cog, wg);
    detail::CMapRM<T> C(col.data() + static_cast<int64_t>(g) * wg * cols, wg, cols);
    detail::MapRM<T> Y(y.data() + static_cast<int64_t>(g) * cog * cols, cog, cols);
    Y.noalias() = W * C;
  }
  if (!b.empty()) {
    check_shape(b.numel() == cout, "conv2d bias size mismatch");
    for (int c = 0; c < cout; ++c) {
      T* row = y.data() + static_cast<int64_t>(c) * cols;
      const T bv = b[c];
      for (int64_t i = 0; i < cols; ++i) row[i] += bv;
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_backward_data(const Tensor<T>& dy, const Tensor<T>& w,
                               const std::vector<int64_t>& in_dims, const ConvSpec& s) {
  const int cin = static_cast<int>(in_dims[0]);
  const int cout = static_cast<int>(w.dim(0));
  auto m = detail::col_index_map(cin, static_cast<int>(in_dims[1]),
                                 static_cast<int>(in_dims[2]), s);
  const int64_t cols = static_cast<int64_t>(m->oh) * m->ow;
  const int64_t krows = static_cast<int64_t>(cin) * s.kernel * s.kernel;
  check_shape(dy.dim(0) == cout && dy.dim(1) == m->oh && dy.dim(2) == m->ow,
              "conv2d_backward_data: dy shape mismatch");

  auto& col = detail::col_scratch<T>();
  col.resize(static_cast<size_t>(krows * cols));
  const int cog = cout / s.groups;
  const int64_t wg = static_cast<int64_t>(w.dim(1)) * s.kernel * s.kernel;
  for (int g = 0; g < s.groups; ++g) {
    detail::CMapRM<T> W(w.data() + static_cast<int64_t>(g) * cog * wg, cog, wg);
    detail::CMapRM<T> DY(dy.data() + static_cast<int64_t>(g) * cog * cols, cog, cols);
    detail::MapRM<T> DC(col.data() + static_cast<int64_t>(g) * wg * cols, wg, cols);
    DC.noalias() = W.transpose() * DY;
  }
  Tensor<T> dx(in_dims);
  detail::col2im_add(col.data(), *m, dx.data());
  return dx;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy,
                                 const std::vector<int64_t>& w_dims, const ConvSpec& s) {
  const int cin = static_cast<int>(x.dim(0));
  const int cout = static_cast<int>(dy.dim(0));
  auto m = detail::col_index_map(cin, static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), s);
  const int64_t cols = static_cast<int64_t>(m->oh) * m->ow;
  const int64_t krows = static_cast<int64_t>(cin) * s.kernel * s.kernel;

  auto& col = detail::col_scratch<T>();
  col.resize(static_cast<size_t>(krows * cols));
  detail::im2col(x.data(), *m, col.data());

  Tensor<T> dw(w_dims);
  const int cog = cout / s.groups;
  const int64_t wg = static_cast<int64_t>(w_dims[1]) * s.kernel * s.kernel;
  for (int g = 0; g < s.groups; ++g) {
    detail::CMapRM<T> DY(dy.data() + static_cast<int64_t>(g) * cog * cols, cog, cols);
    detail::CMapRM<T> C(col.data() + static_cast<int64_t>(g) * wg * cols, wg, cols);
    detail::MapRM<T> DW(dw.data() + static_cast<int64_t>(g) * cog * wg, cog, wg);
    DW.noalias() = DY * C.transpose();
  }
  return dw;
}

template <typename T>
Tensor<T> conv2d_backward_bias(const Tensor<T>& dy) {
  const int cout = static_cast<int>(dy.dim(0));
  const int64_t n = dy.dim(1) * dy.dim(2);
  Tensor<T> db({cout});
  for (int c = 0; c < cout; ++c) {
    T acc(0);
    const T* row = dy.data() + static_cast<int64_t>(c) * n;
    for (int64_t i = 0; i < n; ++i) acc += row[i];
    db[c] = acc;
  }
  return db;
}

// Transposed convolution expressed through its mirror convolution: the conv
// that maps the convT *output* shape back to the convT *input* shape.
// Weight layout: [Cin, Cout/groups, k, k].
struct ConvTransposeSpec {
  int kernel = 3;
  int stride = 2;
  int pad = 1;
  int out_pad = 1;
  int groups = 1;

  ConvSpec mirror() const {
    ConvSpec s;
    s.kernel = kernel;
    s.stride = stride;
    s.pad_t = s.pad_l = pad;
    s.pad_b = s.pad_r = pad - out_pad;
    s.groups = groups;
    s.pad_mode = PadMode::kZero;
    check_config(s.pad_b >= 0, "conv_transpose: out_pad exceeds pad");
    return s;
  }
  int out_size(int in) const { return (in - 1) * stride - 2 * pad + kernel + out_pad; }
};

template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                                   const ConvTransposeSpec& ts) {
  check_shape(x.rank() == 3, "conv_transpose input must be [C,H,W]");
  const int cin = static_cast<int>(x.dim(0));
  check_shape(w.dim(0) == cin, "conv_transpose weight/input channel mismatch");
  const int cout = static_cast<int>(w.dim(1)) * ts.groups;
  const int oh = ts.out_size(static_cast<int>(x.dim(1)));
  const int ow = ts.out_size(static_cast<int>(x.dim(2)));
  Tensor<T> y = conv2d_backward_data<T>(x, w, {cout, oh, ow}, ts.mirror());
  if (!b.empty()) {
    check_shape(b.numel() == cout, "conv_transpose bias size mismatch");
    const int64_t n = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < cout; ++c) {
      T* row = y.data() + static_cast<int64_t>(c) * n;
      for (int64_t i = 0; i < n; ++i) row[i] += b[c];
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv_transpose2d_backward_data(const Tensor<T>& dy, const Tensor<T>& w,
                                         const ConvTransposeSpec& ts) {
  return conv2d_forward<T>(dy, w, Tensor<T>(), ts.mirror());
}

template <typename T>
Tensor<T> conv_transpose2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy,
                                           const std::vector<int64_t>& w_dims,
                                           const ConvTransposeSpec& ts) {
  return conv2d_backward_weight<T>(dy, x, w_dims, ts.mirror());
}

// General matrix product bridge (used by the autodiff matmul/linear ops).
template <typename T>
void gemm(const T* a, int64_t am, int64_t an, bool ta, const T* b, int64_t bm, int64_t bn,
          bool tb, T* out) {
  detail::CMapRM<T> A(a, am, an);
  detail::CMapRM<T> B(b, bm, bn);
  const int64_t m = ta ? an : am;
  const int64_t n = tb ? bm : bn;
  detail::MapRM<T> O(out, m, n);
  if (!ta && !tb)
    O.noalias() = A * B;
  else if (ta && !tb)
    O.noalias() = A.transpose() * B;
  else if (!ta && tb)
    O.noalias() = A * B.transpose();
  else
    O.noalias() = A.transpose() * B.transpose();
}

}  // namespace lgt
