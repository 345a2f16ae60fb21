#include <algorithm>
#include <cmath>

#include "lgt/common.hpp"
#include "lgt/image.hpp"

namespace lgt {

TensorF image_to_tensor(const ImageU8& img) {
  check_config(img.channels == 1 || img.channels == 3, "expected gray or RGB image");
  TensorF t({3, img.height, img.width});
  const int64_t hw = static_cast<int64_t>(img.height) * img.width;
  for (int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) {
      uint8_t v = img.channels == 3 ? img.pixels[i * 3 + c] : img.pixels[i];
      t[c * hw + i] = static_cast<float>(v) / 127.5f - 1.0f;
    }
  }
  return t;
}

ImageU8 tensor_to_image(const TensorF& t) {
  check_shape(t.rank() == 3 && t.dim(0) == 3, "tensor_to_image expects [3,H,W]");
  ImageU8 img;
  img.height = static_cast<int>(t.dim(1));
  img.width = static_cast<int>(t.dim(2));
  img.channels = 3;
  const int64_t hw = static_cast<int64_t>(img.height) * img.width;
  img.pixels.resize(static_cast<size_t>(hw) * 3);
  for (int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) {
      float v = (t[c * hw + i] + 1.0f) * 127.5f;
      img.pixels[i * 3 + c] =
          static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

ImageU8 map_to_image(const TensorF& map) {
  check_shape(map.rank() == 3 && map.dim(0) == 1, "map_to_image expects [1,H,W]");
  ImageU8 img;
  img.height = static_cast<int>(map.dim(1));
  img.width = static_cast<int>(map.dim(2));
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.height) * img.width);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    float v = std::clamp(map[static_cast<int64_t>(i)], 0.0f, 1.0f);
    img.pixels[i] = static_cast<uint8_t>(std::min(255.0f, std::floor(v * 255.0f)));
  }
  return img;
}

namespace {

struct FilterTaps {
  // Per output index: contiguous source range [lo, lo+n) with weights.
  std::vector<int> lo;
  std::vector<int> n;
  std::vector<float> weights;  // packed, max_taps per output
  int max_taps = 0;
};

// Triangle filter, widened by the scale factor when minifying (PIL-style
// antialiasing). Degenerates to an exact identity when in == out.
FilterTaps make_taps(int in, int out) {
  FilterTaps f;
  f.lo.resize(out);
  f.n.resize(out);
  const double scale = static_cast<double>(in) / out;
  const double support = std::max(1.0, scale);
  f.max_taps = static_cast<int>(std::ceil(2 * support)) + 2;
  f.weights.assign(static_cast<size_t>(out) * f.max_taps, 0.0f);
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale - 0.5;
    int lo = static_cast<int>(std::floor(center - support + 0.5));
    int hi = static_cast<int>(std::floor(center + support + 0.5));
    lo = std::max(lo, 0);
    hi = std::min(hi, in - 1);
    double sum = 0.0;
    std::vector<double> w(static_cast<size_t>(hi - lo + 1));
    for (int i = lo; i <= hi; ++i) {
      double d = (i - center) / support;
      double v = std::max(0.0, 1.0 - std::abs(d));
      w[static_cast<size_t>(i - lo)] = v;
      sum += v;
    }
    if (sum <= 0.0) {  // fallback: nearest
      int i = std::clamp(static_cast<int>(std::lround(center)), 0, in - 1);
      lo = i;
      hi = i;
      w.assign(1, 1.0);
      sum = 1.0;
    }
    f.lo[o] = lo;
    f.n[o] = hi - lo + 1;
    for (int i = 0; i < f.n[o]; ++i)
      f.weights[static_cast<size_t>(o) * f.max_taps + i] =
          static_cast<float>(w[static_cast<size_t>(i)] / sum);
  }
  return f;
}

}  // namespace

TensorF resize_bilinear(const TensorF& src, int out_h, int out_w) {
  check_shape(src.rank() == 3, "resize expects [C,H,W]");
  const int c = static_cast<int>(src.dim(0));
  const int h = static_cast<int>(src.dim(1));
  const int w = static_cast<int>(src.dim(2));
  check_config(out_h > 0 && out_w > 0, "resize target must be positive");
  if (out_h == h && out_w == w) return src;

  FilterTaps fx = make_taps(w, out_w);
  FilterTaps fy = make_taps(h, out_h);

  // Horizontal pass then vertical pass.
  TensorF mid({c, h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const float* row = src.data() + (static_cast<int64_t>(ch) * h + y) * w;
      float* orow = mid.data() + (static_cast<int64_t>(ch) * h + y) * out_w;
      for (int o = 0; o < out_w; ++o) {
        const float* wts = &fx.weights[static_cast<size_t>(o) * fx.max_taps];
        float acc = 0.0f;
        for (int i = 0; i < fx.n[o]; ++i) acc += wts[i] * row[fx.lo[o] + i];
        orow[o] = acc;
      }
    }
  }
  TensorF dst({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int o = 0; o < out_h; ++o) {
      const float* wts = &fy.weights[static_cast<size_t>(o) * fy.max_taps];
      float* orow = dst.data() + (static_cast<int64_t>(ch) * out_h + o) * out_w;
      for (int x = 0; x < out_w; ++x) {
        float acc = 0.0f;
        for (int i = 0; i < fy.n[o]; ++i)
          acc += wts[i] * mid[(static_cast<int64_t>(ch) * h + fy.lo[o] + i) * out_w + x];
        orow[x] = acc;
      }
    }
  }
  return dst;
}

TensorF flip_horizontal(const TensorF& src) {
  check_shape(src.rank() == 3, "flip expects [C,H,W]");
  TensorF out(src.dims());
  const int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at3(ch, y, x) = src.at3(ch, y, w - 1 - x);
  return out;
}

TensorF gaussian_blur(const TensorF& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);

  const int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  auto mirror = [](int64_t t, int64_t n) {
    while (t < 0 || t >= n) {
      if (t < 0) t = -t;
      if (t >= n) t = 2 * n - 2 - t;
    }
    return t;
  };
  TensorF mid(src.dims());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * src.at3(ch, y, mirror(x + i, w));
        mid.at3(ch, y, x) = acc;
      }
  TensorF out(src.dims());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<size_t>(i + radius)] * mid.at3(ch, mirror(y + i, h), x);
        out.at3(ch, y, x) = acc;
      }
  return out;
}

namespace {

// All jitter math runs in [0,1] space.
inline float to_unit(float v) { return (v + 1.0f) * 0.5f; }
inline float from_unit(float v) { return v * 2.0f - 1.0f; }

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx <= 0.0f ? 0.0f : d / mx;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g)
    h = (b - r) / d + 2.0f;
  else
    h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  float i = std::floor(h * 6.0f);
  float f = h * 6.0f - i;
  float p = v * (1.0f - s);
  float q = v * (1.0f - f * s);
  float t = v * (1.0f - (1.0f - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

TensorF to_grayscale(const TensorF& src) {
  check_shape(src.rank() == 3 && src.dim(0) == 3, "grayscale expects [3,H,W]");
  TensorF out(src.dims());
  const int64_t hw = src.dim(1) * src.dim(2);
  for (int64_t i = 0; i < hw; ++i) {
    float y = luma(to_unit(src[i]), to_unit(src[hw + i]), to_unit(src[2 * hw + i]));
    float v = from_unit(y);
    out[i] = v;
    out[hw + i] = v;
    out[2 * hw + i] = v;
  }
  return out;
}

TensorF adjust_brightness(const TensorF& src, double factor) {
  TensorF out(src.dims());
  for (int64_t i = 0; i < src.numel(); ++i)
    out[i] = from_unit(static_cast<float>(to_unit(src[i]) * factor));
  return out;
}

TensorF adjust_contrast(const TensorF& src, double factor) {
  const int64_t hw = src.dim(1) * src.dim(2);
  double mean = 0.0;
  for (int64_t i = 0; i < hw; ++i)
    mean += luma(to_unit(src[i]), to_unit(src[hw + i]), to_unit(src[2 * hw + i]));
  mean /= static_cast<double>(hw);
  TensorF out(src.dims());
  for (int64_t i = 0; i < src.numel(); ++i) {
    double u = to_unit(src[i]);
    out[i] = from_unit(static_cast<float>(mean + (u - mean) * factor));
  }
  return out;
}

TensorF adjust_saturation(const TensorF& src, double factor) {
  const int64_t hw = src.dim(1) * src.dim(2);
  TensorF out(src.dims());
  for (int64_t i = 0; i < hw; ++i) {
    float r = to_unit(src[i]), g = to_unit(src[hw + i]), b = to_unit(src[2 * hw + i]);
    float y = luma(r, g, b);
    out[i] = from_unit(static_cast<float>(y + (r - y) * factor));
    out[hw + i] = from_unit(static_cast<float>(y + (g - y) * factor));
    out[2 * hw + i] = from_unit(static_cast<float>(y + (b - y) * factor));
  }
  return out;
}

TensorF adjust_hue(const TensorF& src, double delta_turns) {
  const int64_t hw = src.dim(1) * src.dim(2);
  TensorF out(src.dims());
  for (int64_t i = 0; i < hw; ++i) {
    float r = to_unit(src[i]), g = to_unit(src[hw + i]), b = to_unit(src[2 * hw + i]);
    float h, s, v;
    rgb_to_hsv(std::clamp(r, 0.0f, 1.0f), std::clamp(g, 0.0f, 1.0f), std::clamp(b, 0.0f, 1.0f),
               h, s, v);
    hsv_to_rgb(h + static_cast<float>(delta_turns), s, v, r, g, b);
    out[i] = from_unit(r);
    out[hw + i] = from_unit(g);
    out[2 * hw + i] = from_unit(b);
  }
  return out;
}

TensorF clamp_unit_range(const TensorF& src) {
  TensorF out(src.dims());
  for (int64_t i = 0; i < src.numel(); ++i) out[i] = std::clamp(src[i], -1.0f, 1.0f);
  return out;
}

}  // namespace lgt
