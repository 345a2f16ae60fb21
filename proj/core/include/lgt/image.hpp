#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgt/tensor.hpp"

namespace lgt {

// 8-bit interleaved image (row-major, packed channels).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<uint8_t> pixels;
};

// Minimal PNG I/O. The writer emits stored (uncompressed) deflate blocks so
// output bytes depend only on pixel content, never on a compressor version;
// the reader handles any non-interlaced 8-bit gray/RGB/RGBA stream via zlib.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);
std::vector<uint8_t> encode_png(const ImageU8& img);

// Model-range conversion: 8-bit [0,255] <-> float [-1,1], channels-first.
TensorF image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const TensorF& t);

// Grayscale render of a single-channel map in [0,1]; values floor-scaled.
ImageU8 map_to_image(const TensorF& map);

// Antialiased bilinear (triangle-filter) resampling of a [C,H,W] tensor.
TensorF resize_bilinear(const TensorF& src, int out_h, int out_w);

TensorF flip_horizontal(const TensorF& src);
TensorF gaussian_blur(const TensorF& src, double sigma);

// Color utilities on [-1,1] tensors.
TensorF to_grayscale(const TensorF& src);                      // replicated luma
TensorF adjust_brightness(const TensorF& src, double factor);  // in [0,1] space
TensorF adjust_contrast(const TensorF& src, double factor);
TensorF adjust_saturation(const TensorF& src, double factor);
TensorF adjust_hue(const TensorF& src, double delta_turns);
TensorF clamp_unit_range(const TensorF& src);

}  // namespace lgt
