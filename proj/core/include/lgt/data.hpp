#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lgt/image.hpp"
#include "lgt/rng.hpp"
#include "lgt/tensor.hpp"

namespace lgt {

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  int class_id = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool degenerate() const { return x_min >= x_max || y_min >= y_max; }

  BoundingBox clipped(double w, double h) const {
    BoundingBox b = *this;
    b.x_min = std::clamp(b.x_min, 0.0, w);
    b.x_max = std::clamp(b.x_max, 0.0, w);
    b.y_min = std::clamp(b.y_min, 0.0, h);
    b.y_max = std::clamp(b.y_max, 0.0, h);
    return b;
  }
  BoundingBox scaled(double sx, double sy) const {
    return {x_min * sx, y_min * sy, x_max * sx, y_max * sy, class_id};
  }
};

double iou(const BoundingBox& a, const BoundingBox& b);

struct DatasetSpec {
  std::string root_path;
  std::string domain_a_dir = "trainA";
  std::string domain_b_dir = "trainB";
  std::optional<std::string> annotations_path;  // annotations for domain A
  int image_size = 64;  // target smallest side
};

struct AugmentationConfig {
  double flip_prob = 0.5;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double blur_prob = 0.5;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_prob = 0.2;
  uint64_t seed = 0;

  void validate() const;
  static AugmentationConfig identity() {
    AugmentationConfig c;
    c.flip_prob = 0;
    c.blur_prob = 0;
    c.blur_sigma_lo = c.blur_sigma_hi = 0;
    c.brightness = c.contrast = c.saturation = c.hue = 0;
    c.grayscale_prob = 0;
    return c;
  }
};

struct PatchGridView {
  BoundingBox crop_box;            // sampled region, in source pixels
  std::vector<TensorF> patches;    // 16 tiles, shuffled order
  std::vector<int> permutation;    // permutation[j] = row-major cell of patches[j]
  int patch_size = 0;
  TensorF augmented_crop;          // the resized+augmented crop the tiles came from
};

// Annotations: image filename -> boxes. One JSON document per split.
using AnnotationMap = std::map<std::string, std::vector<BoundingBox>>;
AnnotationMap load_annotations(const std::string& path);
void save_annotations(const std::string& path, const AnnotationMap& ann);

// --------------------------------------------------------------------------
// Toy benchmark synthesis: domain B = clean scenes of saturated shapes on
// muted textured backgrounds; domain A = the same generative family put
// through a depth-proportional fog (blend toward gray, mild blur, contrast
// compression). Both sides carry box annotations.
// --------------------------------------------------------------------------

struct FogParams {
  double alpha_base = 0.35;
  double alpha_slope = 0.5;   // alpha = base + slope * (y / (H-1))
  double gray = 0.7;          // fog color, [0,1] space
  double blur_sigma = 1.0;
  double contrast = 0.9;
};

struct ToyScene {
  TensorF image;  // clean render, [-1,1]
  std::vector<BoundingBox> boxes;
};

ToyScene render_toy_scene(int image_size, Rand& rng);
TensorF apply_fog(const TensorF& clean, const FogParams& fog);

DatasetSpec synthesize_toy_dataset(int num_images_per_domain, int image_size, uint64_t seed,
                                   const std::string& out_dir);

// --------------------------------------------------------------------------
// Loading and sampling
// --------------------------------------------------------------------------

struct Sample {
  TensorF image_a;
  TensorF image_b;
  std::optional<std::vector<BoundingBox>> boxes_a;
  std::string name_a;
  std::string name_b;
};

// Unpaired two-domain loader. Per epoch the A and B streams are permuted by
// independent seed-derived draws; access is a pure function of
// (epoch, index), which is what checkpoint resume relies on.
class UnpairedLoader {
 public:
  UnpairedLoader(DatasetSpec spec, uint64_t seed);

  int size() const { return static_cast<int>(files_a_.size()); }  // steps per epoch
  int size_b() const { return static_cast<int>(files_b_.size()); }
  Sample get(int epoch, int index) const;
  int skipped() const { return skipped_; }
  const DatasetSpec& spec() const { return spec_; }

  // Deterministic digest over file names and annotation content.
  uint64_t digest() const;

 private:
  TensorF load_resized(const std::string& dir, const std::string& name, double* sx,
                       double* sy) const;

  DatasetSpec spec_;
  uint64_t seed_;
  std::vector<std::string> files_a_;
  std::vector<std::string> files_b_;
  AnnotationMap ann_a_;
  int skipped_ = 0;
};

// --------------------------------------------------------------------------
// Augmentation and local patch views
// --------------------------------------------------------------------------

TensorF augment_image(const TensorF& image, const AugmentationConfig& cfg, Rand& rng);

struct LocalPatchView {
  TensorF global_view;
  PatchGridView grid;
};

// Crop (>= 60% of source area), resize to the source side, augment, tile 4x4,
// shuffle. Patches come out at side/4 so inverse-permuting and re-tiling
// rebuilds the augmented crop exactly.
LocalPatchView make_local_patches(const TensorF& image, const AugmentationConfig& cfg, Rand& rng);

// Binary object mask: 1 where covered by any box. Degenerate boxes ignored
// (counted into *degenerate_warnings when given).
TensorF rasterize_object_mask(const std::vector<BoundingBox>& boxes, int height, int width,
                              int* degenerate_warnings = nullptr);

}  // namespace lgt
