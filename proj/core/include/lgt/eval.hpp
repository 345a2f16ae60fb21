#pragma once

#include <string>
#include <vector>

#include "lgt/data.hpp"
#include "lgt/models.hpp"
#include "lgt/nn.hpp"

namespace lgt {

// ---------------------------------------------------------------------------
// Feature extraction for distribution metrics
// ---------------------------------------------------------------------------

struct FeatureExtractorSpec {
  enum class Kind { kFixedRandomConv, kExternalFeatures };
  Kind kind = Kind::kFixedRandomConv;
  int feature_dim = 256;
  uint64_t seed = 17;
  std::string external_path;  // CSV of N x D features (kExternalFeatures)
};

// Fixed-seed random convolutional embedder: images resized to 64x64, four
// stride-2 conv+ReLU stages, global average pool. Bit-deterministic.
Tensor<double> extract_features(const std::vector<TensorF>& images,
                                const FeatureExtractorSpec& spec);
Tensor<double> load_features_csv(const std::string& path);
void save_features_csv(const std::string& path, const Tensor<double>& feats);

// ---------------------------------------------------------------------------
// Distribution metrics
// ---------------------------------------------------------------------------

double frechet_distance(const Tensor<double>& features_a, const Tensor<double>& features_b);

struct KidConfig {
  int subset_size = 100;
  int num_subsets = 100;
  uint64_t seed = 99;
};
double kernel_distance(const Tensor<double>& features_a, const Tensor<double>& features_b,
                       const KidConfig& cfg = {});

struct InstanceMetrics {
  double fid_inst = 0;
  double kid_inst = 0;
};
InstanceMetrics instance_region_metrics(const std::vector<TensorF>& images_a,
                                        const std::vector<std::vector<BoundingBox>>& boxes_a,
                                        const std::vector<TensorF>& images_b,
                                        const std::vector<std::vector<BoundingBox>>& boxes_b,
                                        const FeatureExtractorSpec& extractor,
                                        int crop_side = 32, const KidConfig& kid = {});

// ---------------------------------------------------------------------------
// Proxy detector + average precision
// ---------------------------------------------------------------------------

struct DetectionResult {
  std::vector<BoundingBox> boxes;
  std::vector<double> scores;  // sorted descending, aligned with boxes
};

// Deterministic classical detector frozen against the clean toy domain:
// chroma thresholding, connected components, box extraction. All constants
// are compile-time; there is deliberately no tuning entry point.
DetectionResult proxy_detect(const TensorF& image);

double average_precision(const std::vector<DetectionResult>& detections,
                         const std::vector<std::vector<BoundingBox>>& ground_truth,
                         double iou_threshold = 0.5, int* warnings = nullptr);

// ---------------------------------------------------------------------------
// Visual exports
// ---------------------------------------------------------------------------

// Per image: input, the 3 foreground mask channels with the highest mean
// activation, translated output, one combined panel; selection recorded in
// a sidecar JSON.
void export_attention_masks(const ParamStore<float>& params, const GeneratorConfig& cfg,
                            const std::vector<TensorF>& images,
                            const std::vector<std::string>& names, const std::string& out_dir);

// Labeled spatial feature samples from the attention generator (stage 2),
// written as a CSV (label,f0..fD-1) for external projection.
struct RegionFeatureReport {
  int rows_written = 0;
  int available = 0;
};
RegionFeatureReport export_region_features(const ParamStore<float>& params,
                                           const GeneratorConfig& cfg,
                                           const std::vector<TensorF>& images,
                                           const std::vector<std::vector<BoundingBox>>& boxes,
                                           int sample_count, const std::string& out_csv,
                                           uint64_t seed = 5);

}  // namespace lgt
