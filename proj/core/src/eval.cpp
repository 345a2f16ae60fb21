#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lgt/conv.hpp"
#include "lgt/eval.hpp"

namespace lgt {

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

namespace {

struct RandomConvNet {
  std::vector<Tensor<float>> weights;  // 4 conv stages
  std::vector<int> widths;
};

RandomConvNet build_extractor(const FeatureExtractorSpec& spec) {
  check_config(spec.feature_dim >= 8 && spec.feature_dim % 8 == 0,
               "feature_dim must be a multiple of 8");
  RandomConvNet net;
  int d = spec.feature_dim;
  net.widths = {d / 8, d / 4, d / 2, d};
  int cin = 3;
  for (size_t l = 0; l < net.widths.size(); ++l) {
    Rand rng(derive_seed(spec.seed, "feat_ext", static_cast<uint64_t>(l)));
    const int cout = net.widths[l];
    const double scale = std::sqrt(2.0 / (9.0 * cin));
    net.weights.push_back(
        Tensor<float>::randn({cout, cin, 3, 3}, rng, 0.0f, static_cast<float>(scale)));
    cin = cout;
  }
  return net;
}

}  // namespace

Tensor<double> extract_features(const std::vector<TensorF>& images,
                                const FeatureExtractorSpec& spec) {
  if (spec.kind == FeatureExtractorSpec::Kind::kExternalFeatures)
    return load_features_csv(spec.external_path);
  check_config(!images.empty(), "extract_features: empty image set");
  RandomConvNet net = build_extractor(spec);
  Tensor<double> out({static_cast<int64_t>(images.size()), spec.feature_dim});
  const ConvSpec s = ConvSpec::same(3, 2, 1);
  for (size_t i = 0; i < images.size(); ++i) {
    TensorF h = resize_bilinear(images[i], 64, 64);
    for (const auto& w : net.weights) {
      h = conv2d_forward<float>(h, w, Tensor<float>(), s);
      for (int64_t j = 0; j < h.numel(); ++j) h[j] = std::max(0.0f, h[j]);
    }
    const int64_t hw = h.dim(1) * h.dim(2);
    for (int64_t c = 0; c < h.dim(0); ++c) {
      double acc = 0;
      for (int64_t j = 0; j < hw; ++j) acc += h[c * hw + j];
      out.at2(static_cast<int64_t>(i), c) = acc / static_cast<double>(hw);
    }
  }
  return out;
}

Tensor<double> load_features_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open features file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && rows.front().size() != row.size())
      throw IoError("ragged feature CSV: " + path);
    rows.push_back(std::move(row));
  }
  check_config(!rows.empty(), "empty features file: " + path);
  Tensor<double> out({static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), out.data() + static_cast<int64_t>(i) * out.dim(1));
  return out;
}

void save_features_csv(const std::string& path, const Tensor<double>& feats) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write features file: " + path);
  f.precision(17);  // lossless double round trip
  for (int64_t i = 0; i < feats.dim(0); ++i) {
    for (int64_t j = 0; j < feats.dim(1); ++j) f << (j ? "," : "") << feats.at2(i, j);
    f << "\n";
  }
}

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

double frechet_distance(const Tensor<double>& fa, const Tensor<double>& fb) {
  check_shape(fa.rank() == 2 && fb.rank() == 2, "features must be [N,D]");
  check_shape(fa.dim(1) == fb.dim(1), "feature dimension mismatch");
  check_config(fa.dim(0) >= 2 && fb.dim(0) >= 2, "need at least 2 samples per population");
  const int64_t d = fa.dim(1);

  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  auto stats = [d](const Tensor<double>& f) {
    const int64_t n = f.dim(0);
    Eigen::Map<const Mat> x(f.data(), d, n);  // column-major view: columns are samples
    Vec mu = x.rowwise().mean();
    Mat centered = x.colwise() - mu;
    Mat sigma = centered * centered.transpose() / static_cast<double>(n - 1);
    sigma += 1e-6 * Mat::Identity(d, d);
    return std::make_pair(mu, sigma);
  };
  auto [mu_a, sig_a] = stats(fa);
  auto [mu_b, sig_b] = stats(fb);

  // Trace of the square root of the symmetrized product, negative
  // eigenvalues clipped at zero.
  Mat prod = sig_a * sig_b;
  Mat sym = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  double tr_sqrt = 0;
  for (int64_t i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()[i]));

  double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + sig_a.trace() + sig_b.trace() - 2.0 * tr_sqrt;
}

// ---------------------------------------------------------------------------
// Kernel distance
// ---------------------------------------------------------------------------

namespace {

double poly_kernel(const double* x, const double* y, int64_t d) {
  double dot = 0;
  for (int64_t i = 0; i < d; ++i) dot += x[i] * y[i];
  double v = dot / static_cast<double>(d) + 1.0;
  return v * v * v;
}

}  // namespace

double kernel_distance(const Tensor<double>& fa, const Tensor<double>& fb, const KidConfig& cfg) {
  check_shape(fa.rank() == 2 && fb.rank() == 2 && fa.dim(1) == fb.dim(1),
              "kernel_distance: feature shape mismatch");
  check_config(cfg.subset_size >= 2, "kid subset_size must be >= 2");
  check_config(cfg.num_subsets >= 1, "kid num_subsets must be >= 1");
  const int64_t d = fa.dim(1);
  const int64_t na = fa.dim(0), nb = fb.dim(0);
  const int64_t m = std::min<int64_t>({cfg.subset_size, na, nb});
  check_config(m >= 2, "kid: populations too small for subset");

  double total = 0;
  for (int s = 0; s < cfg.num_subsets; ++s) {
    Rand rng(derive_seed(cfg.seed, "kid_subset", static_cast<uint64_t>(s)));
    auto ia = rng.sample_without_replacement(static_cast<int>(na), static_cast<int>(m));
    auto ib = rng.sample_without_replacement(static_cast<int>(nb), static_cast<int>(m));
    double kaa = 0, kbb = 0, kab = 0;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < m; ++j) {
        const double* xi = fa.data() + static_cast<int64_t>(ia[static_cast<size_t>(i)]) * d;
        const double* yj = fb.data() + static_cast<int64_t>(ib[static_cast<size_t>(j)]) * d;
        kab += poly_kernel(xi, yj, d);
        if (i != j) {
          const double* xj = fa.data() + static_cast<int64_t>(ia[static_cast<size_t>(j)]) * d;
          const double* yi = fb.data() + static_cast<int64_t>(ib[static_cast<size_t>(i)]) * d;
          kaa += poly_kernel(xi, xj, d);
          kbb += poly_kernel(yi, yj, d);
        }
      }
    }
    const double mm = static_cast<double>(m);
    total += kaa / (mm * (mm - 1)) + kbb / (mm * (mm - 1)) - 2.0 * kab / (mm * mm);
  }
  return total / cfg.num_subsets;
}

// ---------------------------------------------------------------------------
// Instance-region metrics
// ---------------------------------------------------------------------------

namespace {

std::vector<TensorF> crop_regions(const std::vector<TensorF>& images,
                                  const std::vector<std::vector<BoundingBox>>& boxes,
                                  int crop_side) {
  check_config(images.size() == boxes.size(), "images/boxes count mismatch");
  std::vector<TensorF> crops;
  for (size_t i = 0; i < images.size(); ++i) {
    const TensorF& img = images[i];
    const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
    for (const auto& raw : boxes[i]) {
      BoundingBox b = raw.clipped(w, h);
      if (b.degenerate()) continue;
      int x0 = std::clamp(static_cast<int>(std::floor(b.x_min)), 0, w - 1);
      int y0 = std::clamp(static_cast<int>(std::floor(b.y_min)), 0, h - 1);
      int x1 = std::clamp(static_cast<int>(std::ceil(b.x_max)), x0 + 1, w);
      int y1 = std::clamp(static_cast<int>(std::ceil(b.y_max)), y0 + 1, h);
      TensorF crop({3, y1 - y0, x1 - x0});
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) crop.at3(c, y - y0, x - x0) = img.at3(c, y, x);
      crops.push_back(resize_bilinear(crop, crop_side, crop_side));
    }
  }
  return crops;
}

}  // namespace

InstanceMetrics instance_region_metrics(const std::vector<TensorF>& images_a,
                                        const std::vector<std::vector<BoundingBox>>& boxes_a,
                                        const std::vector<TensorF>& images_b,
                                        const std::vector<std::vector<BoundingBox>>& boxes_b,
                                        const FeatureExtractorSpec& extractor, int crop_side,
                                        const KidConfig& kid) {
  auto crops_a = crop_regions(images_a, boxes_a, crop_side);
  auto crops_b = crop_regions(images_b, boxes_b, crop_side);
  check_config(!crops_a.empty(), "instance metrics: population A has no annotated regions");
  check_config(!crops_b.empty(), "instance metrics: population B has no annotated regions");
  auto feat_a = extract_features(crops_a, extractor);
  auto feat_b = extract_features(crops_b, extractor);
  KidConfig kc = kid;
  kc.subset_size = static_cast<int>(
      std::min<int64_t>({static_cast<int64_t>(kc.subset_size), feat_a.dim(0), feat_b.dim(0)}));
  InstanceMetrics m;
  m.fid_inst = frechet_distance(feat_a, feat_b);
  m.kid_inst = kc.subset_size >= 2 ? kernel_distance(feat_a, feat_b, kc) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Proxy detector
// ---------------------------------------------------------------------------

namespace {

// Frozen detector constants, tuned once against clean toy renders.
constexpr float kChromaThreshold = 0.25f;
constexpr int kMinComponentArea = 12;
constexpr double kScoreChromaScale = 0.5;

}  // namespace

DetectionResult proxy_detect(const TensorF& image) {
  check_shape(image.rank() == 3 && image.dim(0) == 3, "proxy_detect expects [3,H,W]");
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const int64_t hw = static_cast<int64_t>(h) * w;

  std::vector<float> chroma(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) {
    float r = (image[i] + 1.0f) * 0.5f;
    float g = (image[hw + i] + 1.0f) * 0.5f;
    float b = (image[2 * hw + i] + 1.0f) * 0.5f;
    chroma[static_cast<size_t>(i)] = std::max({r, g, b}) - std::min({r, g, b});
  }

  // 4-connected components over the thresholded chroma map.
  std::vector<int> label(static_cast<size_t>(hw), -1);
  DetectionResult out;
  std::vector<std::tuple<double, BoundingBox, int, int>> comps;  // score, box, min_y, min_x
  std::vector<int64_t> stack;
  int next = 0;
  for (int64_t seed_px = 0; seed_px < hw; ++seed_px) {
    if (label[static_cast<size_t>(seed_px)] >= 0 ||
        chroma[static_cast<size_t>(seed_px)] < kChromaThreshold)
      continue;
    int min_x = w, min_y = h, max_x = -1, max_y = -1;
    double chroma_sum = 0;
    int area = 0;
    stack.clear();
    stack.push_back(seed_px);
    label[static_cast<size_t>(seed_px)] = next;
    while (!stack.empty()) {
      int64_t p = stack.back();
      stack.pop_back();
      int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
      chroma_sum += chroma[static_cast<size_t>(p)];
      ++area;
      const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        int nx = x + dx[k], ny = y + dy[k];
        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
        int64_t q = static_cast<int64_t>(ny) * w + nx;
        if (label[static_cast<size_t>(q)] < 0 &&
            chroma[static_cast<size_t>(q)] >= kChromaThreshold) {
          label[static_cast<size_t>(q)] = next;
          stack.push_back(q);
        }
      }
    }
    ++next;
    if (area < kMinComponentArea) continue;
    BoundingBox box{static_cast<double>(min_x), static_cast<double>(min_y),
                    static_cast<double>(max_x + 1), static_cast<double>(max_y + 1), 0};
    double score = std::min(1.0, (chroma_sum / area) / kScoreChromaScale);
    comps.emplace_back(score, box, min_y, min_x);
  }

  std::sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) < std::get<2>(b);
    return std::get<3>(a) < std::get<3>(b);
  });
  for (const auto& [score, box, my, mx] : comps) {
    out.boxes.push_back(box);
    out.scores.push_back(score);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

double average_precision(const std::vector<DetectionResult>& detections,
                         const std::vector<std::vector<BoundingBox>>& ground_truth,
                         double iou_threshold, int* warnings) {
  check_config(detections.size() == ground_truth.size(),
               "average_precision: detections/ground truth image count mismatch");
  int64_t npos = 0;
  for (const auto& gts : ground_truth)
    for (const auto& g : gts)
      if (!g.degenerate()) ++npos;

  struct Det {
    double score;
    size_t image;
    size_t index;
  };
  std::vector<Det> all;
  for (size_t i = 0; i < detections.size(); ++i)
    for (size_t j = 0; j < detections[i].boxes.size(); ++j)
      all.push_back({detections[i].scores[j], i, j});
  std::sort(all.begin(), all.end(), [](const Det& a, const Det& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  if (npos == 0) {
    if (!all.empty() && warnings) ++(*warnings);
    return 0.0;
  }

  std::vector<std::vector<bool>> matched(ground_truth.size());
  for (size_t i = 0; i < ground_truth.size(); ++i)
    matched[i].assign(ground_truth[i].size(), false);

  std::vector<double> precision, recall;
  int64_t tp = 0, fp = 0;
  for (const auto& det : all) {
    const BoundingBox& box = detections[det.image].boxes[det.index];
    double best = 0;
    int best_j = -1;
    const auto& gts = ground_truth[det.image];
    for (size_t j = 0; j < gts.size(); ++j) {
      if (matched[det.image][j] || gts[j].degenerate()) continue;
      double v = iou(box, gts[j]);
      if (v > best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0 && best >= iou_threshold) {
      matched[det.image][static_cast<size_t>(best_j)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
  }

  // Area under the monotonized precision-recall curve (all-point form).
  double ap = 0, prev_recall = 0;
  for (size_t i = 0; i < precision.size(); ++i) {
    double p_max = 0;
    for (size_t j = i; j < precision.size(); ++j) p_max = std::max(p_max, precision[j]);
    ap += (recall[i] - prev_recall) * p_max;
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace lgt
