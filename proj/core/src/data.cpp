#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lgt/common.hpp"
#include "lgt/data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lgt {

double iou(const BoundingBox& a, const BoundingBox& b) {
  double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

void AugmentationConfig::validate() const {
  check_config(flip_prob >= 0 && flip_prob <= 1, "flip_prob must be in [0,1]");
  check_config(blur_prob >= 0 && blur_prob <= 1, "blur_prob must be in [0,1]");
  check_config(grayscale_prob >= 0 && grayscale_prob <= 1, "grayscale_prob must be in [0,1]");
  check_config(blur_sigma_lo >= 0 && blur_sigma_hi >= blur_sigma_lo,
               "blur sigma range must be nonnegative and ordered");
  check_config(brightness >= 0 && contrast >= 0 && saturation >= 0 && hue >= 0,
               "jitter strengths must be nonnegative");
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

AnnotationMap load_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open annotations file: " + path);
  json doc;
  try {
    f >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("malformed annotations JSON in " + path + ": " + e.what());
  }
  AnnotationMap out;
  for (auto& [name, arr] : doc.items()) {
    std::vector<BoundingBox> boxes;
    for (auto& e : arr) {
      check_config(e.is_array() && e.size() == 5,
                   "annotation entries must be [x_min,y_min,x_max,y_max,class_id]");
      BoundingBox b{e[0].get<double>(), e[1].get<double>(), e[2].get<double>(),
                    e[3].get<double>(), e[4].get<int>()};
      boxes.push_back(b);
    }
    out[name] = std::move(boxes);
  }
  return out;
}

void save_annotations(const std::string& path, const AnnotationMap& ann) {
  json doc = json::object();
  for (const auto& [name, boxes] : ann) {
    json arr = json::array();
    for (const auto& b : boxes) arr.push_back({b.x_min, b.y_min, b.x_max, b.y_max, b.class_id});
    doc[name] = arr;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write annotations file: " + path);
  f << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Toy scenes
// ---------------------------------------------------------------------------

namespace {

void hsv_to_rgb_local(double h, double s, double v, double& r, double& g, double& b) {
  h -= std::floor(h);
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Coverage of a shape at pixel center, with a half-pixel soft edge.
double shape_coverage(int shape, double cx, double cy, double r, double px, double py) {
  double dx = px - cx, dy = py - cy;
  double d;
  switch (shape) {
    case 0:  // circle
      d = std::sqrt(dx * dx + dy * dy) - r;
      break;
    case 1:  // square
      d = std::max(std::abs(dx), std::abs(dy)) - r;
      break;
    default: {  // triangle (upward), signed distance approximated by edges
      // vertices ordered so the interior is the negative side of every edge
      double x0 = 0, y0 = -r, x1 = 0.95 * r, y1 = 0.8 * r, x2 = -0.95 * r, y2 = 0.8 * r;
      auto edge = [&](double ax, double ay, double bx, double by) {
        double ex = bx - ax, ey = by - ay;
        double len = std::sqrt(ex * ex + ey * ey);
        return ((dx - ax) * ey - (dy - ay) * ex) / len;
      };
      double d0 = edge(x0, y0, x1, y1);
      double d1 = edge(x1, y1, x2, y2);
      double d2 = edge(x2, y2, x0, y0);
      d = std::max({d0, d1, d2});
      break;
    }
  }
  return std::clamp(0.5 - d, 0.0, 1.0);  // soft edge about one pixel wide
}

}  // namespace

ToyScene render_toy_scene(int image_size, Rand& rng) {
  const int s = image_size;
  ToyScene scene;
  scene.image = TensorF({3, s, s});
  TensorF& img = scene.image;
  const int64_t hw = static_cast<int64_t>(s) * s;

  // Muted near-gray background: base level, two smooth sinusoid gradients,
  // light pixel noise and a faint tint. Low chroma and a brightness band
  // near the fog gray keep the domain gap concentrated on the objects.
  double base = rng.uniform(0.55, 0.70);
  double amp1 = rng.uniform(0.02, 0.05), amp2 = rng.uniform(0.02, 0.05);
  double fx1 = rng.uniform(0.5, 2.0), fy1 = rng.uniform(0.5, 2.0), ph1 = rng.uniform(0, 6.28);
  double fx2 = rng.uniform(1.0, 3.0), fy2 = rng.uniform(1.0, 3.0), ph2 = rng.uniform(0, 6.28);
  double tint[3] = {rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                    rng.uniform(-0.02, 0.02)};
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      double u = static_cast<double>(x) / s, v = static_cast<double>(y) / s;
      double g = base + amp1 * std::sin(2 * 3.14159265 * (fx1 * u + fy1 * v) + ph1) +
                 amp2 * std::sin(2 * 3.14159265 * (fx2 * u - fy2 * v) + ph2) +
                 rng.uniform(-0.015, 0.015);
      for (int c = 0; c < 3; ++c) {
        double val = std::clamp(g + tint[c], 0.0, 1.0);
        img.at3(c, y, x) = static_cast<float>(val * 2.0 - 1.0);
      }
    }
  }

  // 2..6 saturated objects. Placement keeps a clear margin between boxes so
  // distinct objects never fuse into one chroma component.
  int count = 2 + static_cast<int>(rng.uniform_int(5));
  const double scale = static_cast<double>(s) / 64.0;
  const double margin = 3.0 * scale;
  for (int k = 0; k < count; ++k) {
    BoundingBox box;
    double cx = 0, cy = 0, r = 0;
    int shape = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 30 && !placed; ++attempt) {
      r = rng.uniform(5.0, 11.0) * scale;
      cx = rng.uniform(r + 1, s - r - 1);
      cy = rng.uniform(r + 1, s - r - 1);
      shape = static_cast<int>(rng.uniform_int(3));
      box = BoundingBox{cx - r, cy - r, cx + r, cy + r, shape}.clipped(s, s);
      placed = true;
      BoundingBox grown{box.x_min - margin, box.y_min - margin, box.x_max + margin,
                        box.y_max + margin, 0};
      for (const auto& other : scene.boxes)
        if (iou(grown, other) > 0.0) placed = false;
    }
    if (!placed) continue;
    double h = rng.uniform(0.0, 1.0), sat = rng.uniform(0.75, 1.0), val = rng.uniform(0.65, 0.95);
    double cr, cg, cb;
    hsv_to_rgb_local(h, sat, val, cr, cg, cb);
    double col[3] = {cr, cg, cb};
    for (int y = std::max(0, static_cast<int>(cy - r - 1));
         y <= std::min(s - 1, static_cast<int>(cy + r + 1)); ++y) {
      for (int x = std::max(0, static_cast<int>(cx - r - 1));
           x <= std::min(s - 1, static_cast<int>(cx + r + 1)); ++x) {
        double cov = shape_coverage(shape, cx, cy, r, x + 0.5, y + 0.5);
        if (cov <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          double cur = (img.at3(c, y, x) + 1.0) * 0.5;
          double mixed = cur * (1 - cov) + col[c] * cov;
          img.at3(c, y, x) = static_cast<float>(mixed * 2.0 - 1.0);
        }
      }
    }
    scene.boxes.push_back(box);
  }
  return scene;
}

TensorF apply_fog(const TensorF& clean, const FogParams& fog) {
  const int64_t h = clean.dim(1), w = clean.dim(2);
  TensorF out(clean.dims());
  for (int64_t y = 0; y < h; ++y) {
    double depth = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
    double a = fog.alpha_base + fog.alpha_slope * depth;
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        double u = (clean.at3(c, y, x) + 1.0) * 0.5;
        double v = (1 - a) * u + a * fog.gray;
        out.at3(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0) * 2.0 - 1.0);
      }
    }
  }
  if (fog.blur_sigma > 0) out = gaussian_blur(out, fog.blur_sigma);
  if (fog.contrast != 1.0) {
    for (int64_t i = 0; i < out.numel(); ++i) {
      double u = (out[i] + 1.0) * 0.5;
      u = 0.5 + (u - 0.5) * fog.contrast;
      out[i] = static_cast<float>(std::clamp(u, 0.0, 1.0) * 2.0 - 1.0);
    }
  }
  return out;
}

DatasetSpec synthesize_toy_dataset(int num_images_per_domain, int image_size, uint64_t seed,
                                   const std::string& out_dir) {
  check_config(num_images_per_domain >= 1, "need at least one image per domain");
  check_config(image_size >= 32, "toy image_size must be >= 32");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  const int n_test = std::max(4, num_images_per_domain / 10);
  const FogParams fog;

  struct Split {
    std::string name;
    bool foggy;
    int count;
    uint64_t stream;
  };
  const std::vector<Split> splits = {
      {"trainA", true, num_images_per_domain, 0},
      {"trainB", false, num_images_per_domain, 1},
      {"testA", true, n_test, 2},
      {"testB", false, n_test, 3},
  };

  for (const auto& sp : splits) {
    fs::path dir = fs::path(out_dir) / sp.name;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create split directory: " + dir.string());
    AnnotationMap ann;
    for (int i = 0; i < sp.count; ++i) {
      Rand rng(derive_seed(seed, "toy_scene", sp.stream, static_cast<uint64_t>(i)));
      ToyScene scene = render_toy_scene(image_size, rng);
      TensorF img = sp.foggy ? apply_fog(scene.image, fog) : scene.image;
      char name[32];
      std::snprintf(name, sizeof(name), "img_%05d.png", i);
      write_png((dir / name).string(), tensor_to_image(img));
      ann[name] = scene.boxes;
    }
    save_annotations((fs::path(out_dir) / ("annotations_" + sp.name + ".json")).string(), ann);
  }

  DatasetSpec spec;
  spec.root_path = out_dir;
  spec.domain_a_dir = "trainA";
  spec.domain_b_dir = "trainB";
  spec.annotations_path = (fs::path(out_dir) / "annotations_trainA.json").string();
  spec.image_size = image_size;
  return spec;
}

// ---------------------------------------------------------------------------
// Loader
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> list_pngs(const fs::path& dir) {
  check_config(fs::is_directory(dir), "missing dataset directory: " + dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

UnpairedLoader::UnpairedLoader(DatasetSpec spec, uint64_t seed)
    : spec_(std::move(spec)), seed_(seed) {
  fs::path root(spec_.root_path);
  files_a_ = list_pngs(root / spec_.domain_a_dir);
  files_b_ = list_pngs(root / spec_.domain_b_dir);

  // Drop undecodable files up front (skip-with-warning semantics).
  auto prune = [this](const fs::path& dir, std::vector<std::string>& names) {
    std::vector<std::string> ok;
    for (const auto& n : names) {
      try {
        read_png((dir / n).string());
        ok.push_back(n);
      } catch (const IoError& e) {
        ++skipped_;
        std::cerr << "[lgt] warning: skipping undecodable image " << (dir / n).string() << ": "
                  << e.what() << "\n";
      }
    }
    names = std::move(ok);
  };
  prune(root / spec_.domain_a_dir, files_a_);
  prune(root / spec_.domain_b_dir, files_b_);
  check_config(!files_a_.empty(), "domain A has no usable images under " +
                                      (root / spec_.domain_a_dir).string());
  check_config(!files_b_.empty(), "domain B has no usable images under " +
                                      (root / spec_.domain_b_dir).string());

  if (spec_.annotations_path) {
    ann_a_ = load_annotations(*spec_.annotations_path);
    for (const auto& [name, boxes] : ann_a_) {
      bool found = std::find(files_a_.begin(), files_a_.end(), name) != files_a_.end();
      check_config(found, "annotation references missing image: " + name);
      (void)boxes;
    }
  }
}

TensorF UnpairedLoader::load_resized(const std::string& dir, const std::string& name, double* sx,
                                     double* sy) const {
  fs::path p = fs::path(spec_.root_path) / dir / name;
  TensorF t = image_to_tensor(read_png(p.string()));
  const int h = static_cast<int>(t.dim(1)), w = static_cast<int>(t.dim(2));
  const int target = spec_.image_size;
  int oh, ow;
  if (h <= w) {
    oh = target;
    ow = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) * target / h)));
  } else {
    ow = target;
    oh = std::max(1, static_cast<int>(std::lround(static_cast<double>(h) * target / w)));
  }
  if (sx) *sx = static_cast<double>(ow) / w;
  if (sy) *sy = static_cast<double>(oh) / h;
  return resize_bilinear(t, oh, ow);
}

Sample UnpairedLoader::get(int epoch, int index) const {
  check_config(index >= 0 && index < size(), "sample index out of range");
  Rand perm_a(derive_seed(seed_, "epoch_order_a", static_cast<uint64_t>(epoch)));
  Rand perm_b(derive_seed(seed_, "epoch_order_b", static_cast<uint64_t>(epoch)));
  auto order_a = perm_a.permutation(static_cast<int>(files_a_.size()));
  auto order_b = perm_b.permutation(static_cast<int>(files_b_.size()));

  Sample s;
  s.name_a = files_a_[static_cast<size_t>(order_a[static_cast<size_t>(index)])];
  s.name_b = files_b_[static_cast<size_t>(order_b[static_cast<size_t>(index % files_b_.size())])];
  double sx = 1, sy = 1;
  s.image_a = load_resized(spec_.domain_a_dir, s.name_a, &sx, &sy);
  s.image_b = load_resized(spec_.domain_b_dir, s.name_b, nullptr, nullptr);
  if (spec_.annotations_path) {
    auto it = ann_a_.find(s.name_a);
    std::vector<BoundingBox> boxes;
    if (it != ann_a_.end()) {
      for (const auto& b : it->second)
        boxes.push_back(b.scaled(sx, sy).clipped(static_cast<double>(s.image_a.dim(2)),
                                                 static_cast<double>(s.image_a.dim(1))));
    }
    s.boxes_a = std::move(boxes);
  }
  return s;
}

uint64_t UnpairedLoader::digest() const {
  uint64_t h = derive_seed(0x646174617365ULL, "dataset_digest");
  auto mix_str = [&h](const std::string& s) {
    for (char c : s) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
  };
  for (const auto& n : files_a_) mix_str(n);
  for (const auto& n : files_b_) mix_str(n);
  for (const auto& [name, boxes] : ann_a_) {
    mix_str(name);
    for (const auto& b : boxes) {
      h = splitmix64(h ^ static_cast<uint64_t>(std::llround(b.x_min * 16)));
      h = splitmix64(h ^ static_cast<uint64_t>(std::llround(b.y_min * 16)));
      h = splitmix64(h ^ static_cast<uint64_t>(std::llround(b.x_max * 16)));
      h = splitmix64(h ^ static_cast<uint64_t>(std::llround(b.y_max * 16)));
      h = splitmix64(h ^ static_cast<uint64_t>(b.class_id));
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Augmentation and patch views
// ---------------------------------------------------------------------------

TensorF augment_image(const TensorF& image, const AugmentationConfig& cfg, Rand& rng) {
  cfg.validate();
  check_shape(image.rank() == 3 && image.dim(0) == 3, "augment_image expects [3,H,W]");
  TensorF out = image;

  // Draw order is fixed so streams stay aligned across configs.
  bool do_flip = rng.bernoulli(cfg.flip_prob);
  bool do_blur = rng.bernoulli(cfg.blur_prob);
  double sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
  double fb = rng.uniform(std::max(0.0, 1 - cfg.brightness), 1 + cfg.brightness);
  double fc = rng.uniform(std::max(0.0, 1 - cfg.contrast), 1 + cfg.contrast);
  double fsat = rng.uniform(std::max(0.0, 1 - cfg.saturation), 1 + cfg.saturation);
  double fh = rng.uniform(-cfg.hue, cfg.hue);
  bool do_gray = rng.bernoulli(cfg.grayscale_prob);

  if (do_flip) out = flip_horizontal(out);
  if (do_blur && sigma > 0) out = gaussian_blur(out, sigma);
  if (cfg.brightness > 0) out = adjust_brightness(out, fb);
  if (cfg.contrast > 0) out = adjust_contrast(out, fc);
  if (cfg.saturation > 0) out = adjust_saturation(out, fsat);
  if (cfg.hue > 0) out = adjust_hue(out, fh);
  if (do_gray) out = to_grayscale(out);
  return clamp_unit_range(out);
}

LocalPatchView make_local_patches(const TensorF& image, const AugmentationConfig& cfg,
                                  Rand& rng) {
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const int side = std::min(h, w);
  if (side < 8) throw ConfigError("make_local_patches: image too small to crop a 4x4 grid");

  LocalPatchView out;
  out.global_view = augment_image(image, cfg, rng);

  // Rejection-sample a crop with area >= 60% of the image; fall back to a
  // centered crop at 78% side fraction after 100 attempts.
  const double min_area = 0.6 * static_cast<double>(h) * w;
  int cx0 = 0, cy0 = 0, cw = w, ch = h;
  bool found = false;
  for (int attempt = 0; attempt < 100 && !found; ++attempt) {
    double fw = rng.uniform(0.6, 1.0);
    double fh2 = rng.uniform(0.6, 1.0);
    int tw = std::max(8, static_cast<int>(std::lround(fw * w)));
    int th = std::max(8, static_cast<int>(std::lround(fh2 * h)));
    tw = std::min(tw, w);
    th = std::min(th, h);
    if (static_cast<double>(tw) * th < min_area) continue;
    cx0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w - tw + 1)));
    cy0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h - th + 1)));
    cw = tw;
    ch = th;
    found = true;
  }
  if (!found) {
    cw = std::max(8, static_cast<int>(std::lround(0.78 * w)));
    ch = std::max(8, static_cast<int>(std::lround(0.78 * h)));
    cx0 = (w - cw) / 2;
    cy0 = (h - ch) / 2;
  }

  TensorF crop({3, ch, cw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) crop.at3(c, y, x) = image.at3(c, cy0 + y, cx0 + x);

  // Resize the crop to the (square) training side so the 4x4 tiling is exact.
  const int grid_side = std::max(8, side - side % 4);
  TensorF resized = resize_bilinear(crop, grid_side, grid_side);
  TensorF augmented = augment_image(resized, cfg, rng);

  PatchGridView& g = out.grid;
  g.crop_box = BoundingBox{static_cast<double>(cx0), static_cast<double>(cy0),
                           static_cast<double>(cx0 + cw), static_cast<double>(cy0 + ch), 0};
  g.patch_size = grid_side / 4;
  g.augmented_crop = augmented;
  g.permutation = rng.permutation(16);
  g.patches.resize(16);
  const int ps = g.patch_size;
  for (int j = 0; j < 16; ++j) {
    int cell = g.permutation[static_cast<size_t>(j)];
    int ty = cell / 4, tx = cell % 4;
    TensorF tile({3, ps, ps});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          tile.at3(c, y, x) = augmented.at3(c, ty * ps + y, tx * ps + x);
    g.patches[static_cast<size_t>(j)] = std::move(tile);
  }
  return out;
}

TensorF rasterize_object_mask(const std::vector<BoundingBox>& boxes, int height, int width,
                              int* degenerate_warnings) {
  TensorF mask({1, height, width});
  for (const auto& raw : boxes) {
    BoundingBox b = raw.clipped(width, height);
    if (b.degenerate()) {
      if (degenerate_warnings) ++(*degenerate_warnings);
      continue;
    }
    int x0 = static_cast<int>(std::floor(b.x_min));
    int y0 = static_cast<int>(std::floor(b.y_min));
    int x1 = static_cast<int>(std::ceil(b.x_max));
    int y1 = static_cast<int>(std::ceil(b.y_max));
    for (int y = y0; y < y1 && y < height; ++y)
      for (int x = x0; x < x1 && x < width; ++x)
        if (y >= 0 && x >= 0) mask.at3(0, y, x) = 1.0f;
  }
  return mask;
}

}  // namespace lgt
