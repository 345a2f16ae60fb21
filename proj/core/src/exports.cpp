#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "lgt/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lgt {

namespace {

// Side-by-side grayscale/RGB panel out of equal-height images.
ImageU8 hstack(const std::vector<ImageU8>& tiles) {
  int h = tiles.at(0).height;
  int w = 0;
  for (const auto& t : tiles) w += t.width + 2;
  w -= 2;
  ImageU8 panel;
  panel.width = w;
  panel.height = h;
  panel.channels = 3;
  panel.pixels.assign(static_cast<size_t>(w) * h * 3, 255);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < t.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          uint8_t v = t.channels == 3 ? t.pixels[(static_cast<size_t>(y) * t.width + x) * 3 + c]
                                      : t.pixels[static_cast<size_t>(y) * t.width + x];
          panel.pixels[(static_cast<size_t>(y) * w + x0 + x) * 3 + c] = v;
        }
      }
    }
    x0 += t.width + 2;
  }
  return panel;
}

}  // namespace

void export_attention_masks(const ParamStore<float>& params, const GeneratorConfig& cfg,
                            const std::vector<TensorF>& images,
                            const std::vector<std::string>& names, const std::string& out_dir) {
  check_config(images.size() == names.size(), "export_attention_masks: names/images mismatch");
  fs::create_directories(out_dir);
  json sidecar = json::object();

  for (size_t i = 0; i < images.size(); ++i) {
    auto tr = translate(constant<float>(images[i]), params, cfg);
    const TensorF& masks = tr.masks->val;
    const int n = cfg.n_content;
    const int64_t hw = masks.dim(1) * masks.dim(2);

    // Pick the 3 foreground channels with the highest mean activation.
    std::vector<std::pair<double, int>> ranked;
    for (int t = 0; t < n; ++t) {
      double mean = 0;
      for (int64_t j = 0; j < hw; ++j) mean += masks[t * hw + j];
      ranked.push_back({mean / static_cast<double>(hw), t});
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::vector<int> selected;
    for (int k = 0; k < std::min(3, n); ++k) selected.push_back(ranked[static_cast<size_t>(k)].second);

    const std::string stem = fs::path(names[i]).stem().string();
    std::vector<ImageU8> tiles;
    ImageU8 input_img = tensor_to_image(images[i]);
    write_png((fs::path(out_dir) / (stem + "_input.png")).string(), input_img);
    tiles.push_back(input_img);
    for (size_t k = 0; k < selected.size(); ++k) {
      TensorF chan({1, masks.dim(1), masks.dim(2)});
      std::copy_n(masks.data() + selected[k] * hw, hw, chan.data());
      ImageU8 m = map_to_image(chan);
      write_png((fs::path(out_dir) / (stem + "_mask" + std::to_string(k) + ".png")).string(), m);
      tiles.push_back(m);
    }
    ImageU8 out_img = tensor_to_image(tr.output->val);
    write_png((fs::path(out_dir) / (stem + "_translated.png")).string(), out_img);
    tiles.push_back(out_img);
    write_png((fs::path(out_dir) / (stem + "_panel.png")).string(), hstack(tiles));

    sidecar[names[i]] = {{"mask_channels", selected}};
  }

  std::ofstream f(fs::path(out_dir) / "masks_sidecar.json", std::ios::trunc);
  if (!f) throw IoError("cannot write mask sidecar");
  f << sidecar.dump(2) << "\n";
}

RegionFeatureReport export_region_features(const ParamStore<float>& params,
                                           const GeneratorConfig& cfg,
                                           const std::vector<TensorF>& images,
                                           const std::vector<std::vector<BoundingBox>>& boxes,
                                           int sample_count, const std::string& out_csv,
                                           uint64_t seed) {
  check_config(images.size() == boxes.size(), "export_region_features: boxes/images mismatch");
  check_config(sample_count >= 1, "sample_count must be >= 1");

  struct Row {
    bool object;
    std::vector<float> feat;
  };
  std::vector<Row> rows;

  for (size_t i = 0; i < images.size(); ++i) {
    auto x = constant<float>(images[i]);
    auto enc = encode(x, params, cfg);
    auto att = generate_attention(enc.m_e, params, cfg);
    const TensorF& f = att.stage_features[1]->val;  // [2w, H/2, W/2]
    const int fh = static_cast<int>(f.dim(1)), fw = static_cast<int>(f.dim(2));
    const double sy = static_cast<double>(images[i].dim(1)) / fh;
    const double sx = static_cast<double>(images[i].dim(2)) / fw;
    const int64_t hw = static_cast<int64_t>(fh) * fw;
    for (int y = 0; y < fh; ++y) {
      for (int x2 = 0; x2 < fw; ++x2) {
        double px = (x2 + 0.5) * sx, py = (y + 0.5) * sy;
        bool object = false;
        for (const auto& b : boxes[i])
          if (px >= b.x_min && px < b.x_max && py >= b.y_min && py < b.y_max) object = true;
        Row row;
        row.object = object;
        row.feat.resize(static_cast<size_t>(f.dim(0)));
        for (int64_t c = 0; c < f.dim(0); ++c)
          row.feat[static_cast<size_t>(c)] = f[c * hw + static_cast<int64_t>(y) * fw + x2];
        rows.push_back(std::move(row));
      }
    }
  }

  RegionFeatureReport report;
  report.available = static_cast<int>(rows.size());
  Rand rng(derive_seed(seed, "region_features"));
  std::vector<int> order =
      rng.sample_without_replacement(static_cast<int>(rows.size()),
                                     std::min<int>(sample_count, static_cast<int>(rows.size())));

  std::ofstream f(out_csv, std::ios::trunc);
  if (!f) throw IoError("cannot write features CSV: " + out_csv);
  f << "label";
  for (size_t c = 0; c < rows.at(0).feat.size(); ++c) f << ",f" << c;
  f << "\n";
  for (int idx : order) {
    const Row& r = rows[static_cast<size_t>(idx)];
    f << (r.object ? "object" : "background");
    for (float v : r.feat) f << "," << v;
    f << "\n";
    ++report.rows_written;
  }
  return report;
}

}  // namespace lgt
