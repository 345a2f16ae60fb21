// lgt: attention-guided unpaired image translation with local-global
// contrastive training, plus its evaluation harness.
//
// Subcommands: make-toy, train, translate, eval-metrics, eval-detect,
// viz-attn, export-feats. Logs go to stderr; eval commands print one JSON
// object on stdout. Exit codes: 0 ok, 1 user/config error, 2 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "lgt/eval.hpp"
#include "lgt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lgt;

namespace {

// ---------------------------------------------------------------------------
// Declarative run configuration: sections {data, model, train, local_global,
// eval}. Unknown keys are rejected; flags override file values; the resolved
// config is echoed into the run directory.
// ---------------------------------------------------------------------------

struct EvalConfig {
  int feature_dim = 256;
  uint64_t feature_seed = 17;
  int kid_subset_size = 100;
  int kid_num_subsets = 100;
  double iou_threshold = 0.5;
  int crop_side = 32;
  std::string split = "train";
};

struct RunConfig {
  DatasetSpec data;
  TrainConfig train;
  EvalConfig eval;
};

void expect_keys(const json& j, const std::string& where,
                 const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown config key '" + key + "' in section " + where);
  }
}

ObjectiveMode parse_mode(const std::string& s) {
  if (s == "unsupervised") return ObjectiveMode::kUnsupervised;
  if (s == "supervised") return ObjectiveMode::kSupervised;
  if (s == "no_ga") return ObjectiveMode::kNoGa;
  if (s == "no_attention") return ObjectiveMode::kNoAttention;
  throw ConfigError("unknown mode '" + s +
                    "' (expected unsupervised|supervised|no_ga|no_attention)");
}

void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  expect_keys(j, "<root>", {"data", "model", "train", "local_global", "eval"});

  if (j.count("data")) {
    const auto& d = j["data"];
    expect_keys(d, "data",
                {"root", "domain_a", "domain_b", "annotations", "image_size", "aug"});
    if (d.count("root")) rc.data.root_path = d["root"].get<std::string>();
    if (d.count("domain_a")) rc.data.domain_a_dir = d["domain_a"].get<std::string>();
    if (d.count("domain_b")) rc.data.domain_b_dir = d["domain_b"].get<std::string>();
    if (d.count("annotations")) {
      auto s = d["annotations"].get<std::string>();
      if (!s.empty()) rc.data.annotations_path = s;
    }
    if (d.count("image_size")) rc.data.image_size = d["image_size"].get<int>();
    if (d.count("aug")) {
      const auto& a = d["aug"];
      expect_keys(a, "data.aug",
                  {"flip_prob", "blur_prob", "blur_sigma_lo", "blur_sigma_hi", "brightness",
                   "contrast", "saturation", "hue", "grayscale_prob"});
      auto& g = rc.train.aug;
      if (a.count("flip_prob")) g.flip_prob = a["flip_prob"].get<double>();
      if (a.count("blur_prob")) g.blur_prob = a["blur_prob"].get<double>();
      if (a.count("blur_sigma_lo")) g.blur_sigma_lo = a["blur_sigma_lo"].get<double>();
      if (a.count("blur_sigma_hi")) g.blur_sigma_hi = a["blur_sigma_hi"].get<double>();
      if (a.count("brightness")) g.brightness = a["brightness"].get<double>();
      if (a.count("contrast")) g.contrast = a["contrast"].get<double>();
      if (a.count("saturation")) g.saturation = a["saturation"].get<double>();
      if (a.count("hue")) g.hue = a["hue"].get<double>();
      if (a.count("grayscale_prob")) g.grayscale_prob = a["grayscale_prob"].get<double>();
    }
  }
  if (j.count("model")) {
    const auto& m = j["model"];
    expect_keys(m, "model",
                {"n_content", "base_width", "num_res_blocks", "embed_dim", "disc_width"});
    if (m.count("n_content")) rc.train.gen.n_content = m["n_content"].get<int>();
    if (m.count("base_width")) rc.train.gen.base_width = m["base_width"].get<int>();
    if (m.count("num_res_blocks")) rc.train.gen.num_res_blocks = m["num_res_blocks"].get<int>();
    if (m.count("embed_dim")) rc.train.gen.embed_dim = m["embed_dim"].get<int>();
    if (m.count("disc_width")) rc.train.disc_width = m["disc_width"].get<int>();
  }
  if (j.count("train")) {
    const auto& t = j["train"];
    expect_keys(t, "train",
                {"mode", "epochs", "max_iterations", "lr", "beta1", "beta2", "batch_size",
                 "seed", "smallest_side", "checkpoint_every", "log_every", "w_adv", "w_nce",
                 "w_ga", "w_saliency", "nce_tau", "nce_locations", "saturating_adv_g",
                 "lg_warmup_iterations"});
    if (t.count("mode")) rc.train.mode = parse_mode(t["mode"].get<std::string>());
    if (t.count("epochs")) rc.train.epochs = t["epochs"].get<int>();
    if (t.count("max_iterations")) rc.train.max_iterations = t["max_iterations"].get<int>();
    if (t.count("lr")) rc.train.lr = t["lr"].get<double>();
    if (t.count("beta1")) rc.train.beta1 = t["beta1"].get<double>();
    if (t.count("beta2")) rc.train.beta2 = t["beta2"].get<double>();
    if (t.count("batch_size")) rc.train.batch_size = t["batch_size"].get<int>();
    if (t.count("seed")) rc.train.seed = t["seed"].get<uint64_t>();
    if (t.count("smallest_side")) rc.train.smallest_side = t["smallest_side"].get<int>();
    if (t.count("checkpoint_every")) rc.train.checkpoint_every = t["checkpoint_every"].get<int>();
    if (t.count("log_every")) rc.train.log_every = t["log_every"].get<int>();
    if (t.count("w_adv")) rc.train.weights.adv = t["w_adv"].get<double>();
    if (t.count("w_nce")) rc.train.weights.nce = t["w_nce"].get<double>();
    if (t.count("w_ga")) rc.train.weights.ga = t["w_ga"].get<double>();
    if (t.count("w_saliency")) rc.train.weights.saliency = t["w_saliency"].get<double>();
    if (t.count("nce_tau")) rc.train.patch_nce.nce.tau = t["nce_tau"].get<double>();
    if (t.count("nce_locations"))
      rc.train.patch_nce.locations_per_stage = t["nce_locations"].get<int>();
    if (t.count("saturating_adv_g")) rc.train.saturating_adv_g = t["saturating_adv_g"].get<bool>();
    if (t.count("lg_warmup_iterations"))
      rc.train.lg_warmup_iterations = t["lg_warmup_iterations"].get<int>();
  }
  if (j.count("local_global")) {
    const auto& l = j["local_global"];
    expect_keys(l, "local_global", {"stage_weights", "tau", "bank_capacity", "m_coeff"});
    if (l.count("stage_weights")) {
      auto w = l["stage_weights"].get<std::vector<double>>();
      check_config(w.size() == 4, "local_global.stage_weights must have 4 entries");
      std::copy(w.begin(), w.end(), rc.train.lg.stage_weights.begin());
    }
    if (l.count("tau")) rc.train.lg.tau = l["tau"].get<double>();
    if (l.count("bank_capacity")) rc.train.lg.bank_capacity = l["bank_capacity"].get<int>();
    if (l.count("m_coeff")) rc.train.lg.m_coeff = l["m_coeff"].get<double>();
  }
  if (j.count("eval")) {
    const auto& e = j["eval"];
    expect_keys(e, "eval",
                {"feature_dim", "feature_seed", "kid_subset_size", "kid_num_subsets",
                 "iou_threshold", "crop_side", "split"});
    if (e.count("feature_dim")) rc.eval.feature_dim = e["feature_dim"].get<int>();
    if (e.count("feature_seed")) rc.eval.feature_seed = e["feature_seed"].get<uint64_t>();
    if (e.count("kid_subset_size")) rc.eval.kid_subset_size = e["kid_subset_size"].get<int>();
    if (e.count("kid_num_subsets")) rc.eval.kid_num_subsets = e["kid_num_subsets"].get<int>();
    if (e.count("iou_threshold")) rc.eval.iou_threshold = e["iou_threshold"].get<double>();
    if (e.count("crop_side")) rc.eval.crop_side = e["crop_side"].get<int>();
    if (e.count("split")) rc.eval.split = e["split"].get<std::string>();
  }
}

json resolved_json(const RunConfig& rc) {
  json j;
  j["data"] = {{"root", rc.data.root_path},
               {"domain_a", rc.data.domain_a_dir},
               {"domain_b", rc.data.domain_b_dir},
               {"annotations", rc.data.annotations_path.value_or("")},
               {"image_size", rc.data.image_size},
               {"aug",
                {{"flip_prob", rc.train.aug.flip_prob},
                 {"blur_prob", rc.train.aug.blur_prob},
                 {"blur_sigma_lo", rc.train.aug.blur_sigma_lo},
                 {"blur_sigma_hi", rc.train.aug.blur_sigma_hi},
                 {"brightness", rc.train.aug.brightness},
                 {"contrast", rc.train.aug.contrast},
                 {"saturation", rc.train.aug.saturation},
                 {"hue", rc.train.aug.hue},
                 {"grayscale_prob", rc.train.aug.grayscale_prob}}}};
  j["model"] = {{"n_content", rc.train.gen.n_content},
                {"base_width", rc.train.gen.base_width},
                {"num_res_blocks", rc.train.gen.num_res_blocks},
                {"embed_dim", rc.train.gen.embed_dim},
                {"disc_width", rc.train.disc_width}};
  j["train"] = {{"mode", to_string(rc.train.mode)},
                {"epochs", rc.train.epochs},
                {"max_iterations", rc.train.max_iterations},
                {"lr", rc.train.lr},
                {"beta1", rc.train.beta1},
                {"beta2", rc.train.beta2},
                {"batch_size", rc.train.batch_size},
                {"seed", rc.train.seed},
                {"smallest_side", rc.train.smallest_side},
                {"checkpoint_every", rc.train.checkpoint_every},
                {"log_every", rc.train.log_every},
                {"w_adv", rc.train.weights.adv},
                {"w_nce", rc.train.weights.nce},
                {"w_ga", rc.train.weights.ga},
                {"w_saliency", rc.train.weights.saliency},
                {"nce_tau", rc.train.patch_nce.nce.tau},
                {"nce_locations", rc.train.patch_nce.locations_per_stage},
                {"saturating_adv_g", rc.train.saturating_adv_g},
                {"lg_warmup_iterations", rc.train.lg_warmup_iterations}};
  j["local_global"] = {{"stage_weights", rc.train.lg.stage_weights},
                       {"tau", rc.train.lg.tau},
                       {"bank_capacity", rc.train.lg.bank_capacity},
                       {"m_coeff", rc.train.lg.m_coeff}};
  j["eval"] = {{"feature_dim", rc.eval.feature_dim},
               {"feature_seed", rc.eval.feature_seed},
               {"kid_subset_size", rc.eval.kid_subset_size},
               {"kid_num_subsets", rc.eval.kid_num_subsets},
               {"iou_threshold", rc.eval.iou_threshold},
               {"crop_side", rc.eval.crop_side},
               {"split", rc.eval.split}};
  return j;
}

// ---------------------------------------------------------------------------
// Shared data plumbing for the eval commands
// ---------------------------------------------------------------------------

struct SplitData {
  std::vector<TensorF> images;
  std::vector<std::vector<BoundingBox>> boxes;
  std::vector<std::string> names;
};

SplitData load_split(const std::string& root, const std::string& dir, int image_size,
                     int limit = 0) {
  DatasetSpec spec;
  spec.root_path = root;
  spec.domain_a_dir = dir;
  spec.domain_b_dir = dir;
  spec.image_size = image_size;
  fs::path ann = fs::path(root) / ("annotations_" + dir + ".json");
  if (fs::exists(ann)) spec.annotations_path = ann.string();
  UnpairedLoader loader(spec, 0);

  SplitData out;
  const int n = limit > 0 ? std::min(limit, loader.size()) : loader.size();
  for (int i = 0; i < n; ++i) {
    Sample s = loader.get(0, i);
    out.images.push_back(s.image_a);
    out.boxes.push_back(s.boxes_a.value_or(std::vector<BoundingBox>{}));
    out.names.push_back(s.name_a);
  }
  // Epoch-0 order is a permutation; restore name order for stable listings.
  std::vector<size_t> order(out.names.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return out.names[a] < out.names[b]; });
  SplitData sorted;
  for (size_t i : order) {
    sorted.images.push_back(out.images[i]);
    sorted.boxes.push_back(out.boxes[i]);
    sorted.names.push_back(out.names[i]);
  }
  return sorted;
}

std::vector<TensorF> translate_all(const std::vector<TensorF>& images, const Trainer& trainer) {
  std::vector<TensorF> out;
  out.reserve(images.size());
  for (const auto& img : images)
    out.push_back(translate_image(img, trainer.params(), trainer.config().gen));
  return out;
}

std::string split_dir(const std::string& split, char domain) {
  check_config(split == "train" || split == "test", "split must be 'train' or 'test'");
  return split + std::string(1, domain);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-guided unpaired image translation (local-global contrastive)"};
  app.require_subcommand(1);

  std::string config_path, device = "cpu";
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--device", device, "compute device (cpu)");

  // make-toy
  auto* mk = app.add_subcommand("make-toy", "synthesize the two-domain toy dataset");
  std::string mk_out;
  int mk_n = 200, mk_size = 64;
  uint64_t mk_seed = 7;
  mk->add_option("--out", mk_out, "output dataset directory")->required();
  mk->add_option("--n", mk_n, "images per domain (train split)");
  mk->add_option("--size", mk_size, "image side in pixels");
  mk->add_option("--seed", mk_seed, "generation seed");

  // train
  auto* tr = app.add_subcommand("train", "train a translation model");
  std::string tr_data, tr_out, tr_mode, tr_resume;
  int tr_epochs = -1, tr_iters = -1;
  int64_t tr_seed = -1;
  bool tr_force = false;
  tr->add_option("--data", tr_data, "dataset root");
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--mode", tr_mode, "unsupervised|supervised|no_ga|no_attention");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--epochs", tr_epochs, "epoch count");
  tr->add_option("--iters", tr_iters, "iteration cap (0 = epochs * dataset)");
  tr->add_option("--resume", tr_resume, "checkpoint directory to resume from");
  tr->add_flag("--force", tr_force, "resume despite a config digest mismatch");

  // translate
  auto* tl = app.add_subcommand("translate", "translate a split with a checkpoint");
  std::string tl_ckpt, tl_data, tl_out, tl_split = "test";
  int tl_count = 0;
  tl->add_option("--checkpoint", tl_ckpt)->required();
  tl->add_option("--data", tl_data)->required();
  tl->add_option("--out", tl_out)->required();
  tl->add_option("--split", tl_split, "train|test");
  tl->add_option("--count", tl_count, "limit image count (0 = all)");

  // eval-metrics
  auto* em = app.add_subcommand("eval-metrics", "distribution metrics as JSON");
  std::string em_ckpt, em_data, em_split;
  bool em_raw = false;
  em->add_option("--checkpoint", em_ckpt);
  em->add_option("--data", em_data)->required();
  em->add_option("--split", em_split, "train|test (default from config)");
  em->add_flag("--raw", em_raw, "evaluate untranslated domain A");

  // eval-detect
  auto* ed = app.add_subcommand("eval-detect", "proxy-detector AP as JSON");
  std::string ed_ckpt, ed_data, ed_split;
  ed->add_option("--checkpoint", ed_ckpt)->required();
  ed->add_option("--data", ed_data)->required();
  ed->add_option("--split", ed_split, "train|test (default from config)");

  // viz-attn
  auto* vz = app.add_subcommand("viz-attn", "export attention-mask panels");
  std::string vz_ckpt, vz_data, vz_out, vz_split;
  int vz_count = 8;
  vz->add_option("--checkpoint", vz_ckpt)->required();
  vz->add_option("--data", vz_data)->required();
  vz->add_option("--out", vz_out)->required();
  vz->add_option("--split", vz_split, "train|test (default from config)");
  vz->add_option("--count", vz_count, "image count");

  // export-feats
  auto* xf = app.add_subcommand("export-feats", "export labeled region features to CSV");
  std::string xf_ckpt, xf_data, xf_out, xf_split;
  int xf_count = 1000;
  xf->add_option("--checkpoint", xf_ckpt)->required();
  xf->add_option("--data", xf_data)->required();
  xf->add_option("--out", xf_out, "output CSV path")->required();
  xf->add_option("--split", xf_split, "train|test (default from config)");
  xf->add_option("--count", xf_count, "feature sample count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    check_config(device == "cpu", "only --device cpu is supported");
    RunConfig rc;
    if (!config_path.empty()) apply_config_file(rc, config_path);

    if (*mk) {
      synthesize_toy_dataset(mk_n, mk_size, mk_seed, mk_out);
      DatasetSpec spec;
      spec.root_path = mk_out;
      spec.image_size = mk_size;
      spec.annotations_path = (fs::path(mk_out) / "annotations_trainA.json").string();
      UnpairedLoader loader(spec, 0);
      json out = {{"root", mk_out},
                  {"images_per_domain", mk_n},
                  {"image_size", mk_size},
                  {"seed", mk_seed},
                  {"digest", loader.digest()}};
      std::cout << out.dump() << "\n";
      return 0;
    }

    if (*tr) {
      if (!tr_data.empty()) rc.data.root_path = tr_data;
      check_config(!rc.data.root_path.empty(), "train: --data or data.root is required");
      if (!tr_mode.empty()) rc.train.mode = parse_mode(tr_mode);
      if (tr_seed >= 0) rc.train.seed = static_cast<uint64_t>(tr_seed);
      if (tr_epochs >= 0) rc.train.epochs = tr_epochs;
      if (tr_iters >= 0) rc.train.max_iterations = tr_iters;
      if (!rc.data.annotations_path) {
        fs::path ann = fs::path(rc.data.root_path) / "annotations_trainA.json";
        if (fs::exists(ann)) rc.data.annotations_path = ann.string();
      }
      rc.data.image_size = rc.train.smallest_side;

      fs::create_directories(tr_out);
      {
        std::ofstream echo(fs::path(tr_out) / "config.json", std::ios::trunc);
        echo << resolved_json(rc).dump(2) << "\n";
      }

      std::string final_checkpoint;
      int64_t iterations = 0;
      if (!tr_resume.empty()) {
        uint64_t stored = Trainer::stored_config_digest(tr_resume);
        if (stored != rc.train.digest() && !tr_force)
          throw ConfigError(
              "resume: config digest mismatch with checkpoint (pass --force to override)");
        Trainer t = Trainer::load_checkpoint(tr_resume, tr_force);
        auto res = t.fit(rc.data, tr_out);
        final_checkpoint = res.final_checkpoint;
        iterations = t.iteration();
      } else {
        Trainer t(rc.train);
        auto res = t.fit(rc.data, tr_out);
        final_checkpoint = res.final_checkpoint;
        iterations = t.iteration();
      }
      std::cout << json{{"final_checkpoint", final_checkpoint}, {"iterations", iterations}}.dump()
                << "\n";
      return 0;
    }

    if (*tl) {
      Trainer t = Trainer::load_checkpoint(tl_ckpt);
      SplitData a =
          load_split(tl_data, split_dir(tl_split, 'A'), t.config().smallest_side, tl_count);
      fs::create_directories(tl_out);
      for (size_t i = 0; i < a.images.size(); ++i) {
        TensorF y = translate_image(a.images[i], t.params(), t.config().gen);
        write_png((fs::path(tl_out) / a.names[i]).string(), tensor_to_image(y));
      }
      std::cout << json{{"translated", a.images.size()}, {"out", tl_out}}.dump() << "\n";
      return 0;
    }

    if (*em) {
      std::string split = em_split.empty() ? rc.eval.split : em_split;
      check_config(em_raw || !em_ckpt.empty(), "eval-metrics needs --checkpoint or --raw");
      int side = rc.train.smallest_side;
      std::optional<Trainer> t;
      if (!em_ckpt.empty()) {
        t.emplace(Trainer::load_checkpoint(em_ckpt));
        side = t->config().smallest_side;
      }
      SplitData a = load_split(em_data, split_dir(split, 'A'), side);
      SplitData b = load_split(em_data, split_dir(split, 'B'), side);

      std::vector<TensorF> eval_images = (em_raw || !t) ? a.images : translate_all(a.images, *t);
      FeatureExtractorSpec ex;
      ex.feature_dim = rc.eval.feature_dim;
      ex.seed = rc.eval.feature_seed;
      KidConfig kid{rc.eval.kid_subset_size, rc.eval.kid_num_subsets, 99};

      auto fa = extract_features(eval_images, ex);
      auto fb = extract_features(b.images, ex);
      auto inst = instance_region_metrics(eval_images, a.boxes, b.images, b.boxes, ex,
                                          rc.eval.crop_side, kid);
      json out = {{"fid", frechet_distance(fa, fb)},
                  {"kid", kernel_distance(fa, fb, kid)},
                  {"fid_inst", inst.fid_inst},
                  {"kid_inst", inst.kid_inst}};
      std::cout << out.dump() << "\n";
      return 0;
    }

    if (*ed) {
      std::string split = ed_split.empty() ? rc.eval.split : ed_split;
      Trainer t = Trainer::load_checkpoint(ed_ckpt);
      const int side = t.config().smallest_side;
      SplitData a = load_split(ed_data, split_dir(split, 'A'), side);
      SplitData b = load_split(ed_data, split_dir(split, 'B'), side);

      auto ap_of = [&](const std::vector<TensorF>& images,
                       const std::vector<std::vector<BoundingBox>>& gt) {
        std::vector<DetectionResult> det;
        det.reserve(images.size());
        for (const auto& img : images) det.push_back(proxy_detect(img));
        return average_precision(det, gt, rc.eval.iou_threshold);
      };
      double ap_oracle_b = ap_of(b.images, b.boxes);
      double ap_raw = ap_of(a.images, a.boxes);
      double ap_translated = ap_of(translate_all(a.images, t), a.boxes);
      json out = {{"ap_source_oracle", ap_oracle_b},
                  {"ap_raw_target", ap_raw},
                  {"ap_translated", ap_translated},
                  {"delta", ap_translated - ap_raw}};
      std::cout << out.dump() << "\n";
      return 0;
    }

    if (*vz) {
      std::string split = vz_split.empty() ? rc.eval.split : vz_split;
      Trainer t = Trainer::load_checkpoint(vz_ckpt);
      SplitData a =
          load_split(vz_data, split_dir(split, 'A'), t.config().smallest_side, vz_count);
      export_attention_masks(t.params(), t.config().gen, a.images, a.names, vz_out);
      std::cout << json{{"exported", a.images.size()}, {"out", vz_out}}.dump() << "\n";
      return 0;
    }

    if (*xf) {
      std::string split = xf_split.empty() ? rc.eval.split : xf_split;
      Trainer t = Trainer::load_checkpoint(xf_ckpt);
      SplitData a = load_split(xf_data, split_dir(split, 'A'), t.config().smallest_side);
      auto report = export_region_features(t.params(), t.config().gen, a.images, a.boxes,
                                           xf_count, xf_out);
      std::cout << json{{"rows", report.rows_written}, {"available", report.available}}.dump()
                << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
