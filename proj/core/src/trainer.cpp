#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "lgt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lgt {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  check_config(epochs >= 1, "epochs must be >= 1");
  check_config(max_iterations >= 0, "max_iterations must be >= 0");
  check_config(lr >= 0, "learning rate must be nonnegative");
  check_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must be in [0,1)");
  check_config(batch_size == 1, "only batch_size 1 is supported");
  check_config(smallest_side >= 8 && smallest_side % 4 == 0,
               "smallest_side must be >= 8 and divisible by 4");
  check_config(checkpoint_every >= 1 && log_every >= 1, "periods must be >= 1");
  check_config(disc_width >= 2, "disc_width must be >= 2");
  check_config(lg_warmup_iterations >= 0, "lg_warmup_iterations must be >= 0");
  gen.validate();
  patch_nce.nce.validate();
  lg.validate();
  aug.validate();
}

std::string TrainConfig::canonical_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["epochs"] = epochs;
  j["max_iterations"] = max_iterations;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["smallest_side"] = smallest_side;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["disc_width"] = disc_width;
  j["saturating_adv_g"] = saturating_adv_g;
  j["lg_warmup_iterations"] = lg_warmup_iterations;
  j["gen"] = {{"n_content", gen.n_content},
              {"base_width", gen.base_width},
              {"num_res_blocks", gen.num_res_blocks},
              {"num_stages", gen.num_stages},
              {"embed_dim", gen.embed_dim}};
  j["weights"] = {{"adv", weights.adv},
                  {"nce", weights.nce},
                  {"ga", weights.ga},
                  {"saliency", weights.saliency}};
  j["patch_nce"] = {{"tau", patch_nce.nce.tau},
                    {"locations_per_stage", patch_nce.locations_per_stage}};
  j["lg"] = {{"stage_weights", lg.stage_weights},
             {"tau", lg.tau},
             {"bank_capacity", lg.bank_capacity},
             {"m_coeff", lg.m_coeff}};
  j["aug"] = {{"flip_prob", aug.flip_prob},
              {"blur_prob", aug.blur_prob},
              {"blur_sigma_lo", aug.blur_sigma_lo},
              {"blur_sigma_hi", aug.blur_sigma_hi},
              {"brightness", aug.brightness},
              {"contrast", aug.contrast},
              {"saturation", aug.saturation},
              {"hue", aug.hue},
              {"grayscale_prob", aug.grayscale_prob}};
  return j.dump();
}

namespace {

ObjectiveMode mode_from_string(const std::string& s) {
  if (s == "unsupervised") return ObjectiveMode::kUnsupervised;
  if (s == "supervised") return ObjectiveMode::kSupervised;
  if (s == "no_ga") return ObjectiveMode::kNoGa;
  if (s == "no_attention") return ObjectiveMode::kNoAttention;
  throw ConfigError("unknown mode: " + s);
}

}  // namespace

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config JSON: ") + e.what());
  }
  TrainConfig c;
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.epochs = j.at("epochs").get<int>();
  c.max_iterations = j.at("max_iterations").get<int>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.smallest_side = j.at("smallest_side").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.log_every = j.at("log_every").get<int>();
  c.disc_width = j.at("disc_width").get<int>();
  c.saturating_adv_g = j.at("saturating_adv_g").get<bool>();
  c.lg_warmup_iterations = j.at("lg_warmup_iterations").get<int>();
  const auto& g = j.at("gen");
  c.gen.n_content = g.at("n_content").get<int>();
  c.gen.base_width = g.at("base_width").get<int>();
  c.gen.num_res_blocks = g.at("num_res_blocks").get<int>();
  c.gen.num_stages = g.at("num_stages").get<int>();
  c.gen.embed_dim = g.at("embed_dim").get<int>();
  const auto& w = j.at("weights");
  c.weights.adv = w.at("adv").get<double>();
  c.weights.nce = w.at("nce").get<double>();
  c.weights.ga = w.at("ga").get<double>();
  c.weights.saliency = w.at("saliency").get<double>();
  const auto& pn = j.at("patch_nce");
  c.patch_nce.nce.tau = pn.at("tau").get<double>();
  c.patch_nce.locations_per_stage = pn.at("locations_per_stage").get<int>();
  const auto& lg = j.at("lg");
  auto sw = lg.at("stage_weights").get<std::vector<double>>();
  check_config(sw.size() == 4, "lg.stage_weights must have 4 entries");
  std::copy(sw.begin(), sw.end(), c.lg.stage_weights.begin());
  c.lg.tau = lg.at("tau").get<double>();
  c.lg.bank_capacity = lg.at("bank_capacity").get<int>();
  c.lg.m_coeff = lg.at("m_coeff").get<double>();
  const auto& a = j.at("aug");
  c.aug.flip_prob = a.at("flip_prob").get<double>();
  c.aug.blur_prob = a.at("blur_prob").get<double>();
  c.aug.blur_sigma_lo = a.at("blur_sigma_lo").get<double>();
  c.aug.blur_sigma_hi = a.at("blur_sigma_hi").get<double>();
  c.aug.brightness = a.at("brightness").get<double>();
  c.aug.contrast = a.at("contrast").get<double>();
  c.aug.saturation = a.at("saturation").get<double>();
  c.aug.hue = a.at("hue").get<double>();
  c.aug.grayscale_prob = a.at("grayscale_prob").get<double>();
  return c;
}

uint64_t TrainConfig::digest() const {
  uint64_t h = 0x636f6e666967ULL;
  for (char ch : canonical_json())
    h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(ch)));
  return h;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  init_params();
}

void Trainer::init_params() {
  // Independent init streams per sub-network keep weights identical across
  // modes for the same seed (the ablation comparisons rely on this).
  const uint64_t s = cfg_.seed;
  {
    Rand r(derive_seed(s, "init.enc"));
    init_encoder(params_, cfg_.gen, r);
  }
  {
    Rand r(derive_seed(s, "init.gc"));
    init_content_generator(params_, cfg_.gen, r);
  }
  {
    Rand r(derive_seed(s, "init.ga"));
    init_attention_generator(params_, cfg_.gen, r);
  }
  {
    Rand r(derive_seed(s, "init.heads.patch"));
    init_patch_heads(params_, cfg_.gen, r);
  }
  {
    Rand r(derive_seed(s, "init.disc"));
    init_discriminator(params_, cfg_.disc_width, r);
  }
  if (cfg_.mode == ObjectiveMode::kSupervised) {
    Rand r(derive_seed(s, "init.sal"));
    init_saliency_head(params_, cfg_.gen, r);
  }
  if (cfg_.mode == ObjectiveMode::kUnsupervised) {
    Rand r(derive_seed(s, "init.heads.lg"));
    init_lg_heads(params_, cfg_.gen, r);
    // Momentum mirrors start as copies of the online weights.
    Rand r2(derive_seed(s, "init.enc"));
    init_encoder(momentum_, cfg_.gen, r2, /*requires_grad=*/false);
    Rand r3(derive_seed(s, "init.ga"));
    init_attention_generator(momentum_, cfg_.gen, r3, /*requires_grad=*/false);
    Rand r4(derive_seed(s, "init.heads.lg"));
    init_lg_heads(momentum_, cfg_.gen, r4, /*requires_grad=*/false);
    banks_ = BankSet<float>::make(cfg_.gen.num_stages, cfg_.lg.bank_capacity);
  }

  std::vector<std::string> g_paths, d_paths;
  for (const auto& p : params_.paths()) {
    if (p.rfind("disc.", 0) == 0)
      d_paths.push_back(p);
    else
      g_paths.push_back(p);
  }
  opt_g_.init(params_, g_paths);
  opt_d_.init(params_, d_paths);
}

LossReport Trainer::train_step(const Sample& batch) {
  const TensorF& xa = batch.image_a;
  const TensorF& yb = batch.image_b;
  auto x = constant<float>(xa);

  // Generator forward. no_attention decodes the first content map directly.
  Var<float> y_hat;
  EncodeOut<float> enc_x;
  AttentionOut<float> att;
  if (cfg_.mode == ObjectiveMode::kNoAttention) {
    enc_x = encode(x, params_, cfg_.gen);
    auto contents = generate_content(enc_x.m_e, params_, cfg_.gen);
    y_hat = slice_channels(contents, 0, 3);
  } else {
    auto tr = translate(x, params_, cfg_.gen);
    enc_x = tr.encode;
    att = tr.attention;
    y_hat = tr.output;
  }

  // Discriminator step on real y and detached G(x).
  auto d_real = discriminate(constant<float>(yb), params_);
  auto d_fake = discriminate(detach(y_hat), params_);
  auto d_loss = adversarial_loss_d(d_real, d_fake, &clamp_warnings_);
  check_invariant(std::isfinite(static_cast<double>(d_loss->val[0])),
                  "loss component adv_d is not finite");
  opt_d_.zero_grads(params_);
  backward(d_loss);
  opt_d_.step(params_, cfg_.lr, cfg_.beta1, cfg_.beta2);

  // Generator objective.
  std::map<std::string, Var<float>> parts;
  parts["adv_g"] =
      adversarial_loss_g(discriminate(y_hat, params_), cfg_.saturating_adv_g, &clamp_warnings_);
  {
    Rand nce_rng(derive_seed(cfg_.seed, "patch_nce", static_cast<uint64_t>(iteration_)));
    auto enc_y = encode(y_hat, params_, cfg_.gen);
    parts["nce_patch"] = patch_nce_loss(enc_x, enc_y, params_, cfg_.patch_nce, nce_rng);
  }
  bool lg_warmup = false;
  if (cfg_.mode == ObjectiveMode::kUnsupervised) {
    if (iteration_ >= cfg_.lg_warmup_iterations) {
      Rand lg_rng(derive_seed(cfg_.seed, "local_global", static_cast<uint64_t>(iteration_)));
      auto lg = local_global_loss<float>(xa, params_, momentum_, banks_, cfg_.gen, cfg_.lg,
                                         cfg_.aug, lg_rng);
      parts["l_ga"] = lg.loss;
      lg_warmup = lg.warmup;
    } else {
      parts["l_ga"] = constant<float>(TensorF::scalar(0.0f));
    }
  }
  if (cfg_.mode == ObjectiveMode::kSupervised) {
    check_config(batch.boxes_a.has_value(),
                 "supervised mode requires box annotations for domain A");
    TensorF mask = rasterize_object_mask(*batch.boxes_a, static_cast<int>(xa.dim(1)),
                                         static_cast<int>(xa.dim(2)));
    auto m = predict_saliency(att.logits, params_);
    parts["saliency"] = saliency_loss(m, mask);
  }

  auto obj = generator_objective(parts, cfg_.mode, cfg_.weights);
  opt_g_.zero_grads(params_);
  backward(obj.total);
  opt_g_.step(params_, cfg_.lr, cfg_.beta1, cfg_.beta2);

  if (cfg_.mode == ObjectiveMode::kUnsupervised) {
    MomentumPair<float> pair{&params_, &momentum_, cfg_.lg.m_coeff};
    ema_update(pair);
  }

  ++iteration_;
  LossReport report = obj.report;
  report.components["adv_d"] = static_cast<double>(d_loss->val[0]);
  if (lg_warmup) report.components["l_ga_warmup"] = 1.0;
  return report;
}

Trainer::FitResult Trainer::fit(const DatasetSpec& dataset, const std::string& out_dir) {
  check_config(cfg_.lr > 0, "fit requires a positive learning rate");
  DatasetSpec spec = dataset;
  spec.image_size = cfg_.smallest_side;
  if (cfg_.mode == ObjectiveMode::kSupervised)
    check_config(spec.annotations_path.has_value(),
                 "supervised mode refuses to start without annotations");
  UnpairedLoader loader(spec, cfg_.seed);

  fs::create_directories(out_dir);
  std::ofstream echo(fs::path(out_dir) / "train_config.json", std::ios::trunc);
  echo << cfg_.canonical_json() << "\n";
  echo.close();

  int64_t total = static_cast<int64_t>(cfg_.epochs) * loader.size();
  if (cfg_.max_iterations > 0) total = std::min<int64_t>(total, cfg_.max_iterations);

  const fs::path trace_path = fs::path(out_dir) / "loss_history.csv";
  const bool fresh = iteration_ == 0 || !fs::exists(trace_path);
  std::ofstream trace(trace_path, fresh ? std::ios::trunc : std::ios::app);
  if (!trace) throw IoError("cannot open loss history file: " + trace_path.string());
  if (fresh) trace << "iteration,adv_d,adv_g,nce_patch,l_ga,saliency,total\n";

  FitResult result;
  while (iteration_ < total) {
    const int epoch = static_cast<int>(iteration_ / loader.size());
    const int index = static_cast<int>(iteration_ % loader.size());
    Sample batch = loader.get(epoch, index);
    const int64_t it = iteration_;
    LossReport r = train_step(batch);
    result.history.push_back(r);

    auto cell = [&r](const char* name) {
      return r.has(name) ? std::to_string(r.components.at(name)) : std::string();
    };
    trace << it << "," << cell("adv_d") << "," << cell("adv_g") << "," << cell("nce_patch") << ","
          << cell("l_ga") << "," << cell("saliency") << "," << r.total << "\n";
    trace.flush();

    if (iteration_ % cfg_.log_every == 0)
      std::cerr << "[lgt] iter " << iteration_ << "/" << total << " total=" << r.total
                << " adv_d=" << r.components.at("adv_d") << "\n";
    if (iteration_ % cfg_.checkpoint_every == 0 && iteration_ < total) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06lld", static_cast<long long>(iteration_));
      save_checkpoint((fs::path(out_dir) / name).string());
    }
  }

  std::string final_dir = (fs::path(out_dir) / "final.ckpt").string();
  save_checkpoint(final_dir);
  result.final_checkpoint = final_dir;
  return result;
}

uint64_t Trainer::params_fingerprint() const {
  uint64_t h = 0x70617261ULL;
  for (const auto& p : params_.paths()) {
    const auto& t = params_.at(p)->val;
    for (int64_t i = 0; i < t.numel(); ++i) {
      uint32_t bits;
      float f = t[i];
      std::memcpy(&bits, &f, sizeof(bits));
      h = splitmix64(h ^ bits);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

TensorF translate_image(const TensorF& image, const ParamStore<float>& params,
                        const GeneratorConfig& cfg) {
  auto out = translate(constant<float>(image), params, cfg);
  return out.output->val;
}

TensorF attention_masks_for(const TensorF& image, const ParamStore<float>& params,
                            const GeneratorConfig& cfg) {
  auto x = constant<float>(image);
  auto enc = encode(x, params, cfg);
  auto att = generate_attention(enc.m_e, params, cfg);
  return att.masks->val;
}

}  // namespace lgt
