#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include "lgt/losses.hpp"

using namespace lgt;
using lgt_test::gradcheck;
using lgt_test::randn_leaf;

namespace {

Var<double> vec2(double a, double b) {
  Tensor<double> t({2});
  t[0] = a;
  t[1] = b;
  return constant<double>(t);
}

}  // namespace

TEST_CASE("info_nce: analytic values") {
  InfoNCEConfig tau1{1.0};

  // Empty negatives: the fraction is exactly 1.
  CHECK(info_nce<double>(vec2(0.3, -0.7), vec2(1.0, 0.2), {}, tau1)->val[0] == 0.0);

  // One negative with equal logit: ln 2.
  {
    auto q = vec2(1.0, 0.0);
    auto kp = vec2(0.5, 0.0);
    auto kn = vec2(0.5, 0.0);
    double v = info_nce<double>(q, kp, {kn}, tau1)->val[0];
    CHECK(std::abs(v - std::log(2.0)) < 1e-6);
  }

  // q=[1,0], k+=[1,0], k-=[0,1], tau=1: ln(1+e^-1).
  {
    double v = info_nce<double>(vec2(1, 0), vec2(1, 0), {vec2(0, 1)}, tau1)->val[0];
    CHECK(std::abs(v - std::log(1.0 + std::exp(-1.0))) < 1e-6);
  }

  // Errors.
  Tensor<double> three({3});
  CHECK_THROWS_AS(info_nce<double>(vec2(1, 0), constant<double>(three), {}, tau1), ShapeError);
  CHECK_THROWS_AS(info_nce<double>(vec2(1, 0), vec2(1, 0), {}, InfoNCEConfig{-0.1}), ConfigError);
  CHECK_THROWS_AS(info_nce<double>(vec2(1, 0), vec2(1, 0), {}, InfoNCEConfig{0.0}), ConfigError);
}

TEST_CASE("info_nce: invariants (permutation, monotonicity, large-tau limit)") {
  Rand rng(21);
  auto q = randn_leaf({2}, rng);
  auto kp = randn_leaf({2}, rng);
  std::vector<Var<double>> negs;
  for (int i = 0; i < 6; ++i) negs.push_back(randn_leaf({2}, rng));

  InfoNCEConfig cfg{0.7};
  double base = info_nce<double>(q, kp, negs, cfg)->val[0];
  CHECK(base >= 0.0);

  // Any permutation of the negatives leaves the loss unchanged.
  std::vector<Var<double>> shuffled = {negs[3], negs[0], negs[5], negs[1], negs[4], negs[2]};
  CHECK(info_nce<double>(q, kp, shuffled, cfg)->val[0] == doctest::Approx(base).epsilon(1e-12));

  // Strictly decreasing in q.k+ with negatives fixed.
  double prev = 1e100;
  for (double s : {-1.0, -0.3, 0.2, 0.9, 1.7}) {
    auto kp2 = vec2(s, 0.0);
    auto q2 = vec2(1.0, 0.0);
    double v = info_nce<double>(q2, kp2, negs, cfg)->val[0];
    CHECK(v < prev);
    prev = v;
  }

  // tau -> infinity: the softmax flattens, loss -> ln(1 + |negatives|).
  double flat = info_nce<double>(q, kp, negs, InfoNCEConfig{1e6})->val[0];
  CHECK(std::abs(flat - std::log(7.0)) < 1e-3);
}

TEST_CASE("gradcheck: info_nce in q, k+, and negatives") {
  Rand rng(22);
  auto q = randn_leaf({5}, rng);
  auto kp = randn_leaf({5}, rng);
  auto n1 = randn_leaf({5}, rng);
  auto n2 = randn_leaf({5}, rng);
  gradcheck([&] { return info_nce<double>(q, kp, {n1, n2}, InfoNCEConfig{0.07}); },
            {q, kp, n1, n2}, 20);
}

TEST_CASE("adversarial losses: analytic values and scalar-loop oracle") {
  // Perfect discriminator: loss 0 (within the clamp epsilon).
  {
    auto real = constant<double>(Tensor<double>::full({1, 2, 2}, 1.0));
    auto fake = constant<double>(Tensor<double>::full({1, 2, 2}, 0.0));
    CHECK(std::abs(adversarial_loss_d<double>(real, fake)->val[0]) < 1e-6);
  }
  // Coin flip: 2 ln 2.
  {
    auto half = constant<double>(Tensor<double>::full({1, 3, 3}, 0.5));
    CHECK(std::abs(adversarial_loss_d<double>(half, half)->val[0] - 2 * std::log(2.0)) < 1e-6);
    CHECK(std::abs(adversarial_loss_g<double>(half)->val[0] - std::log(2.0)) < 1e-6);
  }
  {
    auto one = constant<double>(Tensor<double>::full({1, 2, 2}, 1.0));
    CHECK(std::abs(adversarial_loss_g<double>(one)->val[0]) < 1e-6);
  }

  // Random maps vs a scalar loop.
  Rand rng(23);
  auto real = constant<double>(Tensor<double>::rand_uniform({1, 4, 5}, rng, 0.05, 0.95));
  auto fake = constant<double>(Tensor<double>::rand_uniform({1, 4, 5}, rng, 0.05, 0.95));
  double expect = 0;
  for (int64_t i = 0; i < real->val.numel(); ++i) expect -= std::log(real->val[i]) / 20.0;
  for (int64_t i = 0; i < fake->val.numel(); ++i) expect -= std::log(1 - fake->val[i]) / 20.0;
  CHECK(adversarial_loss_d<double>(real, fake)->val[0] == doctest::Approx(expect).epsilon(1e-9));

  // Swapped arguments equal the label-flipped discriminator.
  auto flip = [](const Var<double>& v) {
    Tensor<double> t(v->val.dims());
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0 - v->val[i];
    return constant<double>(t);
  };
  CHECK(adversarial_loss_d<double>(fake, real)->val[0] ==
        doctest::Approx(adversarial_loss_d<double>(flip(real), flip(fake))->val[0])
            .epsilon(1e-12));

  // Out-of-range scores are clamped and counted.
  int warnings = 0;
  auto hot = constant<double>(Tensor<double>::full({1, 2, 2}, 1.5));
  adversarial_loss_d<double>(hot, fake, &warnings);
  CHECK(warnings == 4);
}

TEST_CASE("gradcheck: generator adversarial loss through a 1-layer discriminator") {
  Rand rng(24);
  auto y = randn_leaf({3, 6, 6}, rng, 0.5);
  auto w = randn_leaf({1, 3, 3, 3}, rng, 0.3);
  auto b = randn_leaf({1}, rng, 0.1);
  gradcheck(
      [&] {
        auto scores = sigmoid_act(conv2d<double>(y, w, b, ConvSpec::same(3, 1, 1)));
        return adversarial_loss_g<double>(scores);
      },
      {y, w, b}, 20);
  gradcheck(
      [&] {
        auto scores = sigmoid_act(conv2d<double>(y, w, b, ConvSpec::same(3, 1, 1)));
        auto real = constant<double>(Tensor<double>::full({1, 6, 6}, 0.8));
        return adversarial_loss_d<double>(real, scores);
      },
      {w, b}, 20);
}

TEST_CASE("saliency loss: analytic values and per-pixel oracle") {
  // m == k at the clamped 0/1 limits: epsilon-level loss.
  {
    Tensor<double> k({1, 2, 2});
    k[0] = 1;
    k[1] = 0;
    k[2] = 1;
    k[3] = 0;
    Tensor<double> m = k;
    auto loss = saliency_loss<double>(constant<double>(m), k);
    CHECK(loss->val[0] < 1e-6);
    CHECK(loss->val[0] >= 0.0);
  }
  // m = 0.5 everywhere: ln 2.
  {
    Tensor<double> k({1, 3, 3});
    for (int64_t i = 0; i < 9; ++i) k[i] = i % 2 ? 1.0 : 0.0;
    auto m = constant<double>(Tensor<double>::full({1, 3, 3}, 0.5));
    CHECK(std::abs(saliency_loss<double>(m, k)->val[0] - std::log(2.0)) < 1e-6);
  }
  // Random 4x4 against the brute-force pixel loop.
  {
    Rand rng(25);
    Tensor<double> k({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) k[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Tensor<double> m = Tensor<double>::rand_uniform({1, 4, 4}, rng, 0.02, 0.98);
    double expect = 0;
    for (int64_t i = 0; i < 16; ++i)
      expect -= (k[i] * std::log(m[i]) + (1 - k[i]) * std::log(1 - m[i])) / 16.0;
    CHECK(saliency_loss<double>(constant<double>(m), k)->val[0] ==
          doctest::Approx(expect).epsilon(1e-7));
  }
  // Shape mismatch and non-binary mask.
  {
    Tensor<double> k({1, 2, 2});
    auto m = constant<double>(Tensor<double>::full({1, 3, 2}, 0.5));
    CHECK_THROWS_AS(saliency_loss<double>(m, k), ShapeError);
    Tensor<double> bad = Tensor<double>::full({1, 3, 2}, 0.3);
    CHECK_THROWS_AS(saliency_loss<double>(m, bad), InvariantError);
  }
}

TEST_CASE("gradcheck: saliency loss") {
  Rand rng(26);
  Tensor<double> k({1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) k[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  auto m_logits = randn_leaf({1, 4, 4}, rng);
  gradcheck([&] { return saliency_loss<double>(sigmoid_act(m_logits), k); }, {m_logits}, 20);
}

TEST_CASE("patch_nce: hand-computed two-location case with identity heads") {
  // Stage features with 2 spatial locations and 2 channels; identity MLPs
  // (fc1 = fc2 = I, zero bias) turn per-location features into normalized
  // embeddings we can hand-evaluate.
  GeneratorConfig cfg;
  cfg.embed_dim = 2;

  ParamStore<double> heads;
  auto eye = [] {
    Tensor<double> w({2, 2});
    w.at2(0, 0) = 1;
    w.at2(1, 1) = 1;
    return w;
  };
  for (int s = 1; s <= 5; ++s) {
    std::string p = "heads.patch.s" + std::to_string(s);
    heads.create(p + ".fc1.w", eye());
    heads.create(p + ".fc1.b", Tensor<double>::zeros({2}));
    heads.create(p + ".fc2.w", eye());
    heads.create(p + ".fc2.b", Tensor<double>::zeros({2}));
  }

  // Features chosen positive so the ReLU between the linears passes through.
  Tensor<double> fx({2, 1, 2});  // locations (0,0) and (0,1)
  fx.at3(0, 0, 0) = 1.0;
  fx.at3(1, 0, 0) = 0.2;
  fx.at3(0, 0, 1) = 0.3;
  fx.at3(1, 0, 1) = 1.0;
  Tensor<double> fy({2, 1, 2});
  fy.at3(0, 0, 0) = 0.9;
  fy.at3(1, 0, 0) = 0.4;
  fy.at3(0, 0, 1) = 0.1;
  fy.at3(1, 0, 1) = 0.8;

  EncodeOut<double> ex, ey;
  for (int s = 0; s < 5; ++s) {
    ex.patch_stages.push_back(constant<double>(fx));
    ey.patch_stages.push_back(constant<double>(fy));
  }

  PatchNCEConfig pcfg;
  pcfg.nce.tau = 0.5;
  pcfg.locations_per_stage = 2;
  Rand draw(3);
  double got = patch_nce_loss<double>(ex, ey, heads, pcfg, draw)->val[0];

  // Hand evaluation: normalize each location's 2-vector, all (q_i, k_j)
  // logits, InfoNCE per location with the other location as the negative.
  auto norm2 = [](double a, double b) {
    double n = std::sqrt(a * a + b * b);
    return std::pair<double, double>{a / n, b / n};
  };
  auto [qx0, qy0] = norm2(0.9, 0.4);
  auto [qx1, qy1] = norm2(0.1, 0.8);
  auto [kx0, ky0] = norm2(1.0, 0.2);
  auto [kx1, ky1] = norm2(0.3, 1.0);
  double l00 = (qx0 * kx0 + qy0 * ky0) / 0.5, l01 = (qx0 * kx1 + qy0 * ky1) / 0.5;
  double l10 = (qx1 * kx0 + qy1 * ky0) / 0.5, l11 = (qx1 * kx1 + qy1 * ky1) / 0.5;
  double loss0 = -l00 + std::log(std::exp(l00) + std::exp(l01));
  double loss1 = -l11 + std::log(std::exp(l10) + std::exp(l11));
  double expect = 0.5 * (loss0 + loss1);  // same value at every stage
  CHECK(got == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("patch_nce: matched translation scores below a shuffled one; loss nonnegative") {
  GeneratorConfig cfg;
  cfg.n_content = 3;
  cfg.base_width = 6;
  cfg.num_res_blocks = 2;
  cfg.embed_dim = 8;
  ParamStore<float> ps;
  Rand r1(derive_seed(5, "enc"));
  init_encoder(ps, cfg, r1);
  Rand r2(derive_seed(5, "heads"));
  init_patch_heads(ps, cfg, r2);

  Rand rng(27);
  TensorF img = Tensor<float>::rand_uniform({3, 16, 16}, rng, -1.0f, 1.0f);
  TensorF shuffled({3, 16, 16});
  auto perm = rng.permutation(16 * 16);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 256; ++i)
      shuffled[c * 256 + i] = img[c * 256 + perm[static_cast<size_t>(i)]];

  PatchNCEConfig pcfg;
  pcfg.locations_per_stage = 64;
  auto ex = encode(constant<float>(img), ps, cfg);

  Rand d1(17);
  auto ey_same = encode(constant<float>(img), ps, cfg);
  double matched = patch_nce_loss<float>(ex, ey_same, ps, pcfg, d1)->val[0];
  Rand d2(17);
  auto ey_shuf = encode(constant<float>(shuffled), ps, cfg);
  double scrambled = patch_nce_loss<float>(ex, ey_shuf, ps, pcfg, d2)->val[0];

  CHECK(matched >= 0.0);
  CHECK(scrambled >= 0.0);
  CHECK(matched < scrambled);

  // Fewer than 2 locations at a stage is a configuration error.
  EncodeOut<float> tiny_x, tiny_y;
  tiny_x.patch_stages.push_back(constant<float>(Tensor<float>::full({6, 1, 1}, 0.5f)));
  tiny_y.patch_stages.push_back(constant<float>(Tensor<float>::full({6, 1, 1}, 0.5f)));
  Rand d3(1);
  CHECK_THROWS_AS(patch_nce_loss<float>(tiny_x, tiny_y, ps, pcfg, d3), ConfigError);
}

TEST_CASE("gradcheck: patch_nce through encoder and heads") {
  GeneratorConfig cfg;
  cfg.n_content = 2;
  cfg.base_width = 4;
  cfg.num_res_blocks = 1;
  cfg.embed_dim = 4;
  ParamStore<double> ps;
  Rand r1(derive_seed(6, "enc"));
  init_encoder(ps, cfg, r1);
  Rand r2(derive_seed(6, "heads"));
  init_patch_heads(ps, cfg, r2);

  Rand rng(28);
  Tensor<double> img_x = Tensor<double>::rand_uniform({3, 8, 8}, rng, -0.9, 0.9);
  Tensor<double> img_y = Tensor<double>::rand_uniform({3, 8, 8}, rng, -0.9, 0.9);
  PatchNCEConfig pcfg;
  pcfg.locations_per_stage = 4;

  auto xv = constant<double>(img_x);
  auto yv = constant<double>(img_y);
  gradcheck(
      [&] {
        Rand draw(55);
        auto ex = encode(xv, ps, cfg);
        auto ey = encode(yv, ps, cfg);
        return patch_nce_loss<double>(ex, ey, ps, pcfg, draw);
      },
      {ps.at("enc.conv1.w"), ps.at("heads.patch.s1.fc1.w"), ps.at("heads.patch.s3.fc2.w")}, 12);
}

TEST_CASE("generator_objective: modes, sums, and component validation") {
  auto scalar = [](double v) { return constant<double>(Tensor<double>::scalar(v)); };

  std::map<std::string, Var<double>> unsup = {
      {"adv_g", scalar(0.5)}, {"nce_patch", scalar(0.3)}, {"l_ga", scalar(0.2)}};
  auto res = generator_objective(unsup, ObjectiveMode::kUnsupervised);
  CHECK(res.report.total == doctest::Approx(1.0));
  CHECK(res.total->val[0] == doctest::Approx(1.0));

  // no_ga must reject a passed l_ga, not silently drop it.
  std::map<std::string, Var<double>> no_ga_extra = {
      {"adv_g", scalar(0.5)}, {"nce_patch", scalar(0.3)}, {"l_ga", scalar(0.2)}};
  CHECK_THROWS_AS(generator_objective(no_ga_extra, ObjectiveMode::kNoGa), ConfigError);

  // Missing required component.
  std::map<std::string, Var<double>> missing = {{"adv_g", scalar(0.5)}};
  CHECK_THROWS_AS(generator_objective(missing, ObjectiveMode::kUnsupervised), ConfigError);

  // Supervised vs unsupervised differ by (saliency - l_ga) on shared parts.
  std::map<std::string, Var<double>> sup = {
      {"adv_g", scalar(0.5)}, {"nce_patch", scalar(0.3)}, {"saliency", scalar(0.45)}};
  auto res_sup = generator_objective(sup, ObjectiveMode::kSupervised);
  CHECK(res_sup.report.total - res.report.total == doctest::Approx(0.45 - 0.2));

  // Absent components are absent, never zero.
  std::map<std::string, Var<double>> no_ga = {{"adv_g", scalar(0.5)}, {"nce_patch", scalar(0.3)}};
  auto res_ng = generator_objective(no_ga, ObjectiveMode::kNoGa);
  CHECK(!res_ng.report.has("l_ga"));
  CHECK(!res_ng.report.has("saliency"));

  // Weights scale components.
  ObjectiveWeights w;
  w.adv = 2.0;
  auto res_w = generator_objective(no_ga, ObjectiveMode::kNoGa, w);
  CHECK(res_w.report.total == doctest::Approx(2.0 * 0.5 + 0.3));

  // Non-finite components are named.
  std::map<std::string, Var<double>> bad = {
      {"adv_g", scalar(std::numeric_limits<double>::quiet_NaN())}, {"nce_patch", scalar(0.3)}};
  try {
    generator_objective(bad, ObjectiveMode::kNoGa);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(std::string(e.what()).find("adv_g") != std::string::npos);
  }

  // no_attention uses the same component set as no_ga.
  auto res_na = generator_objective(no_ga, ObjectiveMode::kNoAttention);
  CHECK(res_na.report.total == doctest::Approx(0.8));
}
