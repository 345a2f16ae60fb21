#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include "lgt/local_global.hpp"

using namespace lgt;

namespace {

GeneratorConfig tiny_cfg() {
  GeneratorConfig cfg;
  cfg.n_content = 2;
  cfg.base_width = 4;
  cfg.num_res_blocks = 1;
  cfg.embed_dim = 6;
  return cfg;
}

template <typename T>
ParamStore<T> lg_params(const GeneratorConfig& cfg, uint64_t seed, bool requires_grad) {
  ParamStore<T> ps;
  Rand r1(derive_seed(seed, "enc"));
  init_encoder(ps, cfg, r1, requires_grad);
  Rand r2(derive_seed(seed, "ga"));
  init_attention_generator(ps, cfg, r2, requires_grad);
  Rand r3(derive_seed(seed, "lg"));
  init_lg_heads(ps, cfg, r3, requires_grad);
  return ps;
}

Tensor<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  Tensor<double> t({static_cast<int64_t>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i] / n;
  return t;
}

// Plain-double InfoNCE (independent of the autodiff path).
double scalar_nce(const std::vector<double>& q, const std::vector<double>& kpos,
                  const std::vector<std::vector<double>>& negs, double tau) {
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double pos = dot(q, kpos) / tau;
  double mx = pos;
  std::vector<double> nl;
  for (const auto& n : negs) {
    nl.push_back(dot(q, n) / tau);
    mx = std::max(mx, nl.back());
  }
  double z = std::exp(pos - mx);
  for (double l : nl) z += std::exp(l - mx);
  return -(pos - mx) + std::log(z);
}

std::vector<double> to_vec(const Tensor<double>& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

uint64_t store_fingerprint(const ParamStore<float>& ps) {
  uint64_t h = 0x1;
  for (const auto& p : ps.paths()) {
    const auto& t = ps.at(p)->val;
    for (int64_t i = 0; i < t.numel(); ++i) {
      uint32_t b;
      float v = t[i];
      std::memcpy(&b, &v, sizeof(b));
      h = splitmix64(h ^ b);
    }
  }
  return h;
}

}  // namespace

TEST_CASE("ema_update: endpoint coefficients and midpoint arithmetic") {
  ParamStore<float> online, mom;
  online.create("w", Tensor<float>::full({2}, 1.0f));
  mom.create("w", Tensor<float>::zeros({2}), false);

  MomentumPair<float> pair{&online, &mom, 0.5};
  ema_update(pair);
  CHECK(mom.at("w")->val[0] == 0.5f);

  pair.m_coeff = 1.0;
  ema_update(pair);
  CHECK(mom.at("w")->val[0] == 0.5f);  // unchanged

  pair.m_coeff = 0.0;
  ema_update(pair);
  CHECK(mom.at("w")->val[0] == 1.0f);  // copy of online

  ParamStore<float> wrong;
  wrong.create("w", Tensor<float>::zeros({3}), false);
  MomentumPair<float> bad{&online, &wrong, 0.5};
  CHECK_THROWS_AS(ema_update(bad), ConfigError);
}

TEST_CASE("ema_update: exact geometric decay over 20 steps with online frozen") {
  ParamStore<float> online, mom;
  online.create("w", Tensor<float>::full({4}, 2.0f));
  mom.create("w", Tensor<float>::full({4}, -1.0f), false);
  const float m = 0.9f;
  MomentumPair<float> pair{&online, &mom, m};

  float expected = -1.0f;
  float prev_diff = std::abs(expected - 2.0f);
  for (int step = 0; step < 20; ++step) {
    ema_update(pair);
    expected = m * expected + (1.0f - m) * 2.0f;  // identical op sequence: bitwise equal
    for (int64_t i = 0; i < 4; ++i) CHECK(mom.at("w")->val[i] == expected);
    float diff = std::abs(mom.at("w")->val[0] - 2.0f);
    CHECK(diff == doctest::Approx(m * prev_diff).epsilon(1e-5));  // geometric decay
    prev_diff = diff;
  }
}

TEST_CASE("memory bank: FIFO semantics and replay oracle") {
  MemoryBank<double> bank(3);
  auto key = [](double a) { return unit({a, 1.0}); };
  CHECK(bank.empty());
  CHECK(!bank.negatives(5).has_value());  // warmup signal, not a crash

  for (double v : {1.0, 2.0, 3.0, 4.0}) bank.enqueue(key(v));
  REQUIRE(bank.size() == 3);
  auto negs = *bank.negatives(10);
  REQUIRE(negs.size() == 3);  // bank of 3, asked for 10
  CHECK(negs[0][0] == key(2.0)[0]);
  CHECK(negs[1][0] == key(3.0)[0]);
  CHECK(negs[2][0] == key(4.0)[0]);

  // Non-normalized keys are invariant violations.
  Tensor<double> off({2});
  off[0] = 1.0;
  off[1] = 0.1;
  CHECK_THROWS_AS(bank.enqueue(off), InvariantError);

  // 1000-operation replay against a simple reference deque.
  MemoryBank<double> big(37);
  std::vector<Tensor<double>> ref;
  Rand rng(31);
  for (int i = 0; i < 1000; ++i) {
    auto k = unit({rng.normal(), rng.normal(), rng.normal()});
    big.enqueue(k);
    ref.push_back(k);
    if (ref.size() > 37) ref.erase(ref.begin());
  }
  REQUIRE(big.size() == 37);
  auto all = *big.negatives(37);
  for (size_t i = 0; i < 37; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(all[i][j] == ref[i][j]);

  // Requesting fewer returns the most recent keys in order.
  auto last5 = *big.negatives(5);
  for (size_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(last5[i][j] == ref[32 + i][j]);
}

TEST_CASE("stage loss matches an independent scalar re-implementation") {
  // 2 patches per view keeps the hand computation tractable; the pairing
  // structure is identical at 16.
  const double tau = 0.25;
  std::vector<Tensor<double>> og = {unit({1, 0, 0}), unit({0, 1, 0})};           // online globals
  std::vector<std::vector<Tensor<double>>> op = {{unit({1, 1, 0}), unit({0, 1, 1})},
                                                 {unit({1, 0, 1}), unit({1, -1, 0})}};
  std::vector<Tensor<double>> mg = {unit({0.9, 0.1, 0}), unit({0.1, 0.9, 0})};   // momentum
  std::vector<std::vector<Tensor<double>>> mp = {{unit({1, 0.8, 0}), unit({0, 1, 0.8})},
                                                 {unit({0.8, 0, 1}), unit({1, -0.8, 0})}};
  std::vector<Tensor<double>> gneg = {unit({0, 0, 1}), unit({-1, 0, 0})};
  std::vector<Tensor<double>> lneg = {unit({0, -1, 0})};

  LgStageData<double> d;
  d.online_global_v1 = constant<double>(og[0]);
  d.online_global_v2 = constant<double>(og[1]);
  d.online_patches_v1 = {constant<double>(op[0][0]), constant<double>(op[0][1])};
  d.online_patches_v2 = {constant<double>(op[1][0]), constant<double>(op[1][1])};
  d.momentum_global_v1 = mg[0];
  d.momentum_global_v2 = mg[1];
  d.momentum_patches_v1 = mp[0];
  d.momentum_patches_v2 = mp[1];
  Tensor<double> gn({2, 3}), ln({1, 3});
  for (int i = 0; i < 2; ++i) std::copy_n(gneg[static_cast<size_t>(i)].data(), 3, gn.data() + 3 * i);
  std::copy_n(lneg[0].data(), 3, ln.data());
  d.global_negatives = gn;
  d.local_negatives = ln;

  double got = local_global_stage_loss(d, tau)->val[0];

  // Oracle in plain doubles.
  std::vector<std::vector<double>> GN = {to_vec(gneg[0]), to_vec(gneg[1])};
  std::vector<std::vector<double>> LN = {to_vec(lneg[0])};
  double gg = 0.5 * (scalar_nce(to_vec(og[0]), to_vec(mg[1]), GN, tau) +
                     scalar_nce(to_vec(og[1]), to_vec(mg[0]), GN, tau));
  double gl = 0.25 * (scalar_nce(to_vec(op[0][0]), to_vec(mg[1]), GN, tau) +
                      scalar_nce(to_vec(op[0][1]), to_vec(mg[1]), GN, tau) +
                      scalar_nce(to_vec(op[1][0]), to_vec(mg[0]), GN, tau) +
                      scalar_nce(to_vec(op[1][1]), to_vec(mg[0]), GN, tau));
  double ll = 0.25 * (scalar_nce(to_vec(op[0][0]), to_vec(mp[1][0]), LN, tau) +
                      scalar_nce(to_vec(op[0][1]), to_vec(mp[1][1]), LN, tau) +
                      scalar_nce(to_vec(op[1][0]), to_vec(mp[0][0]), LN, tau) +
                      scalar_nce(to_vec(op[1][1]), to_vec(mp[0][1]), LN, tau));
  CHECK(got == doctest::Approx(gg + gl + ll).epsilon(1e-10));
}

TEST_CASE("local_global_loss: warmup, zero weights, determinism, state effects") {
  auto cfg = tiny_cfg();
  auto online = lg_params<float>(cfg, 3, true);
  auto momentum = lg_params<float>(cfg, 4, false);
  auto banks = BankSet<float>::make(cfg.num_stages, 8);

  Rand img_rng(32);
  TensorF img = Tensor<float>::rand_uniform({3, 16, 16}, img_rng, -1.0f, 1.0f);
  AugmentationConfig aug = AugmentationConfig::identity();
  aug.flip_prob = 0.5;
  LocalGlobalConfig lg;
  lg.bank_capacity = 8;

  // First call: warmup (banks empty) -> zero loss, keys enqueued.
  const uint64_t fp_online = store_fingerprint(online);
  const uint64_t fp_mom = store_fingerprint(momentum);
  Rand d1(7);
  auto r1 = local_global_loss<float>(img, online, momentum, banks, cfg, lg, aug, d1);
  CHECK(r1.warmup);
  CHECK(r1.loss->val[0] == 0.0f);
  CHECK(!banks.any_empty());
  for (const auto& b : banks.global_banks) CHECK(b.size() == 2);
  for (const auto& b : banks.local_banks) CHECK(b.size() == 2);

  // Second call: positive finite loss; only banks mutate.
  Rand d2(8);
  auto r2 = local_global_loss<float>(img, online, momentum, banks, cfg, lg, aug, d2);
  CHECK(!r2.warmup);
  CHECK(r2.loss->val[0] > 0.0f);
  CHECK(std::isfinite(r2.loss->val[0]));
  CHECK(store_fingerprint(online) == fp_online);
  CHECK(store_fingerprint(momentum) == fp_mom);
  CHECK(banks.global_banks[0].size() == 4);

  // Determinism: same params, image, draw, and bank state -> same bits.
  auto banks_a = banks, banks_b = banks;
  Rand da(9), db(9);
  auto ra = local_global_loss<float>(img, online, momentum, banks_a, cfg, lg, aug, da);
  auto rb = local_global_loss<float>(img, online, momentum, banks_b, cfg, lg, aug, db);
  CHECK(ra.loss->val[0] == rb.loss->val[0]);

  // All-zero stage weights force an exactly zero loss.
  LocalGlobalConfig zero = lg;
  zero.stage_weights = {0, 0, 0, 0};
  auto banks_c = banks;
  Rand dc(10);
  auto rc = local_global_loss<float>(img, online, momentum, banks_c, cfg, lg, aug, dc);
  Rand dc2(10);
  auto banks_d = banks;
  auto rz = local_global_loss<float>(img, online, momentum, banks_d, cfg, zero, aug, dc2);
  CHECK(rz.loss->val[0] == 0.0f);
  CHECK(rc.loss->val[0] != 0.0f);

  // Permuting the stage weights changes the loss when per-stage terms differ.
  LocalGlobalConfig permuted = lg;
  permuted.stage_weights = {1.0, 1.0, 1.0, 1.0};  // validation requires nondecreasing
  auto banks_e = banks;
  Rand de(10);
  auto rp = local_global_loss<float>(img, online, momentum, banks_e, cfg, permuted, aug, de);
  CHECK(rp.loss->val[0] != rc.loss->val[0]);

  // Decreasing weights violate the config invariant.
  LocalGlobalConfig bad = lg;
  bad.stage_weights = {1.0, 0.7, 0.4, 0.1};
  auto banks_f = banks;
  Rand df(11);
  CHECK_THROWS_AS(
      local_global_loss<float>(img, online, momentum, banks_f, cfg, bad, aug, df), ConfigError);
}

namespace {

// Non-trivial augmentations keep views and bank keys distinct so the
// contrastive terms do not collapse to their saturation constants.
AugmentationConfig active_aug() {
  AugmentationConfig aug = AugmentationConfig::identity();
  aug.flip_prob = 0.5;
  aug.brightness = 0.3;
  aug.contrast = 0.3;
  return aug;
}

}  // namespace

TEST_CASE("no gradient flows from momentum or bank paths") {
  auto cfg = tiny_cfg();
  auto online = lg_params<double>(cfg, 5, true);
  auto momentum = lg_params<double>(cfg, 6, false);
  auto banks = BankSet<double>::make(cfg.num_stages, 8);

  Rand img_rng(33);
  TensorF img = Tensor<float>::rand_uniform({3, 32, 32}, img_rng, -1.0f, 1.0f);
  TensorF other = Tensor<float>::rand_uniform({3, 32, 32}, img_rng, -1.0f, 1.0f);
  AugmentationConfig aug = active_aug();
  LocalGlobalConfig lg;
  lg.bank_capacity = 8;

  Rand d1(1);
  local_global_loss<double>(other, online, momentum, banks, cfg, lg, aug, d1);  // warmup
  Rand d2(2);
  auto r = local_global_loss<double>(img, online, momentum, banks, cfg, lg, aug, d2);
  backward(r.loss);

  // Momentum parameters: requires_grad false, grads never allocated
  // (probe norm is exactly zero by construction).
  for (const auto& p : momentum.paths()) {
    CHECK(momentum.at(p)->grad.numel() == 0);
    CHECK(!momentum.at(p)->requires_grad);
  }

  // Online parameters do receive real gradient.
  double online_norm = 0;
  for (const auto& p : online.paths()) {
    const auto& g = online.at(p)->grad;
    for (int64_t i = 0; i < g.numel(); ++i) online_norm += g[i] * g[i];
  }
  CHECK(std::sqrt(online_norm) > 1e-6);
}

TEST_CASE("gradcheck: local-global loss wrt online parameters (float64)") {
  auto cfg = tiny_cfg();
  auto online = lg_params<double>(cfg, 7, true);
  auto momentum = lg_params<double>(cfg, 8, false);
  auto banks = BankSet<double>::make(cfg.num_stages, 4);

  Rand img_rng(34);
  // 16x16 patches keep the per-patch instance-norm maps at 4x4; smaller
  // maps make the normalization curvature too sharp for finite differences.
  TensorF img = Tensor<float>::rand_uniform({3, 64, 64}, img_rng, -1.0f, 1.0f);
  TensorF other = Tensor<float>::rand_uniform({3, 64, 64}, img_rng, -1.0f, 1.0f);
  AugmentationConfig aug = active_aug();
  LocalGlobalConfig lg;
  lg.bank_capacity = 4;
  lg.tau = 0.5;  // moderate temperature keeps the softmax away from saturation

  Rand warm(3);
  local_global_loss<double>(other, online, momentum, banks, cfg, lg, aug, warm);

  lgt_test::gradcheck(
      [&] {
        auto banks_copy = banks;
        Rand draw(4);
        return local_global_loss<double>(img, online, momentum, banks_copy, cfg, lg, aug, draw)
            .loss;
      },
      {online.at("ga.up1.w"), online.at("heads.lg.global.s2.fc1.w"),
       online.at("heads.lg.local.s4.fc2.w"), online.at("enc.conv1.w")},
      10, 1e-3, 1e-6);
}
