#pragma once

#include <array>
#include <string>
#include <vector>

#include "lgt/nn.hpp"

namespace lgt {

// Generator stack configuration. Stage channel lists are derived from
// base_width; the content trunk is grouped per content map, so its per-group
// widths are the nearest integers to 2*width/n and width/n.
struct GeneratorConfig {
  int n_content = 9;
  int base_width = 64;
  int num_res_blocks = 9;
  int num_stages = 4;  // attention stages feeding the local-global heads
  int embed_dim = 128;

  int n_masks() const { return n_content + 1; }
  int enc_out_channels() const { return 4 * base_width; }
  int content_group_mid1() const {
    return std::max(1, static_cast<int>(std::lround(2.0 * base_width / n_content)));
  }
  int content_group_mid2() const {
    return std::max(1, static_cast<int>(std::lround(1.0 * base_width / n_content)));
  }

  void validate() const {
    check_config(n_content >= 1, "n_content must be >= 1");
    check_config(base_width >= 2, "base_width must be >= 2");
    check_config(num_res_blocks >= 1, "num_res_blocks must be >= 1");
    check_config(num_stages == 4, "the attention generator exposes exactly 4 stages");
    check_config(embed_dim >= 2, "embed_dim must be >= 2");
  }

  // Encoder taps used by the patchwise consistency loss: conv1, conv3 and
  // three residual-block depths.
  std::array<int, 5> patch_stage_channels() const {
    const int c = enc_out_channels();
    return {base_width, c, c, c, c};
  }
  // Attention stages: encoder output entering G_A, two upsampling
  // activations, pre-softmax logits.
  std::array<int, 4> attention_stage_channels() const {
    return {enc_out_channels(), 2 * base_width, base_width, n_masks()};
  }
};

constexpr double kInstanceNormEps = 1e-5;

template <typename T>
struct EncodeOut {
  Var<T> m_e;                        // [4w, H/4, W/4]
  std::vector<Var<T>> patch_stages;  // 5 taps for the patch consistency loss
};

template <typename T>
struct AttentionOut {
  Var<T> masks;                        // [n+1, H, W], per-pixel softmax
  Var<T> logits;                       // [n+1, H, W], pre-softmax
  std::vector<Var<T>> stage_features;  // 4 stages for the local-global heads
};

template <typename T>
struct TranslateOut {
  Var<T> output;  // [3, H, W]
  Var<T> masks;
  EncodeOut<T> encode;
  AttentionOut<T> attention;
  Var<T> contents;  // [3n, H, W]
};

// ---------------------------------------------------------------------------
// Parameter initialization. Paths: enc.*, gc.*, ga.*, sal.*, disc.*,
// heads.patch.*, heads.lg.{global,local}.*
// ---------------------------------------------------------------------------

template <typename T>
void init_encoder(ParamStore<T>& ps, const GeneratorConfig& cfg, Rand& rng,
                  bool requires_grad = true) {
  const int w = cfg.base_width;
  init_conv(ps, "enc.conv1", {w, 3, 7, 7}, w, rng, requires_grad);
  init_conv(ps, "enc.conv2", {2 * w, w, 3, 3}, 2 * w, rng, requires_grad);
  init_conv(ps, "enc.conv3", {4 * w, 2 * w, 3, 3}, 4 * w, rng, requires_grad);
  for (int i = 1; i <= cfg.num_res_blocks; ++i) {
    std::string name = "enc.res" + std::to_string(i);
    init_conv(ps, name + ".conv1", {4 * w, 4 * w, 3, 3}, 4 * w, rng, requires_grad);
    init_conv(ps, name + ".conv2", {4 * w, 4 * w, 3, 3}, 4 * w, rng, requires_grad);
  }
}

template <typename T>
void init_content_generator(ParamStore<T>& ps, const GeneratorConfig& cfg, Rand& rng) {
  const int n = cfg.n_content;
  const int g1 = cfg.content_group_mid1();
  const int g2 = cfg.content_group_mid2();
  // First layer is dense: every content chain starts from the full encoding.
  init_conv(ps, "gc.up1", {cfg.enc_out_channels(), static_cast<int64_t>(n) * g1, 7, 7},
            static_cast<int64_t>(n) * g1, rng);
  // Remaining layers are grouped per content map: no cross-talk.
  init_conv(ps, "gc.up2", {static_cast<int64_t>(n) * g1, g2, 3, 3},
            static_cast<int64_t>(n) * g2, rng);
  init_conv(ps, "gc.head", {static_cast<int64_t>(n) * 3, g2, 7, 7},
            static_cast<int64_t>(n) * 3, rng);
}

template <typename T>
void init_attention_generator(ParamStore<T>& ps, const GeneratorConfig& cfg, Rand& rng,
                              bool requires_grad = true) {
  const int w = cfg.base_width;
  init_conv(ps, "ga.up1", {4 * w, 2 * w, 7, 7}, 2 * w, rng, requires_grad);
  init_conv(ps, "ga.up2", {2 * w, w, 3, 3}, w, rng, requires_grad);
  init_conv(ps, "ga.head", {cfg.n_masks(), w, 7, 7}, cfg.n_masks(), rng, requires_grad);
}

template <typename T>
void init_saliency_head(ParamStore<T>& ps, const GeneratorConfig& cfg, Rand& rng) {
  init_conv(ps, "sal.conv", {2, cfg.n_masks(), 7, 7}, 2, rng);
}

template <typename T>
void init_patch_heads(ParamStore<T>& ps, const GeneratorConfig& cfg, Rand& rng) {
  auto chans = cfg.patch_stage_channels();
  for (size_t i = 0; i < chans.size(); ++i)
    init_mlp_head(ps, "heads.patch.s" + std::to_string(i + 1), chans[i], cfg.embed_dim,
                  cfg.embed_dim, rng);
}

template <typename T>
void init_lg_heads(ParamStore<T>& ps, const GeneratorConfig& cfg, Rand& rng,
                   bool requires_grad = true) {
  auto chans = cfg.attention_stage_channels();
  for (const char* scope : {"global", "local"})
    for (size_t i = 0; i < chans.size(); ++i)
      init_mlp_head(ps, std::string("heads.lg.") + scope + ".s" + std::to_string(i + 1), chans[i],
                    cfg.embed_dim, cfg.embed_dim, rng, requires_grad);
}

template <typename T>
void init_discriminator(ParamStore<T>& ps, int width, Rand& rng) {
  init_conv(ps, "disc.conv1", {width, 3, 4, 4}, width, rng);
  init_conv(ps, "disc.conv2", {2 * width, width, 4, 4}, 2 * width, rng);
  init_conv(ps, "disc.conv3", {4 * width, 2 * width, 4, 4}, 4 * width, rng);
  init_conv(ps, "disc.conv4", {8 * width, 4 * width, 4, 4}, 8 * width, rng);
  init_conv(ps, "disc.conv5", {1, 8 * width, 4, 4}, 1, rng);
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <typename T>
EncodeOut<T> encode(const Var<T>& x, const ParamStore<T>& ps, const GeneratorConfig& cfg) {
  check_shape(x->val.rank() == 3 && x->val.dim(0) == 3,
              "encode expects a [3,H,W] image, got " + x->val.shape_str());
  if (x->val.dim(1) % 4 != 0)
    throw ShapeError("encode: height " + std::to_string(x->val.dim(1)) +
                     " not divisible by 4");
  if (x->val.dim(2) % 4 != 0)
    throw ShapeError("encode: width " + std::to_string(x->val.dim(2)) + " not divisible by 4");

  const T eps = T(kInstanceNormEps);
  EncodeOut<T> out;
  auto h1 = conv_in_relu(x, ps, "enc.conv1", ConvSpec::same(7, 1, 3, PadMode::kReflect), eps);
  auto h2 = conv_in_relu(h1, ps, "enc.conv2", ConvSpec::same(3, 2, 1), eps);
  auto h3 = conv_in_relu(h2, ps, "enc.conv3", ConvSpec::same(3, 2, 1), eps);

  const int nb = cfg.num_res_blocks;
  const int t1 = std::max(1, static_cast<int>(std::lround(nb / 3.0)));
  const int t2 = std::max(t1, static_cast<int>(std::lround(2.0 * nb / 3.0)));
  Var<T> h = h3;
  std::vector<Var<T>> res_taps;
  for (int i = 1; i <= nb; ++i) {
    std::string name = "enc.res" + std::to_string(i);
    auto r = conv_in_relu(h, ps, name + ".conv1", ConvSpec::same(3, 1, 1), eps);
    auto r2 = instance_norm(
        conv2d(r, ps.at(name + ".conv2.w"), ps.at(name + ".conv2.b"), ConvSpec::same(3, 1, 1)),
        eps);
    h = add(h, r2);
    if (i == t1 || i == t2 || i == nb) res_taps.push_back(h);
  }
  out.m_e = h;
  out.patch_stages = {h1, h3};
  for (auto& t : res_taps) out.patch_stages.push_back(t);
  while (out.patch_stages.size() < 5) out.patch_stages.push_back(h);
  return out;
}

template <typename T>
Var<T> generate_content(const Var<T>& m_e, const ParamStore<T>& ps, const GeneratorConfig& cfg) {
  check_config(ps.at("gc.up1.w")->val.dim(0) == m_e->val.dim(0),
               "generate_content: encoder width does not match content generator parameters");
  const T eps = T(kInstanceNormEps);
  ConvTransposeSpec up7{7, 2, 3, 1, 1};
  ConvTransposeSpec up3g{3, 2, 1, 1, cfg.n_content};
  auto h1 = convt_in_relu(m_e, ps, "gc.up1", up7, eps);
  auto h2 = convt_in_relu(h1, ps, "gc.up2", up3g, eps);
  auto head = conv2d(h2, ps.at("gc.head.w"), ps.at("gc.head.b"),
                     ConvSpec::same(7, 1, 3, PadMode::kReflect, cfg.n_content));
  return tanh_act(head);  // [3n, H, W]
}

template <typename T>
AttentionOut<T> generate_attention(const Var<T>& m_e, const ParamStore<T>& ps,
                                   const GeneratorConfig& cfg) {
  check_config(ps.at("ga.up1.w")->val.dim(0) == m_e->val.dim(0),
               "generate_attention: encoder width does not match attention generator parameters");
  const T eps = T(kInstanceNormEps);
  ConvTransposeSpec up7{7, 2, 3, 1, 1};
  ConvTransposeSpec up3{3, 2, 1, 1, 1};
  AttentionOut<T> out;
  auto h1 = convt_in_relu(m_e, ps, "ga.up1", up7, eps);
  auto h2 = convt_in_relu(h1, ps, "ga.up2", up3, eps);
  out.logits = conv2d(h2, ps.at("ga.head.w"), ps.at("ga.head.b"),
                      ConvSpec::same(7, 1, 3, PadMode::kReflect));
  out.masks = softmax_channel(out.logits);
  out.stage_features = {m_e, h1, h2, out.logits};
  return out;
}

// G(x): masked sum of content maps plus the input-weighted background mask.
template <typename T>
Var<T> compose(const Var<T>& x, const Var<T>& contents, const Var<T>& masks) {
  check_shape(x->val.rank() == 3 && x->val.dim(0) == 3, "compose: x must be [3,H,W]");
  const int64_t h = x->val.dim(1), w = x->val.dim(2);
  check_shape(contents->val.rank() == 3 && contents->val.dim(0) % 3 == 0 &&
                  contents->val.dim(1) == h && contents->val.dim(2) == w,
              "compose: content maps must be [3n,H,W] matching x");
  const int64_t n = contents->val.dim(0) / 3;
  check_shape(masks->val.rank() == 3 && masks->val.dim(0) == n + 1 && masks->val.dim(1) == h &&
                  masks->val.dim(2) == w,
              "compose: masks must be [n+1,H,W]");

  const int64_t hw = h * w;
  for (int64_t i = 0; i < hw; ++i) {
    T sum(0);
    for (int64_t t = 0; t <= n; ++t) {
      T v = masks->val[t * hw + i];
      check_invariant(v >= T(-1e-6), "compose: negative attention mask value");
      sum += v;
    }
    check_invariant(std::abs(static_cast<double>(sum) - 1.0) < 1e-4,
                    "compose: attention masks do not sum to 1");
  }

  Var<T> acc = mul_mask(slice_channels(contents, 0, 3), slice_channels(masks, 0, 1));
  for (int64_t t = 1; t < n; ++t)
    acc = add(acc, mul_mask(slice_channels(contents, 3 * t, 3), slice_channels(masks, t, 1)));
  return add(acc, mul_mask(x, slice_channels(masks, n, 1)));
}

template <typename T>
TranslateOut<T> translate(const Var<T>& x, const ParamStore<T>& ps, const GeneratorConfig& cfg) {
  TranslateOut<T> out;
  out.encode = encode(x, ps, cfg);
  out.contents = generate_content(out.encode.m_e, ps, cfg);
  out.attention = generate_attention(out.encode.m_e, ps, cfg);
  out.masks = out.attention.masks;
  out.output = compose(x, out.contents, out.masks);
  return out;
}

// Foreground probability from the pre-softmax attention logits.
template <typename T>
Var<T> predict_saliency(const Var<T>& logits, const ParamStore<T>& ps) {
  check_shape(logits->val.rank() == 3, "predict_saliency expects [n+1,H,W] logits");
  check_shape(ps.at("sal.conv.w")->val.dim(1) == logits->val.dim(0),
              "predict_saliency: logits channel count does not match saliency filters");
  auto scores = conv2d(logits, ps.at("sal.conv.w"), ps.at("sal.conv.b"),
                       ConvSpec::same(7, 1, 3, PadMode::kReflect));
  auto probs = softmax_channel(scores);  // [2,H,W]
  return slice_channels(probs, 0, 1);    // channel 0 = foreground
}

enum class HeadScope { kLocal, kGlobal };

// Pool each stage feature and push it through that stage's projection head.
// Returns one unit-norm embedding per stage.
template <typename T>
std::vector<Var<T>> project_features(const std::vector<Var<T>>& stage_features,
                                     const ParamStore<T>& ps, HeadScope scope,
                                     const GeneratorConfig& cfg) {
  check_config(static_cast<int>(stage_features.size()) == cfg.num_stages,
               "project_features: expected " + std::to_string(cfg.num_stages) + " stages, got " +
                   std::to_string(stage_features.size()));
  const std::string prefix =
      scope == HeadScope::kGlobal ? "heads.lg.global.s" : "heads.lg.local.s";
  std::vector<Var<T>> out;
  for (size_t i = 0; i < stage_features.size(); ++i) {
    auto pooled = global_avg_pool(stage_features[i]);
    auto emb = mlp_head(pooled, ps, prefix + std::to_string(i + 1));
    out.push_back(l2_normalize(emb));
  }
  return out;
}

// PatchGAN scores through a sigmoid: [1,h',w'] of per-patch probabilities.
template <typename T>
Var<T> discriminate(const Var<T>& x, const ParamStore<T>& ps) {
  const T eps = T(kInstanceNormEps);
  auto h1 = conv_in_relu(x, ps, "disc.conv1", ConvSpec::same(4, 2, 1), eps);
  auto h2 = conv_in_relu(h1, ps, "disc.conv2", ConvSpec::same(4, 2, 1), eps);
  auto h3 = conv_in_relu(h2, ps, "disc.conv3", ConvSpec::same(4, 2, 1), eps);
  auto h4 = conv_in_relu(h3, ps, "disc.conv4", ConvSpec::same(4, 1, 1), eps);
  auto score = conv2d(h4, ps.at("disc.conv5.w"), ps.at("disc.conv5.b"), ConvSpec::same(4, 1, 1));
  return sigmoid_act(score);
}

}  // namespace lgt
