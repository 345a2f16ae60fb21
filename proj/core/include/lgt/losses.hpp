#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lgt/models.hpp"
#include "lgt/rng.hpp"

namespace lgt {

struct InfoNCEConfig {
  double tau = 0.07;
  void validate() const {
    check_config(tau > 0 && std::isfinite(tau), "InfoNCE temperature must be positive and finite");
  }
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;

  bool has(const std::string& name) const { return components.count(name) != 0; }
};

enum class ObjectiveMode { kUnsupervised, kSupervised, kNoGa, kNoAttention };

inline const char* to_string(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::kUnsupervised: return "unsupervised";
    case ObjectiveMode::kSupervised: return "supervised";
    case ObjectiveMode::kNoGa: return "no_ga";
    case ObjectiveMode::kNoAttention: return "no_attention";
  }
  return "?";
}

struct ObjectiveWeights {
  double adv = 1.0;
  double nce = 1.0;
  double ga = 1.0;
  double saliency = 1.0;
};

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

// -log( exp(q.k+ / tau) / (exp(q.k+ / tau) + sum exp(q.k- / tau)) ).
// Empty negative set gives exactly zero.
template <typename T>
Var<T> info_nce(const Var<T>& q, const Var<T>& k_pos, const std::vector<Var<T>>& k_negs,
                const InfoNCEConfig& cfg) {
  cfg.validate();
  check_shape(q->val.rank() == 1 && k_pos->val.rank() == 1, "info_nce expects rank-1 embeddings");
  check_shape(q->val.numel() == k_pos->val.numel(), "info_nce: q/k+ dimension mismatch");
  for (const auto& k : k_negs)
    check_shape(k->val.numel() == q->val.numel(), "info_nce: negative embedding dimension mismatch");

  auto q_row = reshape(q, {1, q->val.numel()});
  auto pos_row = reshape(k_pos, {1, k_pos->val.numel()});
  auto pos = rowwise_dot(q_row, pos_row);  // [1]
  Var<T> negs;
  if (!k_negs.empty()) {
    auto k_mat = stack_rows(k_negs);       // [N,D]
    negs = matmul(q_row, k_mat, false, true);  // [1,N]
  }
  return nce_from_logits(pos, negs, T(cfg.tau));
}

// ---------------------------------------------------------------------------
// Patchwise multi-layer consistency loss
// ---------------------------------------------------------------------------

struct PatchNCEConfig {
  InfoNCEConfig nce;
  int locations_per_stage = 256;
};

// Queries come from the translated image's encoder features, positives from
// the input's features at matching spatial locations, negatives from the
// remaining sampled locations of the same image.
template <typename T>
Var<T> patch_nce_loss(const EncodeOut<T>& feat_x, const EncodeOut<T>& feat_y,
                      const ParamStore<T>& heads, const PatchNCEConfig& cfg, Rand& draw) {
  cfg.nce.validate();
  check_shape(feat_x.patch_stages.size() == feat_y.patch_stages.size(),
              "patch_nce_loss: stage count mismatch");
  Var<T> total;
  const int n_stages = static_cast<int>(feat_x.patch_stages.size());
  for (int s = 0; s < n_stages; ++s) {
    const auto& fx = feat_x.patch_stages[static_cast<size_t>(s)];
    const auto& fy = feat_y.patch_stages[static_cast<size_t>(s)];
    check_shape(fx->val.same_shape(fy->val), "patch_nce_loss: feature shape mismatch at stage " +
                                                 std::to_string(s + 1));
    const int hw = static_cast<int>(fx->val.dim(1) * fx->val.dim(2));
    check_config(hw >= 2, "patch_nce_loss: stage " + std::to_string(s + 1) +
                              " has fewer than 2 spatial locations");
    const int count = std::min(cfg.locations_per_stage, hw);
    auto positions = draw.sample_without_replacement(hw, count);

    const std::string head = "heads.patch.s" + std::to_string(s + 1);
    auto q = l2_normalize(mlp_head(gather_locations(fy, positions), heads, head));
    auto k = l2_normalize(mlp_head(gather_locations(fx, positions), heads, head));
    auto logits = matmul(q, k, false, true);  // [S,S]; positives on the diagonal
    auto stage_loss = nce_from_square_logits(logits, T(cfg.nce.tau));
    total = total ? add(total, stage_loss) : stage_loss;
  }
  return affine(total, T(1.0 / n_stages), T(0));
}

// ---------------------------------------------------------------------------
// Adversarial losses (probability-space patch scores)
// ---------------------------------------------------------------------------

constexpr double kScoreClampEps = 1e-7;

namespace detail_loss {

template <typename T>
Var<T> clamped(const Var<T>& scores, int* clamp_warnings) {
  if (clamp_warnings) {
    for (int64_t i = 0; i < scores->val.numel(); ++i) {
      double v = static_cast<double>(scores->val[i]);
      if (v < kScoreClampEps || v > 1.0 - kScoreClampEps) ++(*clamp_warnings);
    }
  }
  return clamp_op(scores, T(kScoreClampEps), T(1.0 - kScoreClampEps));
}

}  // namespace detail_loss

// -E[log D(y)] - E[log(1 - D(G(x)))], each expectation a mean over its
// patch-score map. The fake scores are expected to come from a detached G(x).
template <typename T>
Var<T> adversarial_loss_d(const Var<T>& real_scores, const Var<T>& fake_scores,
                          int* clamp_warnings = nullptr) {
  auto r = detail_loss::clamped(real_scores, clamp_warnings);
  auto f = detail_loss::clamped(fake_scores, clamp_warnings);
  auto t1 = affine(mean_all(log_op(r)), T(-1), T(0));
  auto t2 = affine(mean_all(log_op(affine(f, T(-1), T(1)))), T(-1), T(0));
  return add(t1, t2);
}

// Non-saturating generator term -E[log D(G(x))]; the saturating form
// E[log(1 - D(G(x)))] stays available for ablation runs.
template <typename T>
Var<T> adversarial_loss_g(const Var<T>& fake_scores, bool saturating = false,
                          int* clamp_warnings = nullptr) {
  auto f = detail_loss::clamped(fake_scores, clamp_warnings);
  if (saturating) return mean_all(log_op(affine(f, T(-1), T(1))));
  return affine(mean_all(log_op(f)), T(-1), T(0));
}

// ---------------------------------------------------------------------------
// Supervised saliency loss
// ---------------------------------------------------------------------------

template <typename T>
Var<T> saliency_loss(const Var<T>& m_x, const Tensor<T>& k_x) {
  check_shape(m_x->val.same_shape(k_x), "saliency_loss: prediction/mask shape mismatch, " +
                                            m_x->val.shape_str() + " vs " + k_x.shape_str());
  for (int64_t i = 0; i < k_x.numel(); ++i)
    check_invariant(k_x[i] == T(0) || k_x[i] == T(1), "saliency_loss: mask must be binary");
  const T eps = T(kScoreClampEps);
  auto m = clamp_op(m_x, eps, T(1) - eps);
  auto k = constant<T>(k_x);
  auto pos = mul(k, log_op(m));
  auto neg = mul(affine(k, T(-1), T(1)), log_op(affine(m, T(-1), T(1))));
  return affine(mean_all(add(pos, neg)), T(-1), T(0));
}

// ---------------------------------------------------------------------------
// Total generator objective
// ---------------------------------------------------------------------------

template <typename T>
struct ObjectiveResult {
  Var<T> total;
  LossReport report;
};

// Weighted sum of the mode's component set. Wrong component sets are
// configuration errors, never silently dropped or zero-filled.
template <typename T>
ObjectiveResult<T> generator_objective(const std::map<std::string, Var<T>>& parts,
                                       ObjectiveMode mode,
                                       const ObjectiveWeights& weights = {}) {
  std::vector<std::string> required = {"adv_g", "nce_patch"};
  if (mode == ObjectiveMode::kUnsupervised) required.push_back("l_ga");
  if (mode == ObjectiveMode::kSupervised) required.push_back("saliency");

  for (const auto& name : required)
    check_config(parts.count(name), std::string("generator_objective: mode ") + to_string(mode) +
                                        " requires component " + name);
  for (const auto& [name, v] : parts) {
    (void)v;
    bool expected = std::find(required.begin(), required.end(), name) != required.end();
    check_config(expected, std::string("generator_objective: component ") + name +
                               " is not part of mode " + to_string(mode));
  }

  auto weight_of = [&weights](const std::string& name) {
    if (name == "adv_g") return weights.adv;
    if (name == "nce_patch") return weights.nce;
    if (name == "l_ga") return weights.ga;
    return weights.saliency;
  };

  ObjectiveResult<T> out;
  for (const auto& name : required) {
    const Var<T>& component = parts.at(name);
    check_shape(component->val.numel() == 1, "objective components must be scalars");
    double value = static_cast<double>(component->val[0]);
    check_invariant(std::isfinite(value), "objective component " + name + " is not finite");
    out.report.components[name] = value;
    auto weighted = affine(component, T(weight_of(name)), T(0));
    out.total = out.total ? add(out.total, weighted) : weighted;
  }
  out.report.total = static_cast<double>(out.total->val[0]);
  return out;
}

}  // namespace lgt
