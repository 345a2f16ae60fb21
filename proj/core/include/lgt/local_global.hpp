#pragma once

#include <array>
#include <deque>
#include <optional>

#include "lgt/data.hpp"
#include "lgt/losses.hpp"
#include "lgt/models.hpp"

namespace lgt {

struct LocalGlobalConfig {
  std::array<double, 4> stage_weights = {0.1, 0.4, 0.7, 1.0};
  double tau = 0.07;
  int bank_capacity = 4096;
  double m_coeff = 0.999;

  void validate() const {
    double prev = 0.0;
    for (double w : stage_weights) {
      check_config(w >= 0.0, "stage weights must be nonnegative");
      check_config(w >= prev, "stage weights must be nondecreasing");
      prev = w;
    }
    check_config(tau > 0 && std::isfinite(tau), "local-global tau must be positive");
    check_config(bank_capacity >= 1, "bank capacity must be >= 1");
    check_config(m_coeff >= 0.0 && m_coeff <= 1.0, "EMA coefficient must be in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// FIFO memory bank of unit-norm key embeddings
// ---------------------------------------------------------------------------

template <typename T>
class MemoryBank {
 public:
  MemoryBank() = default;
  explicit MemoryBank(int64_t capacity) : capacity_(capacity) {
    check_config(capacity >= 1, "memory bank capacity must be >= 1");
  }

  void enqueue(const Tensor<T>& key) {
    check_shape(key.rank() == 1, "bank keys must be rank-1 embeddings");
    if (dim_ < 0) dim_ = key.numel();
    check_shape(key.numel() == dim_, "bank key dimension mismatch");
    double n = 0;
    for (int64_t i = 0; i < key.numel(); ++i) n += static_cast<double>(key[i]) * key[i];
    n = std::sqrt(n);
    check_invariant(std::abs(n - 1.0) <= 1e-3, "bank key is not unit-normalized");
    queue_.push_back(key);
    while (static_cast<int64_t>(queue_.size()) > capacity_) queue_.pop_front();
  }

  // Most recent `count` keys (all of them when count >= size), oldest first.
  // Empty bank is the warmup signal, reported as nullopt.
  std::optional<std::vector<Tensor<T>>> negatives(int64_t count) const {
    if (queue_.empty()) return std::nullopt;
    const int64_t n = std::min<int64_t>(count, static_cast<int64_t>(queue_.size()));
    std::vector<Tensor<T>> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = static_cast<int64_t>(queue_.size()) - n;
         i < static_cast<int64_t>(queue_.size()); ++i)
      out.push_back(queue_[static_cast<size_t>(i)]);
    return out;
  }

  // Stacked [N,D] matrix of the selected negatives.
  std::optional<Tensor<T>> negatives_matrix(int64_t count) const {
    auto keys = negatives(count);
    if (!keys) return std::nullopt;
    Tensor<T> m({static_cast<int64_t>(keys->size()), dim_});
    for (size_t i = 0; i < keys->size(); ++i)
      std::copy_n((*keys)[i].data(), dim_, m.data() + static_cast<int64_t>(i) * dim_);
    return m;
  }

  bool empty() const { return queue_.empty(); }
  int64_t size() const { return static_cast<int64_t>(queue_.size()); }
  int64_t capacity() const { return capacity_; }
  int64_t dim() const { return dim_; }
  const std::deque<Tensor<T>>& entries() const { return queue_; }

  void restore(int64_t capacity, int64_t dim, std::deque<Tensor<T>> entries) {
    capacity_ = capacity;
    dim_ = dim;
    queue_ = std::move(entries);
  }

 private:
  int64_t capacity_ = 1;
  int64_t dim_ = -1;
  std::deque<Tensor<T>> queue_;
};

template <typename T>
std::optional<std::vector<Tensor<T>>> bank_negatives(const MemoryBank<T>& bank, int64_t count) {
  return bank.negatives(count);
}

// One bank per stage and scope.
template <typename T>
struct BankSet {
  std::vector<MemoryBank<T>> global_banks;
  std::vector<MemoryBank<T>> local_banks;

  static BankSet make(int num_stages, int64_t capacity) {
    BankSet b;
    for (int i = 0; i < num_stages; ++i) {
      b.global_banks.emplace_back(capacity);
      b.local_banks.emplace_back(capacity);
    }
    return b;
  }
  bool any_empty() const {
    for (const auto& b : global_banks)
      if (b.empty()) return true;
    for (const auto& b : local_banks)
      if (b.empty()) return true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// Momentum pairing
// ---------------------------------------------------------------------------

// The momentum store mirrors a subset of the online store under identical
// paths; it never receives gradients, only EMA pulls toward the online copy.
template <typename T>
struct MomentumPair {
  ParamStore<T>* online = nullptr;
  ParamStore<T>* momentum = nullptr;
  double m_coeff = 0.999;
};

template <typename T>
void ema_update(MomentumPair<T>& pair) {
  check_config(pair.online && pair.momentum, "ema_update: unset stores");
  const T m = static_cast<T>(pair.m_coeff);
  for (const auto& path : pair.momentum->paths()) {
    check_config(pair.online->has(path), "ema_update: online store missing " + path);
    const Tensor<T>& src = pair.online->at(path)->val;
    Tensor<T>& dst = pair.momentum->at(path)->val;
    check_config(src.same_shape(dst), "ema_update: shape mismatch at " + path);
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] = m * dst[i] + (T(1) - m) * src[i];
  }
}

// ---------------------------------------------------------------------------
// The per-stage pairing (the seam the scalar oracle re-implements)
// ---------------------------------------------------------------------------

template <typename T>
struct LgStageData {
  // Online path, differentiable. Patches are in pre-shuffle cell order.
  Var<T> online_global_v1, online_global_v2;
  std::vector<Var<T>> online_patches_v1, online_patches_v2;
  // Momentum path and negatives, plain tensors (never receive gradient).
  Tensor<T> momentum_global_v1, momentum_global_v2;
  std::vector<Tensor<T>> momentum_patches_v1, momentum_patches_v2;
  Tensor<T> global_negatives;  // [Ng,D]
  Tensor<T> local_negatives;   // [Nl,D]
};

namespace detail_lg {

template <typename T>
Tensor<T> rows_from(const std::vector<Tensor<T>>& rows) {
  const int64_t d = rows.at(0).numel();
  Tensor<T> m({static_cast<int64_t>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(rows[i].data(), d, m.data() + static_cast<int64_t>(i) * d);
  return m;
}

}  // namespace detail_lg

// Three terms, each the mean InfoNCE over its queries:
//   g<->g : online global of one view vs momentum global of the other;
//   g<->l : each online patch vs the momentum global of the other view;
//   l<->l : each online patch vs the momentum patch at the same cell of the
//           other view.
// Negatives come from the matching-scope bank of the positive key.
template <typename T>
Var<T> local_global_stage_loss(const LgStageData<T>& d, double tau) {
  const size_t p = d.online_patches_v1.size();
  check_shape(p == d.online_patches_v2.size() && p == d.momentum_patches_v1.size() &&
                  p == d.momentum_patches_v2.size(),
              "local_global_stage_loss: patch count mismatch");
  auto g_negs = constant<T>(d.global_negatives);
  auto l_negs = constant<T>(d.local_negatives);

  // g<->g
  auto q_gg = stack_rows<T>({d.online_global_v1, d.online_global_v2});
  auto k_gg = constant<T>(detail_lg::rows_from<T>({d.momentum_global_v2, d.momentum_global_v1}));
  auto gg = nce_from_logits(rowwise_dot(q_gg, k_gg), matmul(q_gg, g_negs, false, true), T(tau));

  // g<->l and l<->l share the query matrix (all 32 online patches).
  std::vector<Var<T>> all_patches;
  all_patches.reserve(2 * p);
  for (const auto& v : d.online_patches_v1) all_patches.push_back(v);
  for (const auto& v : d.online_patches_v2) all_patches.push_back(v);
  auto q_l = stack_rows<T>(all_patches);

  std::vector<Tensor<T>> gl_pos;
  gl_pos.reserve(2 * p);
  for (size_t i = 0; i < p; ++i) gl_pos.push_back(d.momentum_global_v2);
  for (size_t i = 0; i < p; ++i) gl_pos.push_back(d.momentum_global_v1);
  auto gl = nce_from_logits(rowwise_dot(q_l, constant<T>(detail_lg::rows_from<T>(gl_pos))),
                            matmul(q_l, g_negs, false, true), T(tau));

  std::vector<Tensor<T>> ll_pos;
  ll_pos.reserve(2 * p);
  for (size_t i = 0; i < p; ++i) ll_pos.push_back(d.momentum_patches_v2[i]);
  for (size_t i = 0; i < p; ++i) ll_pos.push_back(d.momentum_patches_v1[i]);
  auto ll = nce_from_logits(rowwise_dot(q_l, constant<T>(detail_lg::rows_from<T>(ll_pos))),
                            matmul(q_l, l_negs, false, true), T(tau));

  return add(add(gg, gl), ll);
}

// ---------------------------------------------------------------------------
// The full objective over two augmented views and their patch grids
// ---------------------------------------------------------------------------

template <typename T>
struct LocalGlobalResult {
  Var<T> loss;
  bool warmup = false;
};

namespace detail_lg {

template <typename T>
struct ViewEmbeddings {
  std::vector<Var<T>> global_emb;                // per stage
  std::vector<std::vector<Var<T>>> patch_emb;    // [stage][cell]
};

template <typename T>
std::vector<Var<T>> forward_stage_embeddings(const TensorF& image, const ParamStore<T>& ps,
                                             const GeneratorConfig& cfg, HeadScope scope) {
  Tensor<T> in = image.template cast<T>();
  auto x = constant<T>(std::move(in));
  auto enc = encode(x, ps, cfg);
  auto att = generate_attention(enc.m_e, ps, cfg);
  return project_features(att.stage_features, ps, scope, cfg);
}

template <typename T>
ViewEmbeddings<T> embed_view(const LocalPatchView& view, const ParamStore<T>& ps,
                             const GeneratorConfig& cfg) {
  ViewEmbeddings<T> out;
  out.global_emb = forward_stage_embeddings<T>(view.global_view, ps, cfg, HeadScope::kGlobal);
  const int stages = cfg.num_stages;
  out.patch_emb.assign(static_cast<size_t>(stages), std::vector<Var<T>>(16));
  for (int j = 0; j < 16; ++j) {
    auto emb = forward_stage_embeddings<T>(view.grid.patches[static_cast<size_t>(j)], ps, cfg,
                                           HeadScope::kLocal);
    const int cell = view.grid.permutation[static_cast<size_t>(j)];
    for (int s = 0; s < stages; ++s)
      out.patch_emb[static_cast<size_t>(s)][static_cast<size_t>(cell)] =
          emb[static_cast<size_t>(s)];
  }
  return out;
}

// Unit-normalized mean of unit vectors (the aggregated local key).
template <typename T>
Tensor<T> normalized_mean(const std::vector<Var<T>>& embs) {
  const int64_t d = embs.at(0)->val.numel();
  Tensor<T> acc({d});
  for (const auto& e : embs)
    for (int64_t i = 0; i < d; ++i) acc[i] += e->val[i];
  double n = 0;
  for (int64_t i = 0; i < d; ++i) n += static_cast<double>(acc[i]) * acc[i];
  n = std::max(std::sqrt(n), 1e-12);
  for (int64_t i = 0; i < d; ++i) acc[i] = static_cast<T>(acc[i] / n);
  return acc;
}

}  // namespace detail_lg

// Builds two augmented views with 16-patch grids, runs the online and
// momentum paths, scores Eq.-style stage terms against bank negatives, then
// enqueues the fresh momentum keys. First call (empty banks) is a warmup:
// zero loss, keys enqueued.
template <typename T>
LocalGlobalResult<T> local_global_loss(const TensorF& x, const ParamStore<T>& online,
                                       const ParamStore<T>& momentum, BankSet<T>& banks,
                                       const GeneratorConfig& gen_cfg,
                                       const LocalGlobalConfig& lg_cfg,
                                       const AugmentationConfig& aug_cfg, Rand& draw) {
  lg_cfg.validate();
  const int stages = gen_cfg.num_stages;
  check_config(static_cast<int>(banks.global_banks.size()) == stages &&
                   static_cast<int>(banks.local_banks.size()) == stages,
               "local_global_loss: bank set does not match stage count");

  LocalPatchView v1 = make_local_patches(x, aug_cfg, draw);
  LocalPatchView v2 = make_local_patches(x, aug_cfg, draw);

  auto on1 = detail_lg::embed_view<T>(v1, online, gen_cfg);
  auto on2 = detail_lg::embed_view<T>(v2, online, gen_cfg);
  auto mo1 = detail_lg::embed_view<T>(v1, momentum, gen_cfg);
  auto mo2 = detail_lg::embed_view<T>(v2, momentum, gen_cfg);

  // Fresh keys: momentum globals plus the aggregated momentum patch key.
  std::vector<std::array<Tensor<T>, 2>> new_global_keys(static_cast<size_t>(stages));
  std::vector<std::array<Tensor<T>, 2>> new_local_keys(static_cast<size_t>(stages));
  for (int s = 0; s < stages; ++s) {
    new_global_keys[static_cast<size_t>(s)] = {mo1.global_emb[static_cast<size_t>(s)]->val,
                                               mo2.global_emb[static_cast<size_t>(s)]->val};
    new_local_keys[static_cast<size_t>(s)] = {
        detail_lg::normalized_mean<T>(mo1.patch_emb[static_cast<size_t>(s)]),
        detail_lg::normalized_mean<T>(mo2.patch_emb[static_cast<size_t>(s)])};
  }

  auto enqueue_all = [&]() {
    for (int s = 0; s < stages; ++s) {
      banks.global_banks[static_cast<size_t>(s)].enqueue(new_global_keys[static_cast<size_t>(s)][0]);
      banks.global_banks[static_cast<size_t>(s)].enqueue(new_global_keys[static_cast<size_t>(s)][1]);
      banks.local_banks[static_cast<size_t>(s)].enqueue(new_local_keys[static_cast<size_t>(s)][0]);
      banks.local_banks[static_cast<size_t>(s)].enqueue(new_local_keys[static_cast<size_t>(s)][1]);
    }
  };

  if (banks.any_empty()) {
    enqueue_all();
    return {constant<T>(Tensor<T>::scalar(T(0))), true};
  }

  Var<T> total;
  for (int s = 0; s < stages; ++s) {
    const double w = lg_cfg.stage_weights[static_cast<size_t>(s)];
    LgStageData<T> d;
    d.online_global_v1 = on1.global_emb[static_cast<size_t>(s)];
    d.online_global_v2 = on2.global_emb[static_cast<size_t>(s)];
    d.online_patches_v1 = on1.patch_emb[static_cast<size_t>(s)];
    d.online_patches_v2 = on2.patch_emb[static_cast<size_t>(s)];
    d.momentum_global_v1 = mo1.global_emb[static_cast<size_t>(s)]->val;
    d.momentum_global_v2 = mo2.global_emb[static_cast<size_t>(s)]->val;
    d.momentum_patches_v1.reserve(16);
    d.momentum_patches_v2.reserve(16);
    for (int c = 0; c < 16; ++c) {
      d.momentum_patches_v1.push_back(mo1.patch_emb[static_cast<size_t>(s)][static_cast<size_t>(c)]->val);
      d.momentum_patches_v2.push_back(mo2.patch_emb[static_cast<size_t>(s)][static_cast<size_t>(c)]->val);
    }
    d.global_negatives =
        *banks.global_banks[static_cast<size_t>(s)].negatives_matrix(lg_cfg.bank_capacity);
    d.local_negatives =
        *banks.local_banks[static_cast<size_t>(s)].negatives_matrix(lg_cfg.bank_capacity);

    auto stage = affine(local_global_stage_loss(d, lg_cfg.tau), T(w), T(0));
    total = total ? add(total, stage) : stage;
  }

  enqueue_all();
  return {total, false};
}

}  // namespace lgt
