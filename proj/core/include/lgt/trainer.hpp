#pragma once

#include <string>
#include <vector>

#include "lgt/data.hpp"
#include "lgt/local_global.hpp"
#include "lgt/losses.hpp"
#include "lgt/models.hpp"

namespace lgt {

// Adam with per-parameter first/second moments, aligned to a fixed path list.
template <typename T>
struct AdamState {
  std::vector<std::string> paths;
  std::vector<Tensor<T>> m, v;
  int64_t t = 0;

  void init(const ParamStore<T>& ps, std::vector<std::string> wanted) {
    paths = std::move(wanted);
    m.clear();
    v.clear();
    for (const auto& p : paths) {
      m.push_back(Tensor<T>::zeros(ps.at(p)->val.dims()));
      v.push_back(Tensor<T>::zeros(ps.at(p)->val.dims()));
    }
  }

  void zero_grads(ParamStore<T>& ps) {
    for (const auto& p : paths) ps.at(p)->zero_grad();
  }

  void step(ParamStore<T>& ps, double lr, double beta1, double beta2, double eps = 1e-8) {
    ++t;
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T corr1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
    const T corr2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
    for (size_t i = 0; i < paths.size(); ++i) {
      auto& node = *ps.at(paths[i]);
      node.ensure_grad();
      Tensor<T>& g = node.grad;
      Tensor<T>& mi = m[i];
      Tensor<T>& vi = v[i];
      T* p = node.val.data();
      for (int64_t j = 0; j < g.numel(); ++j) {
        mi[j] = b1 * mi[j] + (T(1) - b1) * g[j];
        vi[j] = b2 * vi[j] + (T(1) - b2) * g[j] * g[j];
        const T mhat = mi[j] / corr1;
        const T vhat = vi[j] / corr2;
        p[j] -= static_cast<T>(lr) * mhat / (std::sqrt(vhat) + static_cast<T>(eps));
      }
    }
  }
};

struct TrainConfig {
  ObjectiveMode mode = ObjectiveMode::kUnsupervised;
  int epochs = 30;
  int max_iterations = 0;  // 0 = run epochs * dataset size
  double lr = 1e-5;
  double beta1 = 0.5;
  double beta2 = 0.99;
  int batch_size = 1;
  uint64_t seed = 0;
  int smallest_side = 64;
  int checkpoint_every = 500;
  int log_every = 10;
  int disc_width = 64;
  bool saturating_adv_g = false;
  int lg_warmup_iterations = 0;

  GeneratorConfig gen;
  ObjectiveWeights weights;
  PatchNCEConfig patch_nce;
  LocalGlobalConfig lg;
  AugmentationConfig aug;

  void validate() const;
  std::string canonical_json() const;
  static TrainConfig from_json_text(const std::string& text);
  uint64_t digest() const;
};

constexpr const char* kCheckpointVersion = "lgt.ckpt.v1";

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  // One optimization iteration: D step on (real, detached fake), G step on
  // the mode's objective, then (unsupervised only) an EMA pull.
  LossReport train_step(const Sample& batch);

  struct FitResult {
    std::string final_checkpoint;
    std::vector<LossReport> history;  // entries for iterations run in this call
  };
  FitResult fit(const DatasetSpec& dataset, const std::string& out_dir);

  void save_checkpoint(const std::string& dir) const;
  static Trainer load_checkpoint(const std::string& dir, bool force = false);
  // Digest guard for resuming with an explicit config.
  static uint64_t stored_config_digest(const std::string& dir);

  const TrainConfig& config() const { return cfg_; }
  int64_t iteration() const { return iteration_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }
  const ParamStore<float>& momentum() const { return momentum_; }
  BankSet<float>& banks() { return banks_; }
  int clamp_warnings() const { return clamp_warnings_; }

  // Deterministic 64-bit fingerprint over all parameter bytes.
  uint64_t params_fingerprint() const;

 private:
  Trainer() = default;
  void init_params();
  friend class CheckpointCodec;

  TrainConfig cfg_;
  ParamStore<float> params_;
  ParamStore<float> momentum_;
  BankSet<float> banks_;
  AdamState<float> opt_g_, opt_d_;
  int64_t iteration_ = 0;
  int clamp_warnings_ = 0;
};

// Translate a plain image with trained parameters (inference path).
TensorF translate_image(const TensorF& image, const ParamStore<float>& params,
                        const GeneratorConfig& cfg);
TensorF attention_masks_for(const TensorF& image, const ParamStore<float>& params,
                            const GeneratorConfig& cfg);

}  // namespace lgt
