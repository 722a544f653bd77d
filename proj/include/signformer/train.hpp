#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "signformer/data.hpp"
#include "signformer/model.hpp"

namespace signformer {

enum class OptimizerKind { kAdamW, kSophiaG };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double lr = 0.004;
  double weight_decay = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double sophia_beta1 = 0.965;
  double sophia_beta2 = 0.99;
  double sophia_rho = 0.04;
  double sophia_eps = 1e-12;
  int hessian_interval = 10;
};

// Holds per-parameter moment buffers (m and v for AdamW, m and h for
// SophiaG) in lexicographic parameter order, plus the step counter.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, Parameters& params);

  // Applies one update from the gradients currently in the parameters.
  // A non-finite gradient aborts before any parameter changes, naming the
  // offending tensor. Parameters are checked finite afterwards.
  void step();

  // SophiaG Gauss-Newton-Bartlett refresh: reads the current gradients as
  // the model-sampled estimate and folds batch_size * g*g into h.
  void update_hessian(double batch_size);

  uint64_t step_count() const { return step_count_; }
  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const OptimizerConfig& config() const { return cfg_; }

  struct Slot {
    std::string name;
    Tensor param;
    std::vector<float> m;
    std::vector<float> second;  // v (AdamW) or h (SophiaG)
  };
  std::vector<Slot>& slots() { return slots_; }
  void set_step_count(uint64_t n) { step_count_ = n; }

 private:
  OptimizerConfig cfg_;
  std::vector<Slot> slots_;
  uint64_t step_count_ = 0;
};

// Scales all gradients by max_norm/g when the global L2 norm g exceeds
// max_norm; returns the applied scale.
double clip_grad_norm(Parameters& params, double max_norm);

struct PlateauConfig {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-7;
};

// Higher-is-better plateau scheduler over the dev metric.
class PlateauScheduler {
 public:
  PlateauScheduler(PlateauConfig cfg, double initial_lr)
      : cfg_(cfg), lr_(initial_lr) {}

  double step(double dev_metric);

  double lr() const { return lr_; }
  double best_metric() const { return best_; }
  int stale() const { return stale_; }
  void restore(double best, int stale, double lr) {
    best_ = best;
    stale_ = stale;
    lr_ = lr;
  }

 private:
  PlateauConfig cfg_;
  double lr_;
  double best_ = -1e300;
  int stale_ = 0;
};

// Mean label-smoothed NLL over the non-pad positions of a whole batch
// (token-weighted). Teacher-forced forward; gradients accumulate when a
// tape is active.
Tensor batch_loss(const Model& model, const Batch& batch, float smoothing,
                  const ForwardCtx& ctx);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  uint64_t seed = 42;
  float label_smoothing = 0.0f;
  double grad_clip_norm = 5.0;
  std::string optimizer = "auto";  // auto | adamw | sophiag
  OptimizerConfig opt;
  PlateauConfig plateau;
  int decode_max_len = 60;
  double stop_at_dev_bleu = -1.0;  // early stop once reached; negative = off
  int log_every = 0;               // batches; 0 = silent
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_bleu4 = 0.0;
  double dev_rouge_l = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  bool diverged = false;
  int best_epoch = -1;
  double best_dev_bleu4 = -1.0;
};

// Resolves the configured optimizer kind: hidden sizes of 128 and above
// train with SophiaG, smaller models with AdamW.
OptimizerKind resolve_optimizer(const std::string& name, const ModelConfig& cfg);

// Teacher-forced training with per-epoch greedy dev validation. When
// out_dir is non-empty, writes best.sgck / last.sgck checkpoints and
// appends to metrics.txt. Resuming continues bit-exactly from a
// last.sgck-style state (single threaded).
struct ResumeState {
  uint64_t optimizer_step = 0;
  std::vector<std::vector<float>> opt_m, opt_second;
  int epoch = 0;
  double best_dev_bleu4 = -1.0;
  int scheduler_stale = 0;
  double scheduler_best = -1e300;
  double lr = 0.0;
  std::array<uint64_t, 4> rng_state{};
};

TrainResult train_loop(Model& model, const FeatureDataset& train_set,
                       const FeatureDataset& dev_set, const TrainConfig& cfg,
                       const std::string& out_dir,
                       const std::function<void(const EpochRecord&)>& on_epoch = {},
                       const ResumeState* resume = nullptr);

}  // namespace signformer
