#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prom3e/config.hpp"
#include "prom3e/model.hpp"
#include "prom3e/synthdata.hpp"

namespace prom3e {

// Size 1 or 2 with probability 1/2 each, then a uniform subset of that size.
VisibleSet sample_visible_set(Rng& rng, std::size_t modality_count, bool masked_only_targets = false);

// eta_0 * 1/2 * (1 + cos(pi * t / total)).
double cosine_lr(double base, std::size_t step, std::size_t total_steps);

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

struct LossTerms {
  Var total;
  Var recon;  // mean over targets
  Var vib;
};

// Builds the full objective for one batch on `g`.
LossTerms build_loss(Graph& g, const BoundParams& p, const Batch& batch, const VisibleSet& vs,
                     const LossConfig& loss, EpsilonMode mode, Rng* rng, bool shared_epsilon);

struct StepLosses {
  double total = 0.0;
  double recon = 0.0;
  double vib = 0.0;
};

// Adam with decoupled weight decay. Parameters with decay == false skip the
// decay term; `frozen` entries are not touched at all.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  explicit AdamW(const TrainConfig& c) : AdamW(c.adam_beta1, c.adam_beta2, c.adam_eps, c.weight_decay) {}

  void step(std::vector<Param>& params, const std::vector<Tensor>& grads, double lr,
            const std::vector<bool>& frozen = {});
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline constexpr double kAlphaCeiling = -1e-3;

// One forward, one backward, one AdamW update, then the alpha clamp.
StepLosses train_step(ModelParams& params, AdamW& opt, const Batch& batch, const VisibleSet& vs,
                      const RunConfig& config, double lr, Rng& rng, std::size_t step_index = 0);

// Validation objective: every batch of `ds` (in order) under every singleton
// visible set, epsilon = 0. Does not modify params.
double evaluate_loss(const ModelParams& params, const Dataset& ds, const RunConfig& config);

struct EpochStats {
  double train_total = 0.0;
  double train_recon = 0.0;
  double train_vib = 0.0;
  double val_total = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;

  std::string to_text() const;  // tab-separated, one row per epoch
};

struct FitResult {
  TrainReport report;
  ModelParams best;   // lowest validation loss
  ModelParams last;
  RunConfig config;   // resolved config as stored in the checkpoint
};

// Epoch loop with deterministic shuffling, a fresh visible set per batch and
// cosine decay over all steps. Writes the best-validation checkpoint when a
// path is given.
FitResult fit(const Dataset& train, const Dataset& val, const RunConfig& config,
              const std::string& checkpoint_path = {});

// Resolve model-facing config fields that follow from the data.
RunConfig config_for_data(RunConfig config, const Dataset& ds);

}  // namespace prom3e
