#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "uneq/adam.hpp"
#include "uneq/losses.hpp"
#include "uneq/networks.hpp"
#include "uneq/rng.hpp"

namespace uneq {

struct TrainConfig {
  uint64_t seed = 42;
  int batch_size = 8;  // >= 2, diversity needs pairs
  int64_t steps = 500;
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  LossArrangement arrangement;
  int max_stage = 3;
  int steps_per_stage = 1000;
  double fade_fraction = 0.5;  // in (0,1]
  int diag_window = 50;
  double explode_threshold = 1e3;
  double stasis_threshold = 1e-5;
  int checkpoint_every = 100;
  NetConfig net;

  void validate() const;  // throws std::invalid_argument
  // Channel schedule trimmed to max_stage + 1 entries.
  NetConfig effective_net() const;
  AdamConfig adam_g() const { return {lr_g, adam_beta1, adam_beta2, adam_eps}; }
  AdamConfig adam_d() const { return {lr_d, adam_beta1, adam_beta2, adam_eps}; }
  // FNV-1a over the fields that determine the training trajectory (seed,
  // dynamics, architecture). Excludes run length, output paths and
  // diagnostics thresholds so a resumed run with extended --steps validates.
  uint64_t dynamics_hash() const;
};

// stage = min(step / steps_per_stage, max_stage); alpha ramps 0 -> 1 over the
// first fade_fraction of each stage after the first, then holds at 1.
GrowthState growth_schedule(int64_t step, const TrainConfig& cfg);

enum class RecordStatus { Ok, Exploding };
enum class Stability { Healthy, Exploding, Static };
std::string to_string(RecordStatus status);
std::string to_string(Stability stability);

struct DiagnosticsRecord {
  int64_t step = 0;
  int stage = 0;
  double alpha = 1.0;
  double d_loss = 0.0;
  double g1_loss = 0.0;
  double g2_loss = 0.0;
  double d_grad_norm = 0.0;
  double g1_grad_norm = 0.0;
  double g2_grad_norm = 0.0;
  double g1_diversity = 0.0;
  double g2_diversity = 0.0;
  RecordStatus status = RecordStatus::Ok;
};

struct StabilityConfig {
  double explode_threshold = 1e3;
  double stasis_threshold = 1e-5;
};

// EXPLODING if any grad norm exceeds the threshold or anything is non-finite;
// STATIC if both generators' diversity variance and the window's mean grad
// norm (averaged over the three networks) fall below the stasis threshold;
// HEALTHY otherwise. Window must hold at least two records.
Stability stability_diagnose(std::span<const DiagnosticsRecord> window,
                             const StabilityConfig& cfg);

struct TrainState {
  Generator g1;
  Generator g2;
  Discriminator d;
  Adam opt_g1;
  Adam opt_g2;
  Adam opt_d;
  int64_t step = 0;
  Rng rng;  // batch-sampling stream
  GrowthState growth;

  static TrainState init(const TrainConfig& cfg);
};

// One full step: D update on two fresh batches, then G1 and G2 updates on two
// more, diagnostics recorded, growth advanced. Non-finite losses or gradients
// mark the record EXPLODING and skip that network's update.
DiagnosticsRecord train_step(TrainState& state, const TrainConfig& cfg);

struct TrainRunResult {
  int64_t steps_run = 0;
  bool aborted_exploding = false;
};

// Runs until state.step == cfg.steps or EXPLODING persists for diag_window
// consecutive steps.
TrainRunResult run_training(
    TrainState& state, const TrainConfig& cfg,
    const std::function<void(const DiagnosticsRecord&, TrainState&)>& on_record);

}  // namespace uneq
