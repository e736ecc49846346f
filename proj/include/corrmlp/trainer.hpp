#pragma once

// Adam, the unsupervised training loop with Dice-based checkpoint selection,
// and per-pair registration metrics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "corrmlp/net.hpp"
#include "corrmlp/objectives.hpp"
#include "corrmlp/synth.hpp"

namespace corrmlp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;
  std::vector<Tensor> m, v;  // created at zeros on first use
};

/// One bias-corrected Adam update of every parameter; gradients are zeroed
/// afterwards. A parameter with no gradient is updated as if g = 0.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg);

struct RegistrationPair {
  uint64_t seed = 0;
  Volume fixed, moving;
  LabelMap fixed_labels, moving_labels;
  std::optional<DisplacementField> psi_true;

  static RegistrationPair from_synthetic(SyntheticPair p, uint64_t seed);
};

struct PairMetrics {
  double dice_before = 0.0;
  double dice_after = 0.0;
  double njd_percent = 0.0;
  std::optional<double> epe_before, epe_after;
};

/// Inference-mode registration of moving onto fixed.
DisplacementField register_volumes(const CorrMLP& model, const Volume& moving, const Volume& fixed,
                                   Volume* warped = nullptr);

PairMetrics evaluate_pair(const CorrMLP& model, const RegistrationPair& pair);

struct TrainConfig {
  AdamConfig adam;
  int64_t iterations = 2000;
  int64_t val_every = 200;
  uint64_t seed = 0;
  LossConfig loss;
  SyntheticPairSpec train_spec;  // seed replaced per iteration
  std::filesystem::path log_path;         // JSONL; empty = no file
  std::filesystem::path checkpoint_path;  // best checkpoint; empty = none

  void validate() const;
  nlohmann::json to_json() const;
};

/// Seed of the synthetic training pair drawn at `iteration` (1-based).
uint64_t training_pair_seed(uint64_t seed, int64_t iteration);

struct TrainLogRecord {
  int64_t iteration = 0;
  std::optional<double> loss, similarity, regularization;
  std::optional<double> val_dice, val_njd;
  nlohmann::json to_json() const;
};

struct TrainResult {
  int64_t best_iteration = 0;
  double best_dice = 0.0;
  std::vector<TrainLogRecord> log;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int64_t iteration, uint64_t pair_seed);
  int64_t iteration;
  uint64_t pair_seed;
};

/// Trains `model` in place on freshly generated pairs (batch size 1),
/// validating at iteration 0, every val_every iterations and at the end.
/// On return the model holds the best-validation parameters.
TrainResult train(CorrMLP& model, const std::vector<RegistrationPair>& val, const TrainConfig& cfg,
                  const std::function<void(const TrainLogRecord&)>& progress = {});

}  // namespace corrmlp
