#pragma once

// Generator training against a frozen target, freezing of the deployable
// (flow, noise) pair and its on-disk artifact.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "guap/backbone.hpp"
#include "guap/generator.hpp"
#include "guap/objective.hpp"
#include "guap/perturb.hpp"

namespace guap {

enum class ZPolicy { resample_per_batch, fixed };

ZPolicy parse_z_policy(const std::string& s);
std::string to_string(ZPolicy p);
LossVariant parse_loss_variant(const std::string& s);
std::string to_string(LossVariant v);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 128;
  AttackBudget budget{0.04, 0.0};
  nn::OptimizerConfig optimizer{};  // adam, 2e-4, no weight decay
  double lr_decay = 1.0;            // multiplicative, per epoch
  uint64_t seed = 0;
  LossVariant loss = LossVariant::scaled_ce;
  ZPolicy z_policy = ZPolicy::resample_per_batch;
  GeneratorArch arch{};
  // Small training sets get extra epochs until at least this many optimizer
  // steps have run. 0 disables.
  int64_t min_steps = 0;
  // Held-out images scored after every epoch when a validation set is given;
  // 0 means all of them.
  int64_t validation_limit = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch;
  double mean_loss;
  double train_asr;       // prediction-change rate over the epoch's batches
  double seconds;
  double validation_asr;  // NaN when no validation set
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double final_validation_asr = 0.0;  // NaN when no validation set
  int64_t steps = 0;
};

struct TrainResult {
  Generator<float> generator;
  SeedPattern<float> deploy_z;
  TrainLog log;
};

/// Pattern used at freeze time (and for every step under ZPolicy::fixed).
SeedPattern<float> deploy_seed_pattern(const TrainConfig& cfg);

using EpochHook = std::function<void(const EpochRecord&)>;

/// Optimizes generator parameters so the scaled perturbation changes the
/// target's predictions on `data`. The target is only read. Throws
/// ContractViolation on an empty dataset and TrainingFault on a non-finite
/// loss.
TrainResult train(const LabeledDataset& data, const TargetModel& target, const TrainConfig& cfg,
                  const LabeledDataset* validation = nullptr, const EpochHook& on_epoch = {});

struct UniversalPerturbation {
  FlowField<float> flow;    // (2, h, w)
  NoiseField<float> noise;  // (c, h, w)
  AttackBudget budget;
  io::Digest seed_digest{};
  std::string target_id;
  bool flow_degenerate = false;  // raw flow had no variation; flow set to zero

  int64_t c() const { return noise.c(); }
  int64_t h() const { return noise.h(); }
  int64_t w() const { return noise.w(); }
  Tensor<float> apply(const Tensor<float>& x) const { return compose_adversarial(x, flow, noise); }

  static UniversalPerturbation identity(int64_t c, int64_t h, int64_t w, std::string target_id = "");
  friend bool operator==(const UniversalPerturbation& a, const UniversalPerturbation& b) {
    return a.flow == b.flow && a.noise == b.noise && a.budget.epsilon == b.budget.epsilon &&
           a.budget.tau == b.budget.tau && a.seed_digest == b.seed_digest && a.target_id == b.target_id;
  }
};

/// One generator pass on z, then budget scaling; the result is fixed.
UniversalPerturbation freeze_perturbation(const Generator<float>& g, const SeedPattern<float>& z,
                                          const AttackBudget& budget, std::string target_id);

/// Uniform random raw fields scaled to the same budgets (baseline).
UniversalPerturbation random_perturbation(const AttackBudget& budget, int64_t c, int64_t h, int64_t w, uint64_t seed);

inline constexpr uint32_t kPerturbationVersion = 1;

void save_perturbation(const std::filesystem::path& path, const UniversalPerturbation& p);
/// Throws io::BadMagic, io::VersionMismatch, io::TruncatedFile or
/// io::DigestMismatch.
UniversalPerturbation load_perturbation(const std::filesystem::path& path);

}  // namespace guap
