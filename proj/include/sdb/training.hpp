#ifndef SDB_TRAINING_HPP_
#define SDB_TRAINING_HPP_

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdb/augment.hpp"
#include "sdb/data.hpp"
#include "sdb/losses.hpp"
#include "sdb/model.hpp"
#include "sdb/optim.hpp"
#include "sdb/sampling.hpp"
#include "sdb/schedule.hpp"

namespace sdb {

// co_training: conventional half -> global branch, dropped half -> local branch.
// single_batch: only the dropped half is built and it feeds both branches.
// global_only: conventional batch, global branch only (baseline).
enum class TrainMode { kCoTraining, kSingleBatch, kGlobalOnly };
// round_robin: step s trains local branch (s mod (L-1)) + 1.
// all_branches: every step builds one super-batch per local branch from the
// same plan and applies a single update.
enum class BranchSchedule { kRoundRobin, kAllBranches };

std::string_view to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(BranchSchedule s);
BranchSchedule parse_branch_schedule(std::string_view name);

struct TrainConfig {
  ModelConfig model;
  std::vector<DropSpec> drops{DropSpec{}};  // one per local branch
  PipelineConfig pipeline;
  Schedule schedule;
  LossWeights loss;
  int p = 8;
  int k = 4;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kCoTraining;
  BranchSchedule branch_schedule = BranchSchedule::kRoundRobin;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct TrainState {
  TrainConfig cfg;
  LabelMap labels;
  std::unique_ptr<SdbNet> model;
  Adam adam;
  std::vector<nn::Parameter> centers;  // per branch, (num_classes, branch_dim)
  std::vector<MaskStream> streams;     // per local branch; streams[l-1]
  Rng sample_rng;
  Rng augment_rng;
  long long step = 0;
  int epoch = 0;  // completed epochs
  std::filesystem::path diagnostics_dir{"."};

  // num_classes is taken from `labels`; a non-zero configured value must agree.
  static TrainState create(TrainConfig cfg, LabelMap labels);

  // Shared net + the listed branches + their centers.
  nn::ParamRefs active_parameters(std::span<const int> branches);
  nn::ParamRefs all_parameters();
  int round_robin_branch() const;
};

struct StepMetrics {
  long long step = 0;
  int epoch = 0;
  double lr = 0;
  std::vector<int> branches;        // branch of each entry in `losses`
  std::vector<BranchLoss> losses;
  Real total = 0;
};

// `step=.. epoch=.. lr=.. total=.. id.global=.. triplet.local1=..` on one line.
std::string format_step(const StepMetrics& m);

// One optimizer update from one super-batch on local branch l.
StepMetrics train_step(TrainState& state, const SuperBatch& sb, int l, double lr);
// One update accumulated over several super-batches (sbs[i] trains local branch ls[i]).
StepMetrics train_step(TrainState& state, std::span<const SuperBatch> sbs, std::span<const int> ls, double lr);
// Global branch only.
StepMetrics train_step_global(TrainState& state, const PlainBatch& batch, double lr);
// Builds the batch(es) for `plan` according to cfg.mode / cfg.branch_schedule and steps.
StepMetrics run_plan(TrainState& state, const BatchPlan& plan, ImageCache& cache, double lr);

// Versioned binary container: magic, JSON header (config, counters, RNG
// states, array index) and raw little-endian float64 arrays.
void save_checkpoint(const TrainState& state, const std::filesystem::path& file);
TrainState load_checkpoint(const std::filesystem::path& file);

struct FitOptions {
  std::filesystem::path output_dir{"."};
  int checkpoint_every = 10;  // epochs; the last epoch is always saved
  int eval_every = 0;         // epochs; 0 disables the hook
  std::function<std::string(TrainState&, int epoch)> eval_hook;
  int stop_after_epoch = -1;  // simulate an interruption (tests)
  std::ostream* progress = nullptr;
};

struct FitResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_log;
  StepMetrics last;
  double seconds = 0;
};

// Runs epochs state.epoch .. total_epochs-1. Learning rate is lr_at(epoch).
// Appends to <output_dir>/metrics.log, writes <output_dir>/checkpoints/.
FitResult fit(TrainState& state, const DatasetManifest& manifest, ImageCache& cache, const FitOptions& opts);

}  // namespace sdb

#endif  // SDB_TRAINING_HPP_
