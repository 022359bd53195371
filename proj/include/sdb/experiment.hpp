#ifndef SDB_EXPERIMENT_HPP_
#define SDB_EXPERIMENT_HPP_

// Wiring shared by the command-line tool and the acceptance runs.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdb/config.hpp"
#include "sdb/evaluation.hpp"
#include "sdb/training.hpp"

namespace sdb {

// Explicit --output wins; otherwise cfg.output_dir, or runs/<name>. Relative
// defaults are placed under $SDB_OUTPUT_ROOT when that is set.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::string& cli_output = "");

// Synthetic data is generated into <output_dir>/data. A root with a
// manifest.txt is read as a manifest, anything else as a benchmark layout.
DatasetManifest prepare_dataset(const ExperimentConfig& cfg, const std::filesystem::path& output_dir,
                                std::vector<std::string>* warnings);

// Branches whose embeddings form the retrieval feature for this model.
std::vector<int> eval_branches(const TrainConfig& cfg);

struct TrainRunOptions {
  std::filesystem::path output_dir;
  std::filesystem::path resume;  // checkpoint to continue from
  int stop_after_epoch = -1;
  bool final_eval = true;
  std::ostream* progress = nullptr;
};

struct TrainRun {
  std::filesystem::path output_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_log;
  RetrievalMetrics final_eval;
  long long steps = 0;
  double train_seconds = 0;
  double total_seconds = 0;
};

// Trains (or resumes), writes config.resolved.json, checkpoints, metrics.log
// and eval.txt into the output directory.
TrainRun run_training(const ExperimentConfig& cfg, const TrainRunOptions& opts);

RetrievalMetrics run_eval(TrainState& state, const DatasetManifest& manifest, Metric metric,
                          std::size_t batch_size = 32);

}  // namespace sdb

#endif  // SDB_EXPERIMENT_HPP_
