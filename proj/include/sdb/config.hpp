#ifndef SDB_CONFIG_HPP_
#define SDB_CONFIG_HPP_

// Experiment configuration as JSON. Every key is optional and defaults to the
// preset it is applied on; unknown keys and type mismatches raise ConfigError
// naming the dotted field path.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sdb/data.hpp"
#include "sdb/evaluation.hpp"
#include "sdb/training.hpp"

namespace sdb {

struct DatasetConfig {
  std::string root;                      // benchmark root or directory with manifest.txt
  std::optional<SynthConfig> synthetic;  // used when root is empty
};

struct EvalConfig {
  Metric metric = Metric::kEuclidean;
  int topk = 10;
  int every = 0;  // epochs between evaluations during training; 0 = end only
  int batch_size = 32;
};

struct ExperimentConfig {
  std::string name = "custom";
  TrainConfig train;
  DatasetConfig dataset;
  EvalConfig eval;
  std::string output_dir;  // default: runs/<name>
  int checkpoint_every = 10;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);
// `base` supplies the defaults for absent keys.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});
ExperimentConfig experiment_from_json(const nlohmann::json& j, const ExperimentConfig& base);

std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name);

// A preset name, or a JSON file. A file may name its base with "preset".
ExperimentConfig load_experiment(const std::string& name_or_path);

// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

// Ablation switches: co_training=on|off, attention=on|off, q=<int>,
// r_h=<ratio>, dim_reduction=on|off.
void apply_ablation(ExperimentConfig& cfg, std::string_view assignment);

}  // namespace sdb

#endif  // SDB_CONFIG_HPP_
