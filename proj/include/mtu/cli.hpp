#pragma once

// Experiment configuration, the generate -> train -> unlearn -> evaluate
// pipeline, and the command-line front end.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtu/eval.hpp"
#include "mtu/io.hpp"
#include "mtu/tasks.hpp"
#include "mtu/unlearn.hpp"

namespace mtu {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  GenConfig gen;
  int val_count = 0;  // 0 means N
  std::optional<std::string> dataset_path;
  double forget_ratio = 0.1;
  Setting setting = Setting::partial;
  std::vector<int> forget_tasks{0};  // ignored for the full setting
  TrainConfig train;
  UnlearnConfig unlearn;
  FullTaskReference fu_reference = FullTaskReference::mixed;

  int resolved_val_count() const { return val_count > 0 ? val_count : gen.num_instances; }
  std::vector<int> resolved_forget_tasks(int num_tasks) const;
};

/// Strict parse: unknown keys and wrong types are config errors naming the
/// field path. `base_dir` resolves a relative dataset path.
ExperimentConfig parse_experiment_config(const json& j, const std::string& base_dir = "");

/// Every field with its resolved default.
json experiment_config_to_json(const ExperimentConfig& c);

struct DataBundle {
  MultiTaskDataset train;
  MultiTaskDataset val;
};

DataBundle generate_data(const ExperimentConfig& c);
json data_bundle_to_json(const DataBundle& d, std::uint64_t seed);
DataBundle data_bundle_from_json(const json& j);

struct RunOutcome {
  PartitionSpec part;
  MultiTaskModel original;
  MultiTaskModel retrain;
  UnlearnResult unlearned;
  EvalReport eval_original;
  EvalReport eval_retrain;
  EvalReport eval_unlearned;
  double uis = 0.0;
  double original_auc = 0.0;  // forget-vs-val AUC of Original
  double retrain_auc = 0.0;
  double clean_loss_original = 0.0;
};

RunOutcome run_experiment(const ExperimentConfig& c, const DataBundle& data);

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 success, 2 configuration error, 3 numeric or verification
/// failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtu
