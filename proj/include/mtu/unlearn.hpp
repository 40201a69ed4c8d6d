#pragma once

// The unlearning driver: per-source gradients over the four-way partition,
// task projection, sequential orthogonalization of the forget gradient, the
// combined descent/ascent update, and early stopping on membership inference.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtu/eval.hpp"
#include "mtu/subspace.hpp"
#include "mtu/surgery.hpp"
#include "mtu/tasks.hpp"

namespace mtu {

enum class Setting { full, partial };

enum class Strategy {
  ours,
  neggrad_plus,        // raw gradients, no projection, no orthogonalization
  without_projection,  // P_t replaced by the identity
  without_task,        // sequential stages skip the task source
  without_inst,
  without_clean,
};

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);
const char* to_string(Setting s);

struct UnlearnConfig {
  Setting setting = Setting::partial;
  double eta1 = 0.5;
  double eta2 = 0.05;
  double eps = 1e-8;
  int max_epochs = 20;
  int rank = 6;
  int subspace_dim = 0;  // 0 picks floor(rank / K)
  double reg_weight = 1.0;
  double reg_step = 1e-2;
  double init_std = 0.0;  // std of A's entries; 0 picks 0.1 / sqrt(rank)
  Strategy strategy = Strategy::ours;
  double anchor_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  double resolved_init_std() const;
  int resolved_subspace_dim(int num_tasks) const;
};

struct EpochRecord {
  int epoch = 0;
  double forget_loss = 0.0;
  std::optional<double> retain_task_loss;
  std::optional<double> retain_inst_loss;
  std::optional<double> retain_clean_loss;
  double retain_loss = 0.0;
  double mia_auc = 0.0;  // forget vs validation, averaged over forgotten tasks
};

struct UnlearnTrace {
  std::vector<EpochRecord> epochs;  // epochs[0] is the starting model
  int selected_epoch = 0;
  double retrain_auc = 0.0;

  const EpochRecord& selected() const { return epochs.at(static_cast<std::size_t>(selected_epoch)); }
};

struct UnlearnResult {
  MultiTaskModel model;  // merged weights at the selected epoch, rank-0 edit
  LowRankEdit<double> edit;
  SubspaceSet<double> subspaces;
  UnlearnTrace trace;
};

/// Retain sources of one run: the clean anchor, the inst and task subsets, and
/// the weight |S| / |D_r| with which each enters the retain gradient.
struct RetainSources {
  std::array<Subset, 3> subsets;  // indexed by RetainSource
  std::array<double, 3> share{0.0, 0.0, 0.0};
};

RetainSources make_retain_sources(const PartitionSpec& part, double anchor_fraction,
                                  std::uint64_t seed);

/// Factor gradients of one source split by task; entry t empty when the source
/// holds no pair of task t.
using TaskFactorGradients = std::vector<std::optional<FactorGradients>>;

TaskFactorGradients source_gradients(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                     const Subset& subset, double scale);

/// Surgery inputs for forgotten task t: the forget gradient of task t and
/// every retain source summed over tasks, all right-multiplied by `projector`.
GradientBundle<double> forget_bundle(const TaskFactorGradients& forget,
                                     const std::array<TaskFactorGradients, 3>& retain, int task,
                                     const MatrixXd& projector);

struct UpdateDirection {
  MatrixXd retain_a, retain_b;  // descent terms
  MatrixXd forget_a, forget_b;  // orthogonalized ascent terms
};

/// Both terms of the update at the current edit.
UpdateDirection update_direction(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                 const PartitionSpec& part, const RetainSources& sources,
                                 const SubspaceSet<double>& subspaces, const UnlearnConfig& cfg);

/// Starts from `original` (a dense reference) with a fresh rank-r edit over
/// its weight and returns the model at the epoch whose forget MIA AUC is
/// closest to `retrain_auc`.
UnlearnResult run_unlearning(const MultiTaskModel& original, const MultiTaskDataset& ds,
                             const PartitionSpec& part, const MultiTaskDataset& val,
                             const UnlearnConfig& cfg, double retrain_auc,
                             std::optional<SubspaceSet<double>> subspaces = std::nullopt);

UnlearnResult strategy_neggrad_plus(const MultiTaskModel& original, const MultiTaskDataset& ds,
                                    const PartitionSpec& part, const MultiTaskDataset& val,
                                    UnlearnConfig cfg, double retrain_auc);

}  // namespace mtu
