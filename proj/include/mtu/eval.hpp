#pragma once

// Split-wise utility metrics, loss-based membership inference, and the
// Unlearning Impact Score against setting-dependent references.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtu/tasks.hpp"

namespace mtu {

/// ROC AUC of the membership score -loss with members as positives, i.e. the
/// Mann-Whitney statistic with ties counted as one half.
double mia_auc(const std::vector<double>& member_losses,
               const std::vector<double>& nonmember_losses);

enum class Cell { ret = 0, unl = 1, val = 2, mia = 3, mia_ret = 4 };
inline constexpr int kNumCells = 5;
// The four aspects that enter the score; mia_ret is reported but not scored.
inline constexpr std::array<Cell, 4> kScoredCells = {Cell::ret, Cell::unl, Cell::val, Cell::mia};

const char* to_string(Cell c);
Cell parse_cell(const std::string& s);

struct EvalReport {
  std::string metric = "exp_neg_loss";
  std::vector<std::string> tasks;
  std::vector<std::array<std::optional<double>, kNumCells>> cells;  // per task
  std::string setting;
  std::uint64_t seed = 0;
  std::string model_id;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
  int task_index(const std::string& name) const;
  void set(int task, Cell c, double v) { cells.at(static_cast<std::size_t>(task))[static_cast<int>(c)] = v; }
  std::optional<double> get(int task, Cell c) const {
    return cells.at(static_cast<std::size_t>(task))[static_cast<int>(c)];
  }
  void add_task(std::string name);
};

std::vector<std::string> default_task_names(int num_tasks);

/// Ret: retained instances, Unl: forgotten instances, Val: held-out set, each
/// per task and mapped through exp(-mean loss). MIA cells compare forgotten
/// (resp. retained) instances of a task against its validation pairs.
EvalReport evaluate(const MultiTaskModel& model, const MultiTaskDataset& ds,
                    const PartitionSpec& part, const MultiTaskDataset& val);

/// Mean over forgotten tasks of the forget-vs-validation AUC; the quantity
/// early stopping tracks.
double forget_mia_auc(const MultiTaskModel& model, const MultiTaskDataset& ds,
                      const PartitionSpec& part, const MultiTaskDataset& val);

enum class FullTaskReference {
  mixed,        // Ret/Val against Original, Unl/MIA against Retrain
  retrain_all,  // every cell against Retrain
};

struct UisSetting {
  std::vector<int> forgotten_tasks;  // every task for full-task unlearning
  FullTaskReference full_reference = FullTaskReference::mixed;

  bool full(int num_tasks) const {
    return static_cast<int>(forgotten_tasks.size()) == num_tasks;
  }
};

/// Mean over tasks of the summed relative deviations |s - ref| / ref over the
/// four scored cells, as a fraction.
double uis(const EvalReport& evaluated, const EvalReport& original, const EvalReport& retrain,
           const UisSetting& setting);

/// Per-task s_t, same rules as uis().
std::vector<double> uis_per_task(const EvalReport& evaluated, const EvalReport& original,
                                 const EvalReport& retrain, const UisSetting& setting);

/// Flat CSV, one row per present (task, cell): task,cell,metric,value.
void write_report_csv(std::ostream& os, const EvalReport& r);
EvalReport read_report_csv(std::istream& is);

}  // namespace mtu
