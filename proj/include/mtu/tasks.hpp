#pragma once

// Synthetic multi-task regression data, the four-way forget/retain partition,
// and the shared-layer model f_t(x) = H_t (W* + B A^T)^T x with squared loss.

#include <cstdint>
#include <optional>
#include <vector>

#include "mtu/matlib.hpp"
#include "mtu/surgery.hpp"

namespace mtu {

struct GenConfig {
  int num_instances = 200;  // N
  int input_dim = 16;       // d
  int num_tasks = 3;        // K
  int shared_dim = 8;       // k, output width of the shared layer
  std::vector<int> task_dims{4, 4, 4};
  int teacher_rank = 4;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One supervised (instance, task) cell. Targets live in the dataset's
// per-task target matrices; row `instance` of targets[task].
struct Triple {
  int instance = 0;
  int task = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

using Subset = std::vector<Triple>;

struct MultiTaskDataset {
  MatrixXd inputs;                   // N x d, one instance per row
  std::vector<MatrixXd> targets;     // per task, N x m_t
  std::vector<MatrixXd> heads;       // per task, m_t x k (frozen)
  std::vector<double> task_weights;  // lambda_t
  MatrixXd teacher;                  // d x k generating weight
  GenConfig config;

  int num_instances() const { return static_cast<int>(inputs.rows()); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
  int num_tasks() const { return static_cast<int>(heads.size()); }
  int shared_dim() const { return heads.empty() ? 0 : static_cast<int>(heads.front().cols()); }

  /// Complete supervision grid, instance-major.
  Subset triples() const;
  void validate() const;
};

MultiTaskDataset generate_synthetic(const GenConfig& cfg);

/// Held-out instances from the same teacher and heads. Drawn from a stream
/// separate from the training set so changing `count` never perturbs it.
MultiTaskDataset generate_validation(const GenConfig& cfg, int count);

enum class PartitionUse { unlearning, evaluation };

struct PartitionSpec {
  std::vector<int> forget_instances;  // X_f, sorted
  std::vector<int> forget_tasks;      // T_f, sorted
  Subset forget;                      // X_f x T_f
  Subset retain_task;                 // X_f x T_r
  Subset retain_inst;                 // X_r x T_f
  Subset retain_clean;                // X_r x T_r

  Subset retain() const;
  std::size_t retain_size() const {
    return retain_task.size() + retain_inst.size() + retain_clean.size();
  }
  bool full_task(int num_tasks) const {
    return static_cast<int>(forget_tasks.size()) == num_tasks;
  }
};

PartitionSpec partition(const MultiTaskDataset& ds, std::vector<int> forget_instances,
                        std::vector<int> forget_tasks,
                        PartitionUse use = PartitionUse::unlearning);

/// floor(fraction * N) instances (at least one), drawn without replacement.
std::vector<int> sample_forget_instances(int num_instances, double fraction, std::uint64_t seed);

struct MultiTaskModel {
  LowRankEdit<double> edit;
  std::vector<MatrixXd> heads;

  MatrixXd merged() const { return merge(edit); }
  int num_params() const {
    return static_cast<int>(edit.a.size() + edit.b.size());
  }
};

/// Dense reference model W with a rank-0 edit.
MultiTaskModel dense_model(const MatrixXd& w, const std::vector<MatrixXd>& heads);

double pair_loss(const MultiTaskModel& model, const MultiTaskDataset& ds, const Triple& p);

/// Per-pair losses in subset order (unweighted).
std::vector<double> pair_losses(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                const Subset& subset);

/// (1/|S|) sum_S lambda_t l_{i,t}.
double subset_loss(const MultiTaskModel& model, const MultiTaskDataset& ds, const Subset& subset);

/// Gradient of subset_loss with respect to the merged weight W~ (d x k), split
/// by task. Entry t is empty when the subset holds no pair of task t. Every
/// part is normalized by the full |S|, so the parts sum to the subset gradient.
std::vector<std::optional<MatrixXd>> weight_gradient_by_task(const MultiTaskModel& model,
                                                             const MultiTaskDataset& ds,
                                                             const Subset& subset);

MatrixXd weight_gradient(const MultiTaskModel& model, const MultiTaskDataset& ds,
                         const Subset& subset);

struct FactorGradients {
  MatrixXd a;  // k x r
  MatrixXd b;  // d x r
};

/// Chain rule through W~ = W* + B A^T: dL/dA = G^T B, dL/dB = G A.
FactorGradients factor_gradients(const LowRankEdit<double>& edit, const MatrixXd& weight_grad);

FactorGradients subset_gradient(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                const Subset& subset);

struct TrainConfig {
  int epochs = 300;
  double step_size = 0.5;
  std::uint64_t seed = 0;
  double grad_tol = 1e-7;
};

/// Full-batch gradient descent on the dense shared weight, started from zero.
/// Original passes every triple; Retrain passes the retain set.
MultiTaskModel train_reference(const MultiTaskDataset& ds, const Subset& triples,
                               const TrainConfig& cfg);

inline constexpr int kHessianParamGuard = 400;

/// Exact Hessian of subset_loss in the flattened parameters [vec_row(A);
/// vec_row(B)] (A row-major first, then B row-major).
MatrixXd flattened_hessian(const MultiTaskModel& model, const MultiTaskDataset& ds,
                           const Subset& subset);

/// Parameter layout shared by flattened_hessian and the finite-difference
/// checks.
VectorXd flatten_params(const MatrixXd& a, const MatrixXd& b);
void unflatten_params(const VectorXd& theta, MatrixXd& a, MatrixXd& b);

}  // namespace mtu
