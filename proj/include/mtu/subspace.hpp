#pragma once

// Per-task orthonormal bases U_t (r x s) inside the shared rank-r edit space,
// their projectors P_t = U_t U_t^T, and the mutual-alignment regularizer.

#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

#include "mtu/matlib.hpp"

namespace mtu {

enum class SubspaceMode { disjoint_blocks, random };

template <typename Scalar>
class TaskSubspace {
 public:
  TaskSubspace() = default;

  // Takes any full-column-rank basis and orthonormalizes it.
  TaskSubspace(int task_id, const Matrix<Scalar>& basis)
      : task_id_(task_id), basis_(orthonormalize(basis)) {
    projector_ = basis_ * basis_.transpose();
  }

  // Adopts an already-orthonormal basis verbatim (checkpoint loading), so a
  // load/save round trip is bit-identical.
  static TaskSubspace from_orthonormal(int task_id, const Matrix<Scalar>& basis) {
    const Matrix<Scalar> gram = basis.transpose() * basis;
    const Matrix<Scalar> eye = Matrix<Scalar>::Identity(basis.cols(), basis.cols());
    if (basis.cols() > basis.rows() || (gram - eye).cwiseAbs().maxCoeff() > Scalar(1e-8)) {
      throw DegenerateBasisError("TaskSubspace: stored basis is not orthonormal");
    }
    TaskSubspace s;
    s.task_id_ = task_id;
    s.basis_ = basis;
    s.projector_ = basis * basis.transpose();
    return s;
  }

  int task_id() const noexcept { return task_id_; }
  Eigen::Index rank() const noexcept { return basis_.rows(); }
  Eigen::Index dim() const noexcept { return basis_.cols(); }
  const Matrix<Scalar>& basis() const noexcept { return basis_; }
  const Matrix<Scalar>& projector() const noexcept { return projector_; }

 private:
  int task_id_ = 0;
  Matrix<Scalar> basis_;
  Matrix<Scalar> projector_;
};

template <typename Scalar>
using SubspaceSet = std::vector<TaskSubspace<Scalar>>;

/// Default subspace width when none is configured: floor(r / K), at least 1.
inline int default_subspace_dim(int rank, int num_tasks) {
  return std::max(1, rank / std::max(1, num_tasks));
}

/// Disjoint blocks when they fit, random otherwise.
inline SubspaceMode default_subspace_mode(int rank, int num_tasks, int dim) {
  return num_tasks * dim <= rank ? SubspaceMode::disjoint_blocks : SubspaceMode::random;
}

template <typename Scalar = double>
SubspaceSet<Scalar> init_subspaces(int num_tasks, int rank, int dim, SubspaceMode mode,
                                   std::uint64_t seed) {
  if (num_tasks < 1 || dim < 1 || dim > rank) {
    std::ostringstream os;
    os << "init_subspaces: need 1 <= s <= r and K >= 1 (K=" << num_tasks << ", r=" << rank
       << ", s=" << dim << ")";
    throw CapacityError(os.str());
  }
  SubspaceSet<Scalar> out;
  out.reserve(static_cast<std::size_t>(num_tasks));
  if (mode == SubspaceMode::disjoint_blocks) {
    if (num_tasks * dim > rank) {
      std::ostringstream os;
      os << "init_subspaces: disjoint blocks need K*s <= r (K=" << num_tasks << ", s=" << dim
         << ", r=" << rank << ")";
      throw CapacityError(os.str());
    }
    for (int t = 0; t < num_tasks; ++t) {
      Matrix<Scalar> u = Matrix<Scalar>::Zero(rank, dim);
      for (int j = 0; j < dim; ++j) u(t * dim + j, j) = Scalar(1);
      out.emplace_back(t, u);
    }
    return out;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < num_tasks; ++t) {
    Matrix<Scalar> g(rank, dim);
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = Scalar(normal(rng));
    out.emplace_back(t, g);
  }
  return out;
}

template <typename Scalar>
struct Alignment {
  Scalar frob_sq;   // ||U_t^T U_t'||_F^2, in [0, s]
  Scalar spectral;  // ||U_t^T U_t'||_2, the gamma bound, in [0, 1]
};

template <typename Scalar>
Alignment<Scalar> alignment(const TaskSubspace<Scalar>& u, const TaskSubspace<Scalar>& v) {
  if (u.rank() != v.rank()) {
    throw DimensionError("alignment: subspaces live in different rank spaces");
  }
  const Matrix<Scalar> cross = u.basis().transpose() * v.basis();
  return {cross.squaredNorm(), spectral_norm(cross)};
}

/// Sum over ordered pairs t != t' of ||U_t^T U_t'||_F^2.
template <typename Scalar>
Scalar total_alignment(const SubspaceSet<Scalar>& set) {
  Scalar total(0);
  for (std::size_t t = 0; t < set.size(); ++t)
    for (std::size_t u = 0; u < set.size(); ++u)
      if (t != u) total += alignment(set[t], set[u]).frob_sq;
  return total;
}

/// One gradient step on the pairwise alignment penalty, then
/// re-orthonormalization of each basis. The step for U_t uses
/// 2 sum_{t' != t} P_t' U_t, i.e. reg_weight scales the unordered-pair sum.
template <typename Scalar>
SubspaceSet<Scalar> regularize_step(const SubspaceSet<Scalar>& set, Scalar reg_weight,
                                    Scalar step_size) {
  if (reg_weight < Scalar(0) || step_size < Scalar(0)) {
    throw ConfigError("reg_weight", "regularizer weight and step must be non-negative");
  }
  if (reg_weight == Scalar(0) || step_size == Scalar(0) || set.size() < 2) return set;
  SubspaceSet<Scalar> out;
  out.reserve(set.size());
  for (std::size_t t = 0; t < set.size(); ++t) {
    Matrix<Scalar> grad = Matrix<Scalar>::Zero(set[t].rank(), set[t].dim());
    for (std::size_t u = 0; u < set.size(); ++u) {
      if (u == t) continue;
      grad.noalias() += Scalar(2) * set[u].projector() * set[t].basis();
    }
    const Matrix<Scalar> moved = set[t].basis() - step_size * reg_weight * grad;
    try {
      out.emplace_back(set[t].task_id(), moved);
    } catch (const DegenerateBasisError& e) {
      throw DegenerateBasisError(std::string("regularize_step: basis collapsed: ") + e.what());
    }
  }
  return out;
}

}  // namespace mtu
