#pragma once

// Gradient surgery over a low-rank edit W~ = W* + B A^T: task projection,
// retain-aware orthogonalization, the combined update, and merging.

#include <array>
#include <functional>
#include <optional>
#include <utility>

#include "mtu/matlib.hpp"
#include "mtu/subspace.hpp"

namespace mtu {

template <typename Scalar>
struct LowRankEdit {
  Matrix<Scalar> w_star;  // d x k, frozen
  Matrix<Scalar> a;       // k x r
  Matrix<Scalar> b;       // d x r

  Eigen::Index rank() const noexcept { return a.cols(); }
  Eigen::Index input_dim() const noexcept { return w_star.rows(); }
  Eigen::Index shared_dim() const noexcept { return w_star.cols(); }

  void validate() const {
    if (a.rows() != w_star.cols() || b.rows() != w_star.rows() || a.cols() != b.cols()) {
      throw DimensionError("LowRankEdit: factor shapes do not match W* (need A: k x r, B: d x r)");
    }
  }
};

/// Zero-effect edit: A ~ N(0, init_scale^2), B = 0, so W~ = W* initially.
template <typename Scalar, typename Rng>
LowRankEdit<Scalar> make_edit(const Matrix<Scalar>& w_star, int rank, Scalar init_scale,
                              Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  LowRankEdit<Scalar> e{w_star, Matrix<Scalar>(w_star.cols(), rank),
                        Matrix<Scalar>::Zero(w_star.rows(), rank)};
  for (Eigen::Index j = 0; j < e.a.cols(); ++j)
    for (Eigen::Index i = 0; i < e.a.rows(); ++i) e.a(i, j) = init_scale * Scalar(normal(rng));
  return e;
}

template <typename Scalar>
Matrix<Scalar> merge(const LowRankEdit<Scalar>& edit) {
  edit.validate();
  return edit.w_star + edit.b * edit.a.transpose();
}

/// grad * P_t: restricts a factor gradient (columns indexed by rank) to the
/// task subspace.
template <typename Derived, typename Scalar>
Matrix<Scalar> project_task(const Eigen::MatrixBase<Derived>& grad, const TaskSubspace<Scalar>& p) {
  if (grad.cols() != p.rank()) {
    throw DimensionError("project_task: gradient columns must equal the edit rank");
  }
  return grad * p.projector();
}

/// Removes from g_f its component along g_r:
///   g_f - <g_f, g_r> / (||g_r||^2 + eps) * g_r.
/// With eps > 0 a zero retain gradient is a pass-through.
template <typename A, typename B>
Matrix<typename A::Scalar> orthogonalize(const Eigen::MatrixBase<A>& g_f,
                                         const Eigen::MatrixBase<B>& g_r,
                                         typename A::Scalar eps) {
  using Scalar = typename A::Scalar;
  require_same_shape("orthogonalize", g_f, g_r);
  if (eps < Scalar(0)) throw ConfigError("eps", "must be non-negative");
  const Scalar norm_sq = g_r.squaredNorm();
  const Scalar denom = norm_sq + eps;
  if (norm_sq == Scalar(0)) {
    if (eps == Scalar(0)) {
      throw DimensionError("orthogonalize: zero retain gradient with eps = 0");
    }
    return g_f;
  }
  const Scalar coeff = frob_inner(g_f, g_r) / denom;
  return g_f - coeff * g_r;
}

enum class RetainSource { clean = 0, inst = 1, task = 2 };
inline constexpr std::array<RetainSource, 3> kRetainOrder = {RetainSource::clean,
                                                             RetainSource::inst,
                                                             RetainSource::task};

inline const char* to_string(RetainSource s) {
  switch (s) {
    case RetainSource::clean: return "clean";
    case RetainSource::inst: return "inst";
    case RetainSource::task: return "task";
  }
  return "?";
}

/// Gradients of one trainable factor split by source. Absent sources (empty
/// subsets in the current setting) are nullopt.
template <typename Scalar>
struct SourceGradients {
  std::optional<Matrix<Scalar>> forget;
  std::array<std::optional<Matrix<Scalar>>, 3> retain;

  std::optional<Matrix<Scalar>>& operator[](RetainSource s) {
    return retain[static_cast<std::size_t>(s)];
  }
  const std::optional<Matrix<Scalar>>& operator[](RetainSource s) const {
    return retain[static_cast<std::size_t>(s)];
  }
};

template <typename Scalar>
struct GradientBundle {
  SourceGradients<Scalar> a;  // each k x r
  SourceGradients<Scalar> b;  // each d x r
};

/// Orthogonalization primitive with the signature of orthogonalize(); lets the
/// verification harness substitute a faulty variant.
template <typename Scalar>
using OrthogonalizeFn =
    std::function<Matrix<Scalar>(const Matrix<Scalar>&, const Matrix<Scalar>&, Scalar)>;

template <typename Scalar>
Matrix<Scalar> orthogonalize_default(const Matrix<Scalar>& g_f, const Matrix<Scalar>& g_r,
                                     Scalar eps) {
  return orthogonalize(g_f, g_r, eps);
}

/// Stages of the sequential projection that are applied. All three are on by
/// default; ablations switch one off.
struct StageMask {
  std::array<bool, 3> enabled{true, true, true};

  bool operator[](RetainSource s) const { return enabled[static_cast<std::size_t>(s)]; }
  static StageMask without(RetainSource s) {
    StageMask m;
    m.enabled[static_cast<std::size_t>(s)] = false;
    return m;
  }
};

/// Projects g_f successively off the clean, inst and task retain gradients of
/// one factor. Empty or masked sources are skipped.
template <typename Scalar>
Matrix<Scalar> sequential_orthogonalize(const SourceGradients<Scalar>& grads, Scalar eps,
                                        const StageMask& mask = {},
                                        const OrthogonalizeFn<Scalar>& orth =
                                            orthogonalize_default<Scalar>) {
  if (!grads.forget) throw EmptySubsetError("sequential_orthogonalize: forget source is empty");
  Matrix<Scalar> g = *grads.forget;
  for (RetainSource s : kRetainOrder) {
    const auto& r = grads[s];
    if (!r || !mask[s]) continue;
    g = orth(g, *r, eps);
  }
  return g;
}

/// Both factors, orthogonalized independently.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> sequential_orthogonalize(
    const GradientBundle<Scalar>& bundle, Scalar eps, const StageMask& mask = {}) {
  return {sequential_orthogonalize(bundle.a, eps, mask),
          sequential_orthogonalize(bundle.b, eps, mask)};
}

/// A <- A - eta1 retain_A + eta2 forget_perp_A, likewise for B. W* is copied
/// through untouched.
template <typename Scalar>
LowRankEdit<Scalar> apply_update(const LowRankEdit<Scalar>& edit, const Matrix<Scalar>& retain_a,
                                 const Matrix<Scalar>& retain_b,
                                 const Matrix<Scalar>& forget_perp_a,
                                 const Matrix<Scalar>& forget_perp_b, Scalar eta1, Scalar eta2) {
  if (eta1 < Scalar(0) || eta2 < Scalar(0)) {
    throw ConfigError("eta", "step sizes must be non-negative");
  }
  require_same_shape("apply_update(A, retain)", edit.a, retain_a);
  require_same_shape("apply_update(A, forget)", edit.a, forget_perp_a);
  require_same_shape("apply_update(B, retain)", edit.b, retain_b);
  require_same_shape("apply_update(B, forget)", edit.b, forget_perp_b);
  LowRankEdit<Scalar> out = edit;
  out.a += -eta1 * retain_a + eta2 * forget_perp_a;
  out.b += -eta1 * retain_b + eta2 * forget_perp_b;
  return out;
}

}  // namespace mtu
