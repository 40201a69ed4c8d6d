#pragma once

// Dense linear-algebra helpers shared by the surgery, subspace and theory
// code. Everything is templated on the scalar so property checks can be rerun
// in extended precision.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "mtu/errors.hpp"

namespace mtu {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

namespace detail {

template <typename A, typename B>
std::string shape_message(const char* op, const Eigen::MatrixBase<A>& a,
                          const Eigen::MatrixBase<B>& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
     << b.cols();
  return os.str();
}

}  // namespace detail

template <typename A, typename B>
void require_same_shape(const char* op, const Eigen::MatrixBase<A>& a,
                        const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(detail::shape_message(op, a, b));
  }
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// Frobenius inner product sum_ij a_ij b_ij.
template <typename A, typename B>
typename A::Scalar frob_inner(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require_same_shape("frob_inner", a, b);
  return a.derived().cwiseProduct(b.derived()).sum();
}

template <typename Derived>
typename Derived::Scalar frob_norm(const Eigen::MatrixBase<Derived>& a) {
  using std::sqrt;
  return sqrt(frob_inner(a, a));
}

/// Orthonormal basis for the column span of `m` (m has full column rank).
///
/// Classical Gram-Schmidt applied twice per column ("twice is enough"), which
/// keeps Q^T Q = I to working precision even for mildly ill-conditioned input.
/// A column is rejected as dependent when what survives orthogonalization is
/// below 1e-12 of its original norm.
template <typename Derived>
Matrix<typename Derived::Scalar> orthonormalize(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  using std::sqrt;
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  if (cols > rows) {
    throw DegenerateBasisError("orthonormalize: more columns than rows");
  }
  if (!all_finite(m)) {
    throw DimensionError("orthonormalize: non-finite input");
  }
  const Scalar threshold = Scalar(1e-12);
  Matrix<Scalar> q(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    Vector<Scalar> v = m.col(j);
    const Scalar original = v.norm();
    for (int pass = 0; pass < 2; ++pass) {
      if (j > 0) {
        const Vector<Scalar> coeffs = q.leftCols(j).transpose() * v;
        v.noalias() -= q.leftCols(j) * coeffs;
      }
    }
    const Scalar residual = v.norm();
    if (!(original > Scalar(0)) || residual < threshold * original) {
      std::ostringstream os;
      os << "orthonormalize: column " << j << " is linearly dependent on earlier columns";
      throw DegenerateBasisError(os.str());
    }
    q.col(j) = v / residual;
  }
  return q;
}

/// Solves h x = b for symmetric positive definite h via Cholesky.
template <typename H, typename B>
Matrix<typename H::Scalar> solve_spd(const Eigen::MatrixBase<H>& h, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename H::Scalar;
  using std::sqrt;
  if (h.rows() != h.cols()) {
    throw DimensionError("solve_spd: matrix is not square");
  }
  if (b.rows() != h.rows()) {
    throw DimensionError(detail::shape_message("solve_spd", h, b));
  }
  if (!all_finite(h) || !all_finite(b)) {
    throw DimensionError("solve_spd: non-finite input");
  }
  const Scalar asym = (h - h.transpose()).cwiseAbs().maxCoeff();
  const Scalar scale = std::max(Scalar(1), h.cwiseAbs().maxCoeff());
  if (h.size() > 0 && asym > Scalar(1e-8) * scale) {
    throw CurvatureError("solve_spd: matrix is not symmetric");
  }
  const Matrix<Scalar> sym = (h + h.transpose()) / Scalar(2);
  Eigen::LLT<Matrix<Scalar>> llt(sym);
  if (llt.info() != Eigen::Success) {
    throw CurvatureError("solve_spd: matrix is not positive definite");
  }
  // Cholesky can succeed on numerically semidefinite input; reject pivots that
  // collapse relative to the diagonal scale.
  const auto diag = llt.matrixLLT().diagonal();
  if (diag.size() > 0 && diag.minCoeff() <= Scalar(1e-14) * sqrt(scale)) {
    throw CurvatureError("solve_spd: matrix is numerically singular");
  }
  Matrix<Scalar> x = llt.solve(b.derived());
  // One step of iterative refinement keeps the residual at the 1e-9 level for
  // moderately conditioned systems.
  const Matrix<Scalar> r = b.derived() - sym * x;
  x += llt.solve(r);
  return x;
}

/// Largest singular value.
template <typename Derived>
typename Derived::Scalar spectral_norm(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) return Scalar(0);
  Eigen::JacobiSVD<Matrix<Scalar>> svd(m.derived());
  return svd.singularValues()(0);
}

}  // namespace mtu
