#include <gtest/gtest.h>

#include <random>

#include "mtu/matlib.hpp"
#include "mtu/rng.hpp"

using namespace mtu;

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  auto rng = substream(seed, 1);
  MatrixXd m(r, c);
  fill_normal(m, rng);
  return m;
}

}  // namespace

TEST(Matlib, FrobInnerMatchesTraceForm) {
  const MatrixXd a = random_matrix(5, 3, 1);
  const MatrixXd b = random_matrix(5, 3, 2);
  EXPECT_NEAR(frob_inner(a, b), (a.transpose() * b).trace(), 1e-12);
  EXPECT_NEAR(frob_norm(a), a.norm(), 1e-12);
  EXPECT_THROW(frob_inner(a, b.transpose()), DimensionError);
}

TEST(Matlib, OrthonormalizeSpansInput) {
  const MatrixXd m = random_matrix(8, 4, 3);
  const MatrixXd q = orthonormalize(m);
  EXPECT_LT((q.transpose() * q - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-13);
  // Same span: projecting m onto span(q) leaves nothing behind.
  EXPECT_LT((m - q * (q.transpose() * m)).norm(), 1e-12 * m.norm());
}

TEST(Matlib, OrthonormalizeRejectsDependentColumns) {
  MatrixXd m = random_matrix(6, 3, 4);
  m.col(2) = 2.0 * m.col(0) - m.col(1);
  EXPECT_THROW(orthonormalize(m), DegenerateBasisError);
  EXPECT_THROW(orthonormalize(random_matrix(3, 4, 5)), DegenerateBasisError);
  MatrixXd z = MatrixXd::Zero(4, 1);
  EXPECT_THROW(orthonormalize(z), DegenerateBasisError);
}

TEST(Matlib, OrthonormalizeLongDouble) {
  const Matrix<long double> m = random_matrix(6, 3, 6).cast<long double>();
  const Matrix<long double> q = orthonormalize(m);
  EXPECT_LT((q.transpose() * q - Matrix<long double>::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-17L);
}

TEST(Matlib, SolveSpd) {
  const MatrixXd g = random_matrix(6, 6, 7);
  const MatrixXd h = g * g.transpose() + MatrixXd::Identity(6, 6);
  const MatrixXd b = random_matrix(6, 2, 8);
  const MatrixXd x = solve_spd(h, b);
  EXPECT_LT((h * x - b).norm(), 1e-10 * b.norm());
}

TEST(Matlib, SolveSpdRejectsIndefiniteAndAsymmetric) {
  MatrixXd h = MatrixXd::Identity(3, 3);
  h(2, 2) = -1.0;
  EXPECT_THROW(solve_spd(h, VectorXd::Ones(3)), CurvatureError);
  MatrixXd s = MatrixXd::Identity(3, 3);
  s(0, 1) = 0.5;
  EXPECT_THROW(solve_spd(s, VectorXd::Ones(3)), CurvatureError);
  EXPECT_THROW(solve_spd(MatrixXd::Identity(3, 3), VectorXd::Ones(4)), DimensionError);
  // Rank-deficient PSD.
  const VectorXd v = VectorXd::Ones(3);
  EXPECT_THROW(solve_spd(MatrixXd(v * v.transpose()), v), CurvatureError);
}

TEST(Matlib, SpectralNorm) {
  MatrixXd d = MatrixXd::Zero(3, 2);
  d(0, 0) = 0.5;
  d(1, 1) = -2.0;
  EXPECT_NEAR(spectral_norm(d), 2.0, 1e-14);
  EXPECT_EQ(spectral_norm(MatrixXd(0, 0)), 0.0);
}

TEST(Rng, SubstreamsAreReproducibleAndDistinct) {
  auto a = substream(42, 1), b = substream(42, 1), c = substream(42, 2);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
}
