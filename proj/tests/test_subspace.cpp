#include <gtest/gtest.h>

#include "mtu/rng.hpp"
#include "mtu/subspace.hpp"

using namespace mtu;

TEST(Subspace, DisjointBlocksAreMutuallyOrthogonal) {
  const auto set = init_subspaces(3, 6, 2, SubspaceMode::disjoint_blocks, 0);
  ASSERT_EQ(set.size(), 3u);
  for (std::size_t t = 0; t < set.size(); ++t) {
    EXPECT_EQ(set[t].task_id(), static_cast<int>(t));
    EXPECT_EQ(set[t].rank(), 6);
    EXPECT_EQ(set[t].dim(), 2);
    for (std::size_t u = t + 1; u < set.size(); ++u) {
      const auto al = alignment(set[t], set[u]);
      EXPECT_EQ(al.frob_sq, 0.0);
      EXPECT_EQ(al.spectral, 0.0);
    }
  }
  EXPECT_EQ(total_alignment(set), 0.0);
}

TEST(Subspace, ProjectorIsIdempotentSymmetric) {
  const auto set = init_subspaces(2, 8, 3, SubspaceMode::random, 11);
  for (const auto& s : set) {
    const MatrixXd& p = s.projector();
    EXPECT_LT((p * p - p).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(p.trace(), 3.0, 1e-12);
  }
}

TEST(Subspace, CapacityChecks) {
  EXPECT_THROW(init_subspaces(3, 4, 2, SubspaceMode::disjoint_blocks, 0), CapacityError);
  EXPECT_THROW(init_subspaces(2, 4, 5, SubspaceMode::random, 0), CapacityError);
  EXPECT_THROW(init_subspaces(0, 4, 1, SubspaceMode::random, 0), CapacityError);
  EXPECT_EQ(default_subspace_dim(6, 3), 2);
  EXPECT_EQ(default_subspace_dim(2, 3), 1);
  EXPECT_EQ(default_subspace_mode(6, 3, 2), SubspaceMode::disjoint_blocks);
  EXPECT_EQ(default_subspace_mode(2, 3, 1), SubspaceMode::random);
}

TEST(Subspace, AlignmentBoundsAndIdentity) {
  const auto set = init_subspaces(2, 5, 2, SubspaceMode::random, 3);
  const auto self = alignment(set[0], set[0]);
  EXPECT_NEAR(self.frob_sq, 2.0, 1e-12);
  EXPECT_NEAR(self.spectral, 1.0, 1e-12);
  const auto cross = alignment(set[0], set[1]);
  EXPECT_GE(cross.frob_sq, 0.0);
  EXPECT_LE(cross.frob_sq, 2.0 + 1e-12);
  EXPECT_LE(cross.spectral, 1.0 + 1e-12);
  // frob_sq = tr(P_t P_t').
  EXPECT_NEAR(cross.frob_sq, (set[0].projector() * set[1].projector()).trace(), 1e-12);
}

TEST(Subspace, RegularizeStepReducesAlignment) {
  auto set = init_subspaces(3, 6, 2, SubspaceMode::random, 5);
  double prev = total_alignment(set);
  for (int i = 0; i < 20; ++i) {
    set = regularize_step(set, 1.0, 0.05);
    const double now = total_alignment(set);
    EXPECT_LE(now, prev + 1e-12);
    prev = now;
    for (const auto& s : set) {
      EXPECT_LT((s.basis().transpose() * s.basis() - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
  EXPECT_THROW(regularize_step(set, -1.0, 0.1), ConfigError);
}

TEST(Subspace, RegularizeStepWithZeroStepIsIdentity) {
  const auto set = init_subspaces(2, 4, 2, SubspaceMode::disjoint_blocks, 0);
  const auto same = regularize_step(set, 1.0, 0.0);
  for (std::size_t t = 0; t < set.size(); ++t) {
    EXPECT_LT((same[t].basis() - set[t].basis()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Subspace, FromOrthonormalKeepsBasisVerbatim) {
  const auto set = init_subspaces(1, 5, 3, SubspaceMode::random, 9);
  const auto copy = TaskSubspace<double>::from_orthonormal(0, set[0].basis());
  EXPECT_TRUE(copy.basis() == set[0].basis());
  MatrixXd bad = set[0].basis();
  bad(0, 0) += 1e-3;
  EXPECT_THROW(TaskSubspace<double>::from_orthonormal(0, bad), DegenerateBasisError);
}
