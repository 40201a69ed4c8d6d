#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fd_check.hpp"
#include "mtu/tasks.hpp"

using namespace mtu;

namespace {

GenConfig small_config(std::uint64_t seed = 0) {
  GenConfig g;
  g.num_instances = 20;
  g.input_dim = 5;
  g.num_tasks = 3;
  g.shared_dim = 4;
  g.task_dims = {2, 3, 2};
  g.teacher_rank = 2;
  g.seed = seed;
  return g;
}

}  // namespace

TEST(Tasks, GeneratedShapes) {
  const auto ds = generate_synthetic(small_config());
  EXPECT_EQ(ds.num_instances(), 20);
  EXPECT_EQ(ds.input_dim(), 5);
  EXPECT_EQ(ds.num_tasks(), 3);
  EXPECT_EQ(ds.shared_dim(), 4);
  EXPECT_EQ(ds.triples().size(), 60u);
  EXPECT_EQ(ds.targets[1].cols(), 3);
  EXPECT_EQ(ds.heads[1].rows(), 3);
  EXPECT_EQ(ds.teacher.rows(), 5);
  EXPECT_EQ(ds.teacher.cols(), 4);
}

TEST(Tasks, GenerationIsDeterministic) {
  const auto a = generate_synthetic(small_config(4));
  const auto b = generate_synthetic(small_config(4));
  const auto c = generate_synthetic(small_config(5));
  EXPECT_TRUE(a.inputs == b.inputs);
  EXPECT_TRUE(a.targets[2] == b.targets[2]);
  EXPECT_FALSE(a.inputs == c.inputs);
}

TEST(Tasks, ValidationSharesTeacherAndHeads) {
  const auto cfg = small_config(2);
  const auto ds = generate_synthetic(cfg);
  const auto v10 = generate_validation(cfg, 10);
  const auto v30 = generate_validation(cfg, 30);
  EXPECT_TRUE(v10.teacher == ds.teacher);
  EXPECT_TRUE(v10.heads[0] == ds.heads[0]);
  EXPECT_EQ(v30.num_instances(), 30);
  EXPECT_FALSE(v10.inputs.topRows(1) == ds.inputs.topRows(1));
}

TEST(Tasks, TeacherFitsNoiselessTargets) {
  auto cfg = small_config(3);
  cfg.noise_std = 0.0;
  const auto ds = generate_synthetic(cfg);
  const auto m = dense_model(ds.teacher, ds.heads);
  EXPECT_LT(subset_loss(m, ds, ds.triples()), 1e-20);
}

TEST(Tasks, ConfigValidation) {
  auto g = small_config();
  g.task_dims = {2, 2};
  EXPECT_THROW(g.validate(), ConfigError);
  g = small_config();
  g.num_instances = 0;
  EXPECT_THROW(g.validate(), ConfigError);
  g = small_config();
  g.noise_std = -1.0;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Tasks, PartitionFourWay) {
  // N = 4, K = 2, X_f = {1}, T_f = {0}: one forget pair, one task-retain pair,
  // three inst-retain pairs, three clean pairs.
  auto g = small_config();
  g.num_instances = 4;
  g.num_tasks = 2;
  g.task_dims = {2, 2};
  const auto ds = generate_synthetic(g);
  const auto p = partition(ds, {1}, {0});
  EXPECT_EQ(p.forget, (Subset{{1, 0}}));
  EXPECT_EQ(p.retain_task, (Subset{{1, 1}}));
  EXPECT_EQ(p.retain_inst, (Subset{{0, 0}, {2, 0}, {3, 0}}));
  EXPECT_EQ(p.retain_clean, (Subset{{0, 1}, {2, 1}, {3, 1}}));
  EXPECT_EQ(p.retain_size(), 7u);
  EXPECT_FALSE(p.full_task(2));
}

TEST(Tasks, PartitionCoversGridDisjointly) {
  const auto ds = generate_synthetic(small_config());
  const auto p = partition(ds, {7, 3, 3, 11}, {2, 0});
  EXPECT_EQ(p.forget_instances, (std::vector<int>{3, 7, 11}));
  EXPECT_EQ(p.forget_tasks, (std::vector<int>{0, 2}));
  std::set<Triple> seen;
  for (const auto* s : {&p.forget, &p.retain_task, &p.retain_inst, &p.retain_clean}) {
    for (const auto& t : *s) EXPECT_TRUE(seen.insert(t).second);
  }
  EXPECT_EQ(seen.size(), ds.triples().size());
  EXPECT_EQ(p.forget.size(), 6u);
  const auto r = p.retain();
  EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
  EXPECT_EQ(r.size(), 54u);
}

TEST(Tasks, PartitionFullTaskHasNoTaskRetain) {
  const auto ds = generate_synthetic(small_config());
  const auto p = partition(ds, {0, 1}, {0, 1, 2});
  EXPECT_TRUE(p.full_task(3));
  EXPECT_TRUE(p.retain_task.empty());
  EXPECT_TRUE(p.retain_clean.empty());
  EXPECT_EQ(p.retain_inst.size(), 54u);
}

TEST(Tasks, PartitionErrors) {
  const auto ds = generate_synthetic(small_config());
  EXPECT_THROW(partition(ds, {20}, {0}), ConfigError);
  EXPECT_THROW(partition(ds, {0}, {3}), ConfigError);
  EXPECT_THROW(partition(ds, {}, {0}), ConfigError);
  EXPECT_THROW(partition(ds, {0}, {}), ConfigError);
  EXPECT_NO_THROW(partition(ds, {}, {0}, PartitionUse::evaluation));
}

TEST(Tasks, SampleForgetInstances) {
  const auto a = sample_forget_instances(200, 0.1, 7);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 20u);
  EXPECT_EQ(a, sample_forget_instances(200, 0.1, 7));
  EXPECT_NE(a, sample_forget_instances(200, 0.1, 8));
  EXPECT_EQ(sample_forget_instances(5, 0.01, 0).size(), 1u);
  EXPECT_EQ(sample_forget_instances(10, 0.3, 0).size(), 3u);
  EXPECT_THROW(sample_forget_instances(10, 1.5, 0), ConfigError);
}

TEST(Tasks, SubsetLossIsWeightedMean) {
  const auto ds = generate_synthetic(small_config(1));
  const auto m = dense_model(MatrixXd::Zero(5, 4), ds.heads);
  const Subset s{{0, 0}, {1, 2}, {4, 1}};
  const auto per = pair_losses(m, ds, s);
  double expect = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    // Zero weight: loss is half the squared target norm.
    const double direct = 0.5 * ds.targets[s[i].task].row(s[i].instance).squaredNorm();
    EXPECT_NEAR(per[i], direct, 1e-12);
    expect += ds.task_weights[s[i].task] * per[i];
  }
  EXPECT_NEAR(subset_loss(m, ds, s), expect / 3.0, 1e-12);
  EXPECT_THROW(subset_loss(m, ds, {}), EmptySubsetError);
}

TEST(Tasks, TaskGradientsSumToSubsetGradient) {
  const auto ds = generate_synthetic(small_config(2));
  const auto m = dense_model(ds.teacher * 0.5, ds.heads);
  const Subset s{{0, 0}, {1, 2}, {4, 0}, {5, 2}};
  const auto parts = weight_gradient_by_task(m, ds, s);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_FALSE(parts[1].has_value());
  const MatrixXd total = *parts[0] + *parts[2];
  EXPECT_LT((total - weight_gradient(m, ds, s)).norm(), 1e-14);
}

TEST(Tasks, FactorChainRule) {
  auto rng = substream(3, 3);
  LowRankEdit<double> e{MatrixXd::Zero(5, 4), MatrixXd(4, 2), MatrixXd(5, 2)};
  fill_normal(e.a, rng);
  fill_normal(e.b, rng);
  MatrixXd g(5, 4);
  fill_normal(g, rng);
  const auto f = factor_gradients(e, g);
  EXPECT_LT((f.a - g.transpose() * e.b).norm(), 1e-14);
  EXPECT_LT((f.b - g * e.a).norm(), 1e-14);
}

TEST(Tasks, FlattenRoundTrip) {
  MatrixXd a(2, 3), b(4, 3);
  a.setRandom();
  b.setRandom();
  const VectorXd th = flatten_params(a, b);
  EXPECT_EQ(th.size(), 18);
  // A row-major first.
  EXPECT_EQ(th(1), a(0, 1));
  EXPECT_EQ(th(3), a(1, 0));
  EXPECT_EQ(th(6 + 3), b(1, 0));
  MatrixXd a2(2, 3), b2(4, 3);
  unflatten_params(th, a2, b2);
  EXPECT_TRUE(a2 == a && b2 == b);
}

class FiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(FiniteDifference, GradientAndHessian) {
  const auto r = mtu::testing::fd_check(GetParam());
  EXPECT_LT(r.gradient_rel, 1e-5);
  EXPECT_LT(r.hessian_asym, 1e-8);
  EXPECT_LT(r.hessian_rel, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Configs, FiniteDifference, ::testing::Range(0, 20));

TEST(Tasks, HessianGuard) {
  GenConfig g;
  g.seed = 0;
  const auto ds = generate_synthetic(g);
  auto rng = substream(0, 1);
  MultiTaskModel m{make_edit(MatrixXd(MatrixXd::Zero(16, 8)), 20, 0.1, rng), ds.heads};
  ASSERT_GT(m.num_params(), kHessianParamGuard);
  EXPECT_THROW(flattened_hessian(m, ds, ds.triples()), SizeGuardError);
}

TEST(Tasks, HessianOfRankOneEditAtZeroFactors) {
  // With A = B = 0 the bilinear cross term is all that survives off the
  // Gauss-Newton block, and the Gauss-Newton part vanishes.
  const auto ds = generate_synthetic(small_config(6));
  MultiTaskModel m{{ds.teacher * 0.3, MatrixXd::Zero(4, 1), MatrixXd::Zero(5, 1)}, ds.heads};
  const Subset s = ds.triples();
  const MatrixXd h = flattened_hessian(m, ds, s);
  const MatrixXd g = weight_gradient(m, ds, s);
  // d^2 L / dA_j dB_a = G_{a j}.
  for (int j = 0; j < 4; ++j)
    for (int a = 0; a < 5; ++a) EXPECT_NEAR(h(j, 4 + a), g(a, j), 1e-12);
  EXPECT_LT(h.topLeftCorner(4, 4).norm(), 1e-14);
  EXPECT_LT(h.bottomRightCorner(5, 5).norm(), 1e-14);
}

TEST(Tasks, TrainReferenceConverges) {
  const auto ds = generate_synthetic(small_config(8));
  TrainConfig tc;
  const auto m = train_reference(ds, ds.triples(), tc);
  // Closed-form least squares on the weighted normal equations.
  const Subset all = ds.triples();
  const double trained = subset_loss(m, ds, all);
  const double teacher = subset_loss(dense_model(ds.teacher, ds.heads), ds, all);
  EXPECT_LE(trained, teacher + 1e-9);
  EXPECT_LT(weight_gradient(m, ds, all).norm(), 1e-5);
  tc.step_size = 1e3;
  EXPECT_THROW(train_reference(ds, all, tc), StepSizeError);
}
