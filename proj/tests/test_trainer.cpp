#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mgdl/network.hpp"
#include "mgdl/trainer.hpp"

using namespace mgdl;

namespace {

struct Small {
  Dataset train;
  Dataset test;
  TrainConfig cfg;
};

Small small_problem(std::size_t grades = 3, std::vector<std::size_t> epochs = {6, 6, 6}) {
  Small s;
  const auto f = make_f1_target();
  s.train = make_dataset(*f, 400, Sampling::uniform_random, 11);
  s.test = make_dataset(*f, 200, Sampling::uniform_random, 12);
  s.cfg = TrainConfig::uniform(grades, 8, 2, std::move(epochs));
  s.cfg.batch_size = 50;
  s.cfg.lr0 = 3e-3;
  s.cfg.seed = 5;
  return s;
}

}  // namespace

TEST(Dataset, GridSamplingFollowsLatticeOrder) {
  const auto f = make_f2_target();
  const auto ds = make_dataset(*f, 25, Sampling::grid);
  const VerificationGrid g(2, 5);
  for (std::size_t i = 0; i < 25; ++i) {
    const auto p = g.point(i);
    EXPECT_EQ(ds.x(0, static_cast<Eigen::Index>(i)), p[0]);
    EXPECT_EQ(ds.x(1, static_cast<Eigen::Index>(i)), p[1]);
    EXPECT_EQ(ds.y(static_cast<Eigen::Index>(i)), f2_value(p[0], p[1]));
  }
  EXPECT_THROW(make_dataset(*f, 24, Sampling::grid), ParameterError);
  EXPECT_THROW(make_dataset(*f, 0, Sampling::uniform_random), ParameterError);
}

TEST(Dataset, UniformSamplingIsSeededAndCentred) {
  const auto f = make_f1_target();
  const auto a = make_dataset(*f, 10000, Sampling::uniform_random, 1);
  const auto b = make_dataset(*f, 10000, Sampling::uniform_random, 1);
  const auto c = make_dataset(*f, 10000, Sampling::uniform_random, 2);
  EXPECT_EQ(a.x, b.x);
  EXPECT_NE(a.x, c.x);
  const double sigma = std::sqrt(1.0 / 12.0 / 10000.0);
  EXPECT_NEAR(a.x.mean(), 0.5, 3 * sigma);
  EXPECT_GE(a.x.minCoeff(), 0.0);
  EXPECT_LE(a.x.maxCoeff(), 1.0);
}

TEST(Config, LearningRateSchedule) {
  TrainConfig c = TrainConfig::uniform(2, 4, 1, {10, 20});
  c.lr0 = 1e-3;
  c.lr_step = 20;
  EXPECT_EQ(c.learning_rate(0), 1e-3);
  EXPECT_EQ(c.learning_rate(19), 1e-3);
  EXPECT_DOUBLE_EQ(c.learning_rate(20), 0.9e-3);
  EXPECT_DOUBLE_EQ(c.learning_rate(45), 0.81e-3);
  EXPECT_EQ(c.total_epochs(), 30u);
  c.epochs_per_grade = {1};
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(GradientCheck, SmallHeadMatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  const Head h = init_head(1, {4, 4}, rng);
  const auto ds = make_dataset(*make_f1_target(), 64, Sampling::uniform_random, 4);
  const auto rep = gradient_check(h, ds.x, ds.y.transpose(), 100, 17);
  EXPECT_EQ(rep.probes, 100u);
  EXPECT_LE(rep.max_rel_error, 1e-4);
}

TEST(GradientCheck, TwoDimensionalDeeperHead) {
  std::mt19937_64 rng(8);
  const Head h = init_head(2, {6, 5, 4}, rng);
  const auto ds = make_dataset(*make_f2_target(), 49, Sampling::grid);
  EXPECT_LE(gradient_check(h, ds.x, ds.y.transpose(), 200, 2).max_rel_error, 1e-4);
}

TEST(Optimizer, FrozenBlockCannotBeStepped) {
  std::mt19937_64 rng(1);
  Head h = init_head(1, {3}, rng);
  h.block.trainable = false;
  HeadGradient g;
  const auto ds = make_dataset(*make_f1_target(), 10, Sampling::uniform_random, 0);
  head_loss(h, ds.x, ds.y.transpose(), &g);
  AdamState s;
  EXPECT_THROW(optimizer_step(h, g, 1e-3, OptimizerKind::adam, s), ContractViolation);
}

TEST(Mgdl, FrozenGradesKeepTheirChecksums) {
  auto s = small_problem();
  const auto res = mgdl_train(s.train, s.test, s.cfg);
  ASSERT_EQ(res.frozen_checksums.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(checksum(res.model.grades[k]), res.frozen_checksums[k]);
    EXPECT_FALSE(res.model.grades[k].block.trainable);
  }
  EXPECT_NE(res.frozen_checksums[0], res.frozen_checksums[1]);
}

TEST(Mgdl, ResidualTargetsMatchTheTruncatedModel) {
  auto s = small_problem();
  const auto res = mgdl_train(s.train, s.test, s.cfg);
  const Eigen::RowVectorXd y = s.train.y.transpose();
  for (std::size_t m = 0; m < 3; ++m) {
    const Eigen::RowVectorXd expect = y - res.model.predict(s.train.x, m);
    EXPECT_LE((res.residual_targets[m] - expect).cwiseAbs().maxCoeff(), 1e-10) << "grade " << m;
  }
  for (std::size_t m = 1; m < 3; ++m) {
    EXPECT_EQ(res.start_residual_mse[m], res.final_mse[m - 1]) << "grade " << m;
  }
  EXPECT_NEAR(res.final_mse[2], mean_square(y - res.model.predict(s.train.x)), 1e-12);
}

TEST(Mgdl, TraceLayout) {
  auto s = small_problem();
  const auto res = mgdl_train(s.train, s.test, s.cfg);
  EXPECT_EQ(res.trace.grade_boundaries, (std::vector<std::size_t>{0, 6, 12}));
  // One initial row per grade plus one row per epoch.
  EXPECT_EQ(res.trace.per_epoch.size(), 3u + 18u);
  EXPECT_EQ(res.trace.last().epoch, 18u);
  EXPECT_EQ(res.trace.final_train_mse(3), res.final_mse[2]);
  std::ostringstream out;
  res.trace.write_csv(out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "epoch,grade,train_mse,test_mse,test_max");
}

TEST(Mgdl, SingleGradeEqualsFcnn) {
  auto s = small_problem(1, {8});
  const auto a = mgdl_train(s.train, s.test, s.cfg);
  const auto b = fcnn_train(s.train, s.test, s.cfg);
  ASSERT_EQ(a.trace.per_epoch.size(), b.trace.per_epoch.size());
  for (std::size_t i = 0; i < a.trace.per_epoch.size(); ++i) {
    EXPECT_EQ(a.trace.per_epoch[i].train_mse, b.trace.per_epoch[i].train_mse);
  }
  EXPECT_EQ(flatten(a.model.grades[0]), flatten(b.model));
}

TEST(Mgdl, ZeroEpochsKeepsInitialisation) {
  auto s = small_problem(2, {0, 0});
  const auto res = mgdl_train(s.train, s.test, s.cfg);
  EXPECT_EQ(res.trace.per_epoch.size(), 2u);
  EXPECT_EQ(res.trace.per_epoch[0].train_mse, res.final_mse[0]);
  EXPECT_EQ(res.trace.per_epoch[1].train_mse, res.final_mse[1]);
}

TEST(Mgdl, SameSeedIsDeterministic) {
  auto s = small_problem();
  const auto a = mgdl_train(s.train, s.test, s.cfg);
  const auto b = mgdl_train(s.train, s.test, s.cfg);
  EXPECT_EQ(a.frozen_checksums, b.frozen_checksums);
  EXPECT_EQ(a.final_mse, b.final_mse);
  s.cfg.seed = 6;
  const auto c = mgdl_train(s.train, s.test, s.cfg);
  EXPECT_NE(a.frozen_checksums, c.frozen_checksums);
}

TEST(Mgdl, NonFiniteLossNamesGradeAndEpoch) {
  auto s = small_problem();
  s.train.y(3) = std::numeric_limits<double>::quiet_NaN();
  try {
    mgdl_train(s.train, s.test, s.cfg);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("grade 1"), std::string::npos) << what;
    EXPECT_NE(what.find("epoch 1"), std::string::npos) << what;
  }
}

TEST(Export, NetworksReproducePredictions) {
  auto s = small_problem();
  const auto res = mgdl_train(s.train, s.test, s.cfg);
  const auto fc = fcnn_train(s.train, s.test, s.cfg);
  const auto net = to_network(res.model, 1);
  const auto fnet = to_network(fc.model, 1);
  EXPECT_TRUE(net.trained);
  ASSERT_EQ(net.size(), 3u);
  const Eigen::RowVectorXd pm = res.model.predict(s.test.x);
  const Eigen::RowVectorXd pf = head_predict(fc.model, s.test.x);
  for (Eigen::Index i = 0; i < s.test.x.cols(); ++i) {
    const double x[] = {s.test.x(0, i)};
    EXPECT_NEAR(eval_network(net, x), pm(i), 1e-12);
    EXPECT_NEAR(eval_network(fnet, x), pf(i), 1e-12);
  }
  const auto back = network_from_json(nlohmann::json::parse(network_to_json(net).dump()));
  EXPECT_TRUE(back.trained);
  const double x[] = {0.37};
  EXPECT_EQ(eval_network(back, x), eval_network(net, x));
}

TEST(BoundaryDrops, DetectsEarlyImprovement) {
  TrainTrace t;
  t.grade_boundaries = {0, 10};
  for (std::size_t e = 0; e <= 10; ++e) t.per_epoch.push_back({e, 1, 1.0 - 0.05 * e, 0, 0});
  t.per_epoch.push_back({10, 2, 0.9, 0, 0});
  t.per_epoch.push_back({11, 2, 0.4, 0, 0});
  for (std::size_t e = 12; e <= 20; ++e) t.per_epoch.push_back({e, 2, 0.3, 0, 0});
  EXPECT_TRUE(boundary_drops(t, {10, 10}));
  t.per_epoch[12].train_mse = 0.6;
  EXPECT_FALSE(boundary_drops(t, {10, 10}));
}
