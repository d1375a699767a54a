#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mgdl/contraction.hpp"

using namespace mgdl;

namespace {

ResidualState grid_state(std::shared_ptr<const TargetFunction> f, std::size_t m) {
  return ResidualState::initial(f, VerificationGrid(f->dim, m));
}

std::shared_ptr<const TargetFunction> shifted_identity() {
  return make_target("x-1/2", 1, [](std::span<const double> x) { return x[0] - 0.5; },
                     ModulusModel::lipschitz(1.0));
}

}  // namespace

TEST(Epsilon, BoundAndValidation) {
  EXPECT_DOUBLE_EQ(epsilon_bound(1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(epsilon_bound(2), 0.2);
  EXPECT_NO_THROW(validate_epsilon(0.25, 1));
  EXPECT_THROW(validate_epsilon(0.4, 2), ParameterError);
  EXPECT_THROW(validate_epsilon(0.2, 2), ParameterError);
  EXPECT_THROW(validate_epsilon(0.0, 1), ParameterError);
  EXPECT_LT(default_epsilon(3), epsilon_bound(3));
}

TEST(ComputeDelta, LipschitzClosedForm) {
  const auto d = compute_delta(0.25, 1.0, ModulusModel::lipschitz(4.0), 1);
  ASSERT_TRUE(d);
  EXPECT_DOUBLE_EQ(*d, 0.03125);
}

TEST(ComputeDelta, BisectionAgreesWithClosedForm) {
  // The same slope written as a table goes through the bisection branch.
  const auto tab = compute_delta(0.25, 1.0, ModulusModel::tabulated({{0, 0}, {1, 4}}), 1);
  ASSERT_TRUE(tab);
  EXPECT_NEAR(*tab, 0.03125, 1e-12);
  const auto tab2 = compute_delta(0.1, 2.0, ModulusModel::tabulated({{0, 0}, {1, 10}}), 2);
  EXPECT_NEAR(*tab2, 1.0 / (20.0 * std::sqrt(2.0)), 1e-12);
}

TEST(ComputeDelta, TwoDimensionalClosedForm) {
  const auto d = compute_delta(0.1, 2.0, ModulusModel::lipschitz(10.0), 2);
  ASSERT_TRUE(d);
  EXPECT_NEAR(*d, 1.0 / (20.0 * std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(*d, 0.035355, 1e-6);
}

TEST(ComputeDelta, ZeroModulusHitsCapAndZeroSupIsEmpty) {
  EXPECT_EQ(*compute_delta(0.25, 1.0, ModulusModel::lipschitz(0.0), 1), kDeltaCap);
  EXPECT_LT(kDeltaCap, 1.0);
  EXPECT_FALSE(compute_delta(0.25, 0.0, ModulusModel::lipschitz(3.0), 1));
}

TEST(ComputeDelta, SatisfiesDefiningInequality) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.1, 50.0);
  for (int i = 0; i < 200; ++i) {
    const double L = u(rng);
    for (std::size_t d : {1u, 2u, 3u}) {
      const double eps = 0.5 * epsilon_bound(d);
      const auto mod = ModulusModel::tabulated({{0, 0}, {0.01, 0.01 * L}, {1, 2 * L}});
      const double delta = *compute_delta(eps, 1.0, mod, d);
      const double budget = (1 - eps - std::ldexp(eps, static_cast<int>(d)));
      EXPECT_LE(mod.bound(2 * std::sqrt(double(d)) * delta), budget * (1 + 1e-12));
      if (delta < kDeltaCap) {
        EXPECT_GT(mod.bound(2 * std::sqrt(double(d)) * delta * (1 + 1e-9)), budget);
      }
    }
  }
}

TEST(SidePlan, NoPositivePartGivesNoAtoms) {
  const auto s = grid_state(make_constant_target(1, -1.0), 65);
  EXPECT_TRUE(build_side_plan(s, Sign::positive, 0.25).atoms.empty());
}

TEST(SidePlan, ConstantOneSelectsEveryIntersectingCube) {
  const auto s = grid_state(make_constant_target(1, 1.0), 4097);
  const PlanSide side = build_side_plan(s, Sign::positive, 0.25);
  ASSERT_FALSE(side.atoms.empty());
  // Every lattice cube meeting [0,1] must appear.
  const auto first = static_cast<std::int64_t>(std::floor(0.0 / side.delta)) - 1;
  const auto last = static_cast<std::int64_t>(std::floor(1.0 / side.delta));
  std::vector<std::int64_t> have;
  for (const auto& a : side.atoms) have.push_back(a.cube.index[0]);
  for (std::int64_t b = first; b <= last; ++b) {
    const double lo = b * side.delta, hi = (b + 1) * side.delta;
    if (hi < 0.0 || lo > 1.0) continue;
    EXPECT_NE(std::find(have.begin(), have.end(), b), have.end()) << "beta=" << b;
  }
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    const double x[] = {s.grid.coordinate(i)};
    bool covered = false;
    for (const auto& a : side.atoms) covered = covered || a.cube.contains(x);
    EXPECT_TRUE(covered) << "x=" << x[0];
  }
}

TEST(SidePlan, F1WitnessesCertifiedByDenseScan) {
  auto f = make_f1_target();
  const auto s = grid_state(f, 16385);
  const PlanSide side = build_side_plan(s, Sign::positive, 0.25);
  ASSERT_GT(side.atoms.size(), 10u);
  const double thr = 0.75 * side.m;
  const std::size_t dense_m = (std::size_t{1} << 18) + 1;
  const double hd = 1.0 / static_cast<double>(dense_m - 1);
  const double h = s.grid.spacing();
  for (const auto& a : side.atoms) {
    ASSERT_EQ(a.witness.size(), 1u);
    EXPECT_GE(f1_value(a.witness[0]), thr);
    EXPECT_TRUE(a.cube.contains(a.witness));
    // Oracle: some dense-grid point of the true superlevel set lies in the
    // cube enlarged by one verification-grid spacing.
    const double lo = std::max(0.0, a.cube.center[0] - 0.5 * a.cube.side - h);
    const double hi = std::min(1.0, a.cube.center[0] + 0.5 * a.cube.side + h);
    bool found = false;
    for (auto i = static_cast<std::size_t>(lo / hd); i * hd <= hi && !found; ++i) {
      found = f1_value(i * hd) >= thr;
    }
    EXPECT_TRUE(found) << "cube centre " << a.cube.center[0];
  }
}

TEST(SidePlan, CoarseGridIsReported) {
  const auto s = grid_state(make_f1_target(), 65);
  try {
    build_side_plan(s, Sign::positive, 0.25);
    FAIL() << "expected GridTooCoarse";
  } catch (const GridTooCoarse& e) {
    EXPECT_GT(e.required_spacing(), 0.0);
    EXPECT_LT(e.required_spacing(), s.grid.spacing());
  }
}

TEST(BalancedPlan, ZeroResidualIsEmpty) {
  const auto p = build_balanced_plan(grid_state(make_constant_target(2, 0.0), 9), 0.1);
  EXPECT_EQ(p.n(), 0u);
}

TEST(BalancedPlan, ConstantOneHasOnlyPositiveAtoms) {
  const auto p = build_balanced_plan(grid_state(make_constant_target(1, 1.0), 257), 0.25);
  EXPECT_TRUE(p.negative.atoms.empty());
  ASSERT_FALSE(p.positive.atoms.empty());
  for (const auto& a : p.positive.atoms) EXPECT_EQ(a.amplitude, 0.25);
}

TEST(BalancedPlan, ShiftedIdentitySplitsByHalf) {
  const auto s = grid_state(shifted_identity(), 4097);
  const auto p = build_balanced_plan(s, 0.2);
  ASSERT_FALSE(p.positive.atoms.empty());
  ASSERT_FALSE(p.negative.atoms.empty());
  // Dense oracle: the superlevel sets are [0.9, 1] and [0, 0.1].
  for (const auto& a : p.positive.atoms) {
    EXPECT_GT(a.amplitude, 0.0);
    EXPECT_GE(a.cube.center[0] + 0.5 * a.cube.side, 0.9);
  }
  for (const auto& a : p.negative.atoms) {
    EXPECT_LT(a.amplitude, 0.0);
    EXPECT_LE(a.cube.center[0] - 0.5 * a.cube.side, 0.1);
  }
  for (int i = 0; i <= 100; ++i) {
    const double x[] = {0.3 + 0.4 * i / 100.0};
    EXPECT_EQ(apply_plan(p, x), 0.0) << "x=" << x[0];
  }
  std::size_t k = 1;
  for (const auto* a : p.atoms()) EXPECT_EQ(a->grade_index, k++);
}

TEST(ApplyPlan, EmptyPlanIsZeroAndCenterGivesAmplitude) {
  ContractionPlan p;
  const double x[] = {0.3};
  EXPECT_EQ(apply_plan(p, x), 0.0);
  CutoffAtom a;
  a.cube = Cube::lattice(std::vector<std::int64_t>{1}, 0.25);
  a.amplitude = 0.25 * 0.8;
  p.positive.atoms.push_back(a);
  p.positive.delta = 0.25;
  EXPECT_EQ(apply_plan(p, a.cube.center), 0.25 * 0.8);
}

TEST(ApplyPlan, ConstantOneContractsOnTheGrid) {
  const auto s = grid_state(make_constant_target(1, 1.0), 4097);
  const auto p = build_balanced_plan(s, 0.25);
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    const double x[] = {s.grid.coordinate(i)};
    const double t = apply_plan(p, x);
    EXPECT_GE(t, 0.25);
    EXPECT_LE(t, 1.0);
    EXPECT_LE(1.0 - t, 0.75);
  }
}

TEST(PlanIndex, BitIdenticalToApplyPlan) {
  auto f = make_target(
      "wave", 2,
      [](std::span<const double> x) {
        return std::sin(2 * std::numbers::pi * x[0]) * std::cos(2 * std::numbers::pi * x[1]);
      },
      ModulusModel::lipschitz(2 * std::numbers::pi * std::sqrt(2.0)));
  const auto s = grid_state(f, 257);
  const auto p = build_balanced_plan(s, 0.15);
  ASSERT_GT(p.n(), 0u);
  const PlanIndex index(p);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 3000; ++i) {
    const double x[] = {u(rng), u(rng)};
    EXPECT_EQ(index.evaluate(x), apply_plan(p, x));
  }
}

TEST(Conditions, HoldOnFirstRoundOfF1) {
  const auto s = grid_state(make_f1_target(), 16385);
  const auto p = build_balanced_plan(s, 0.25);
  const auto rep = check_conditions(p, s, 0.0);
  EXPECT_EQ(rep.points, s.grid.size());
  EXPECT_EQ(rep.pointwise_violations, 0u);
  EXPECT_EQ(rep.stability_violations, 0u);
  EXPECT_EQ(rep.cover_misses, 0u);
  EXPECT_EQ(rep.sign_violations, 0u);
  EXPECT_GT(rep.stability_points, 0u);
  EXPECT_LE(rep.contraction_sup, 0.75 * p.m_total());
  EXPECT_TRUE(rep.ok());
}

TEST(PlanJson, FieldOrder) {
  const auto p = build_balanced_plan(grid_state(shifted_identity(), 1025), 0.2);
  const auto j = plan_to_json(p);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"epsilon", "r", "sides"}));
  ASSERT_EQ(j["sides"].size(), 2u);
  EXPECT_EQ(j["sides"][0]["sign"], "+");
  EXPECT_EQ(j["sides"][1]["sign"], "-");
  const auto& cube = j["sides"][0]["cubes"][0];
  keys.clear();
  for (auto it = cube.begin(); it != cube.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"beta", "center", "side", "witness_point"}));
}
