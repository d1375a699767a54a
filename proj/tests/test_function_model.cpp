#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "mgdl/function_model.hpp"
#include "mgdl/refine.hpp"

using namespace mgdl;

namespace {

ResidualState state_of(std::shared_ptr<const TargetFunction> f, std::size_t m) {
  return ResidualState::initial(f, VerificationGrid(f->dim, m));
}

}  // namespace

TEST(PositivePart, ClipsNegativeAndZero) {
  auto neg = make_constant_target(1, -0.3);
  auto zero = make_constant_target(1, 0.0);
  const double x[] = {0.4};
  EXPECT_EQ(eval_positive_part(state_of(neg, 3), x), 0.0);
  EXPECT_EQ(eval_positive_part(state_of(zero, 3), x), 0.0);
}

TEST(PositivePart, F1AtOneSixtyFourth) {
  const double x[] = {1.0 / 64.0};
  // sin(pi/2) - cos(16 pi / 4096) / 2 written out independently.
  const double expect = 1.0 - 0.5 * std::cos(std::numbers::pi / 256.0);
  EXPECT_NEAR(eval_positive_part(state_of(make_f1_target(), 3), x), expect, 1e-15);
}

TEST(PositivePart, RejectsPointsOutsideDomain) {
  const double x[] = {1.5};
  EXPECT_THROW(eval_positive_part(state_of(make_f1_target(), 3), x), DomainError);
}

TEST(EstimateSup, ConstantTargets) {
  EXPECT_EQ(estimate_sup(state_of(make_constant_target(1, 1.0), 9), Sign::positive), 1.0);
  EXPECT_EQ(estimate_sup(state_of(make_constant_target(1, -1.0), 9), Sign::positive), 0.0);
  EXPECT_EQ(estimate_sup(state_of(make_constant_target(1, -1.0), 9), Sign::negative), 1.0);
}

TEST(EstimateSup, F1WithinModulusGapOfDenseScan) {
  auto f = make_f1_target();
  const auto coarse = state_of(f, 4097);
  const double est = estimate_sup(coarse, Sign::positive);
  double dense = 0.0;
  const std::size_t m = (std::size_t{1} << 20) + 1;
  for (std::size_t i = 0; i < m; ++i) {
    dense = std::max(dense, f1_value(static_cast<double>(i) / static_cast<double>(m - 1)));
  }
  EXPECT_LE(est, dense);
  EXPECT_LE(dense - est, sup_gap(coarse));
}

TEST(ResidualModulus, LinearSum) {
  const auto m = residual_modulus(ModulusModel::lipschitz(2.0), 3.0);
  EXPECT_DOUBLE_EQ(m.bound(0.1), 0.5);
}

TEST(ResidualModulus, ZeroNetworkKeepsBase) {
  const auto base = ModulusModel::tabulated({{0, 0}, {0.5, 0.2}, {1, 1}});
  const auto m = residual_modulus(base, 0.0);
  for (double t : {0.1, 0.3, 0.5, 0.9, 2.0}) EXPECT_EQ(m.bound(t), base.bound(t));
}

TEST(ResidualModulus, TabulatedPlusLinear) {
  const auto m = residual_modulus(ModulusModel::tabulated({{0, 0}, {1, 1}}), 1.0);
  EXPECT_DOUBLE_EQ(m.bound(0.5), 1.0);
}

TEST(ModulusModel, RejectsMalformedTables) {
  EXPECT_THROW(ModulusModel::tabulated({{0.1, 0}, {1, 1}}), ParameterError);
  EXPECT_THROW(ModulusModel::tabulated({{0, 0}, {1, 1}, {0.5, 2}}), ParameterError);
  EXPECT_THROW(ModulusModel::tabulated({{0, 0}, {1, 1}, {2, 0.5}}), ParameterError);
  EXPECT_THROW(ModulusModel::lipschitz(-1.0), ParameterError);
}

TEST(ModulusModel, ExtrapolatesWithLastSlope) {
  const auto m = ModulusModel::tabulated({{0, 0}, {1, 2}, {2, 3}});
  EXPECT_DOUBLE_EQ(m.bound(4.0), 5.0);
  EXPECT_EQ(m.bound(0.0), 0.0);
}

TEST(VerificationGrid, RefinementKeepsOldPointsBitExactly) {
  const VerificationGrid g(2, 17);
  const VerificationGrid f = g.refined();
  ASSERT_EQ(f.resolution(), 33u);
  for (std::size_t i = 0; i < 17; ++i) EXPECT_EQ(g.coordinate(i), f.coordinate(2 * i));
}

TEST(VerificationGrid, TrapezoidWeightsSumToOne) {
  for (std::size_t d : {1u, 2u, 3u}) {
    const VerificationGrid g(d, 9);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.weight(i);
    EXPECT_NEAR(s, 1.0, 1e-14) << "d=" << d;
  }
}

TEST(VerificationGrid, IndexRangeMatchesLinearScan) {
  const VerificationGrid g(1, 101);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int t = 0; t < 2000; ++t) {
    double lo = u(rng), hi = u(rng);
    if (lo > hi) std::swap(lo, hi);
    std::int64_t first = -1, last = -2;
    for (std::size_t i = 0; i < 101; ++i) {
      const double c = g.coordinate(i);
      if (c >= lo && c <= hi) {
        if (first < 0) first = static_cast<std::int64_t>(i);
        last = static_cast<std::int64_t>(i);
      }
    }
    const auto [a, b] = g.index_range(lo, hi);
    if (first < 0) {
      EXPECT_GT(a, b);
    } else {
      EXPECT_EQ(a, first);
      EXPECT_EQ(b, last);
    }
  }
}

TEST(VerificationGrid, FlatIndexInvertsPoint) {
  const VerificationGrid g(3, 5);
  std::vector<std::size_t> idx(3);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto p = g.point(i);
    for (std::size_t k = 0; k < 3; ++k) idx[k] = static_cast<std::size_t>(std::lround(p[k] * 4));
    EXPECT_EQ(g.flat_index(idx), i);
  }
}

TEST(GridNorm, ConstantOneIsOneForEveryP) {
  const auto s = state_of(make_constant_target(2, 1.0), 33);
  EXPECT_NEAR(grid_norm(s, NormKind::l1), 1.0, 1e-14);
  EXPECT_NEAR(grid_norm(s, NormKind::l2), 1.0, 1e-14);
  EXPECT_EQ(grid_norm(s, NormKind::linf), 1.0);
}

TEST(GridNorm, IdentityMatchesClosedForm) {
  auto id = make_target("x", 1, [](std::span<const double> x) { return x[0]; },
                        ModulusModel::lipschitz(1.0));
  const auto s = state_of(id, 4097);
  EXPECT_NEAR(grid_norm(s, NormKind::l1), 0.5, 1e-6);
  EXPECT_NEAR(grid_norm(s, NormKind::l2), 1.0 / std::sqrt(3.0), 1e-6);
}

TEST(Targets, F1ModulusHoldsOnPairs) {
  auto f = make_f1_target();
  EXPECT_LE(max_modulus_violation(f->fn, f->modulus, VerificationGrid(1, 1025)), 0.0);
}

TEST(Targets, F2ModulusHoldsOnPairs) {
  auto f = make_f2_target();
  EXPECT_LE(max_modulus_violation(f->fn, f->modulus, VerificationGrid(2, 41)), 0.0);
}

TEST(Targets, F2SlopeBelowBoundOnRandomPairs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1e-4);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x0 = u(rng), y0 = u(rng);
    const double x1 = std::clamp(x0 + n(rng), 0.0, 1.0), y1 = std::clamp(y0 + n(rng), 0.0, 1.0);
    const double dist = std::hypot(x1 - x0, y1 - y0);
    if (dist == 0.0) continue;
    worst = std::max(worst, std::abs(f2_value(x1, y1) - f2_value(x0, y0)) / dist);
  }
  EXPECT_LE(worst, f2_lipschitz());
  EXPECT_GT(worst, 0.2 * f2_lipschitz());
}

TEST(Targets, CsvGridTargetInterpolates) {
  const auto path = std::filesystem::temp_directory_path() / "mgdl_grid_target.csv";
  {
    std::ofstream out(path);
    out << "x1,x2,value\n";
    for (int j = 0; j <= 2; ++j) {
      for (int i = 0; i <= 2; ++i) out << i / 2.0 << ',' << j / 2.0 << ',' << i + 10 * j << '\n';
    }
  }
  auto f = load_grid_target(path.string(), 25.0);
  ASSERT_EQ(f->dim, 2u);
  const double corner[] = {1.0, 1.0};
  const double mid[] = {0.25, 0.75};
  EXPECT_DOUBLE_EQ(f->evaluate(corner), 22.0);
  // Bilinear data reproduce exactly: 2 x1 + 20 x2.
  EXPECT_NEAR(f->evaluate(mid), 0.5 + 15.0, 1e-12);
  std::filesystem::remove(path);
}

TEST(Targets, CsvRejectsIncompleteGrid) {
  const auto path = std::filesystem::temp_directory_path() / "mgdl_bad_grid.csv";
  {
    std::ofstream out(path);
    out << "x1,value\n0,1\n0.5,2\n";
  }
  EXPECT_THROW(load_grid_target(path.string(), 1.0), ContractViolation);
  {
    std::ofstream out(path);
    out << "x1,value\n0,1\n0.5,oops\n1,2\n";
  }
  try {
    load_grid_target(path.string(), 1.0);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), 13u);
  }
  std::filesystem::remove(path);
}
