#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mgdl/cutoff_geometry.hpp"

using namespace mgdl;

TEST(Psi, PlateauEndpointAndRampMidpoint) {
  const DilationParam r(1.5);
  EXPECT_EQ(psi(0.0, r), 1.0);
  EXPECT_EQ(psi(1.5, r), 0.0);
  EXPECT_EQ(psi(1.25, r), 0.5);
  EXPECT_EQ(psi_relu(1.25, r), 0.5);
}

TEST(Psi, ReluFormMatchesClosedForm) {
  for (double rv : {1.1, 1.5, 1.9}) {
    const DilationParam r(rv);
    for (int i = -400; i <= 400; ++i) {
      const double x = i / 100.0;
      EXPECT_NEAR(psi_relu(x, r), psi(x, r), 1e-14) << "x=" << x << " r=" << rv;
    }
  }
}

TEST(Psi, IsEvenAndBounded) {
  const DilationParam r(1.3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    EXPECT_EQ(psi(x, r), psi(-x, r));
    EXPECT_GE(psi(x, r), 0.0);
    EXPECT_LE(psi(x, r), 1.0);
  }
}

TEST(DilationParam, RejectsOutsideOpenInterval) {
  EXPECT_THROW(DilationParam(1.0), ParameterError);
  EXPECT_THROW(DilationParam(2.0), ParameterError);
  EXPECT_THROW(DilationParam(std::nan("")), ParameterError);
  EXPECT_NO_THROW(DilationParam(1.999));
}

TEST(Cutoff, OneAtCenterZeroOutsideDilate) {
  const DilationParam r(1.5);
  const std::int64_t beta[] = {2, 3};
  const Cube q = Cube::lattice(beta, 0.1);
  EXPECT_EQ(cutoff_value(q, r, q.center), 1.0);
  std::vector<double> x = q.center;
  x[1] += 0.5 * 1.5 * 0.1 + 1e-9;
  EXPECT_EQ(cutoff_value(q, r, x), 0.0);
  EXPECT_EQ(cutoff_value(q, r, x, CutoffForm::clipped), 0.0);
  // The averaged form stays positive when only one coordinate leaves rQ.
  EXPECT_GT(cutoff_value(q, r, x, CutoffForm::averaged), 0.0);
}

TEST(Cutoff, HandEvaluatedPointInTwoDimensions) {
  Cube q;
  q.center = {0.5, 0.5};
  q.side = 1.0;
  q.index = {0, 0};
  const double x[] = {1.125, 0.5};
  EXPECT_DOUBLE_EQ(q.scaled(0, x[0]), 1.25);
  EXPECT_DOUBLE_EQ(q.scaled(1, x[1]), 0.0);
  EXPECT_DOUBLE_EQ(cutoff_value(q, DilationParam(1.5), x), 0.5);
}

TEST(Cutoff, ExactlyOneOnClosedCube) {
  const DilationParam r(1.5);
  const double delta = 1.0 / 3.0;
  for (std::int64_t b = 0; b < 3; ++b) {
    const Cube q = Cube::lattice(std::vector<std::int64_t>{b}, delta);
    for (int i = 0; i <= 100; ++i) {
      const double x[] = {b * delta + i * delta / 100.0};
      if (q.contains(x)) {
        EXPECT_EQ(cutoff_value(q, r, x), 1.0);
      }
    }
  }
}

TEST(Cutoff, RangeIsUnitIntervalInsideDilate) {
  const DilationParam r(1.7);
  const Cube q = Cube::lattice(std::vector<std::int64_t>{1, 1, 1}, 0.25);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double x[] = {u(rng), u(rng), u(rng)};
    const double v = cutoff_value(q, r, x);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    if (!q.dilate_contains(x, r)) {
      EXPECT_EQ(v, 0.0);
    }
  }
}

namespace {

std::vector<Cube> lattice_block(std::size_t d, std::int64_t n, double delta) {
  std::vector<Cube> cubes;
  std::vector<std::int64_t> beta(d, 0);
  while (true) {
    cubes.push_back(Cube::lattice(beta, delta));
    std::size_t k = 0;
    while (k < d && ++beta[k] >= n) {
      beta[k] = 0;
      ++k;
    }
    if (k == d) break;
  }
  return cubes;
}

}  // namespace

TEST(Overlap, GridVertexInTwoDimensionsHitsFour) {
  const auto cubes = lattice_block(2, 4, 0.25);
  const double x[] = {0.5, 0.25};
  EXPECT_EQ(overlap_count(cubes, DilationParam(1.5), x), 4u);
}

TEST(Overlap, CubeCenterInOneDimensionHitsOne) {
  const auto cubes = lattice_block(1, 5, 0.2);
  const double x[] = {0.5};
  EXPECT_EQ(overlap_count(cubes, DilationParam(1.5), x), 1u);
}

TEST(Overlap, RandomPointsInThreeDimensionsNeverExceedEight) {
  const auto cubes = lattice_block(3, 5, 0.2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double x[] = {u(rng), u(rng), u(rng)};
    EXPECT_LE(overlap_count(cubes, DilationParam(1.9), x), 8u);
  }
}

TEST(Overlap, RejectsMixedLattices) {
  std::vector<Cube> cubes = lattice_block(1, 2, 0.5);
  cubes.push_back(Cube::lattice(std::vector<std::int64_t>{0}, 0.3));
  const double x[] = {0.2};
  EXPECT_THROW(overlap_count(cubes, DilationParam(1.5), x), ContractViolation);
}

TEST(LatticeCandidates, CoverEveryContainingCube) {
  const DilationParam r(1.9);
  const double delta = 0.07;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = u(rng);
    const auto [lo, hi] = lattice_candidates(x, delta, 0.5 * r.value());
    for (std::int64_t b = -3; b < 20; ++b) {
      const Cube q = Cube::lattice(std::vector<std::int64_t>{b}, delta);
      const double p[] = {x};
      if (q.dilate_contains(p, r)) {
        EXPECT_GE(b, lo);
        EXPECT_LE(b, hi);
      }
    }
  }
}
