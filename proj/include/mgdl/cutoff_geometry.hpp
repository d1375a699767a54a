#pragma once

// Axis-aligned cubes on a delta-lattice, their r-dilates, the trapezoid psi
// and the d-dimensional cutoff Gamma_Q.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgdl/detail/numeric.hpp"
#include "mgdl/error.hpp"

namespace mgdl {

/// Dilation factor r, restricted to the open interval (1, 2).
class DilationParam {
 public:
  explicit DilationParam(double r = 1.5) : r_(r) {
    if (!(r > 1.0 && r < 2.0)) {
      throw ParameterError("dilation parameter r must lie in (1, 2), got " +
                           detail::format_double(r));
    }
  }
  double value() const noexcept { return r_; }

  friend bool operator==(const DilationParam&, const DilationParam&) = default;

 private:
  double r_;
};

/// How the per-axis trapezoids combine in d >= 2.
///  - clipped:  Gamma = relu(sum_i psi_i - (d - 1)), vanishes off rQ.
///  - averaged: Gamma = mean_i psi_i, kept for comparison only; it is nonzero
///    off rQ whenever a single coordinate leaves the dilate.
enum class CutoffForm { clipped, averaged };

inline const char* to_string(CutoffForm f) noexcept {
  return f == CutoffForm::clipped ? "clipped" : "averaged";
}

/// Closed cube with center c, side l and lattice index beta. Membership is
/// decided in the scaled coordinates u = 2(x - c)/l that the cutoff uses, so
/// x in Q  implies  Gamma_Q(x) == 1 exactly.
struct Cube {
  std::vector<double> center;
  double side = 1.0;
  std::vector<std::int64_t> index;

  std::size_t dim() const noexcept { return center.size(); }

  /// Lattice cube prod_j [beta_j delta, (beta_j + 1) delta].
  static Cube lattice(std::span<const std::int64_t> beta, double delta) {
    if (!(delta > 0.0)) throw ParameterError("cube side must be positive");
    Cube q;
    q.side = delta;
    q.index.assign(beta.begin(), beta.end());
    q.center.resize(beta.size());
    for (std::size_t k = 0; k < beta.size(); ++k) {
      q.center[k] = (static_cast<double>(beta[k]) + 0.5) * delta;
    }
    return q;
  }

  double scaled(std::size_t k, double xk) const noexcept {
    return 2.0 * (xk - center[k]) / side;
  }

  bool contains(std::span<const double> x) const noexcept {
    for (std::size_t k = 0; k < dim(); ++k) {
      if (std::abs(scaled(k, x[k])) > 1.0) return false;
    }
    return true;
  }

  bool dilate_contains(std::span<const double> x, DilationParam r) const noexcept {
    for (std::size_t k = 0; k < dim(); ++k) {
      if (std::abs(scaled(k, x[k])) > r.value()) return false;
    }
    return true;
  }

  /// Bounding box of rQ along axis k.
  double dilate_lo(std::size_t k, DilationParam r) const noexcept {
    return center[k] - 0.5 * r.value() * side;
  }
  double dilate_hi(std::size_t k, DilationParam r) const noexcept {
    return center[k] + 0.5 * r.value() * side;
  }
};

/// The trapezoid: 1 on [-1,1], linear ramps on [1,r] and [-r,-1], 0 beyond.
/// Evaluated in closed form so that the plateau is exactly 1 and the
/// exterior exactly 0; psi_relu is the four-unit ReLU expression of the same
/// function, which compiled networks realize.
inline double psi(double x, DilationParam r) noexcept {
  const double ax = std::abs(x);
  if (ax <= 1.0) return 1.0;
  if (ax >= r.value()) return 0.0;
  return (r.value() - ax) / (r.value() - 1.0);
}

inline double psi_relu(double x, DilationParam r) noexcept {
  using detail::relu;
  const double rv = r.value();
  return (relu(x + rv) - relu(x + 1.0) + relu(-x + rv) - relu(-x + 1.0)) / (rv - 1.0) - 1.0;
}

inline double cutoff_value(const Cube& q, DilationParam r, std::span<const double> x,
                           CutoffForm form = CutoffForm::clipped) {
  if (x.size() != q.dim()) throw ParameterError("point and cube dimensions differ");
  const auto d = static_cast<double>(q.dim());
  double s = 0.0;
  if (form == CutoffForm::clipped) {
    for (std::size_t k = 0; k < q.dim(); ++k) {
      const double p = psi(q.scaled(k, x[k]), r);
      if (p == 0.0) return 0.0;
      s += p;
    }
    return detail::relu(s - (d - 1.0));
  }
  for (std::size_t k = 0; k < q.dim(); ++k) s += psi(q.scaled(k, x[k]), r);
  return s / d;
}

/// Number of r-dilated cubes containing x. All cubes must come from one
/// delta-lattice (common side, centers at (beta + 1/2) delta).
inline std::size_t overlap_count(std::span<const Cube> cubes, DilationParam r,
                                 std::span<const double> x) {
  if (cubes.empty()) return 0;
  const double side = cubes.front().side;
  const std::size_t d = cubes.front().dim();
  for (const auto& q : cubes) {
    if (q.side != side || q.dim() != d || q.index.size() != d) {
      throw ContractViolation("overlap_count requires cubes from a single lattice");
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double expect = (static_cast<double>(q.index[k]) + 0.5) * side;
      if (std::abs(expect - q.center[k]) > 1e-12 * std::max(1.0, std::abs(expect))) {
        throw ContractViolation("overlap_count requires cubes from a single lattice");
      }
    }
  }
  return static_cast<std::size_t>(std::count_if(
      cubes.begin(), cubes.end(), [&](const Cube& q) { return q.dilate_contains(x, r); }));
}

/// Lattice indices beta along one axis whose cube center (beta + 1/2) delta
/// lies within `half_width * delta` of x. Returned range is a superset padded
/// by one on each side; callers confirm with the exact membership test.
inline std::pair<std::int64_t, std::int64_t> lattice_candidates(double x, double delta,
                                                                double half_width) noexcept {
  const double t = x / delta - 0.5;
  return {static_cast<std::int64_t>(std::floor(t - half_width)) - 1,
          static_cast<std::int64_t>(std::ceil(t + half_width)) + 1};
}

}  // namespace mgdl
