#pragma once

// Continuous targets on [0,1]^d, their certified moduli of continuity, the
// verification lattice every continuum claim is checked on, and the evolving
// residual f - Phi.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgdl/detail/numeric.hpp"
#include "mgdl/error.hpp"

namespace mgdl {

enum class Sign : int { positive = 1, negative = -1 };

inline double sign_value(Sign s) noexcept { return s == Sign::positive ? 1.0 : -1.0; }

/// Upper bound on a modulus of continuity, either L*t or a piecewise-linear
/// table extrapolated past its last knot with the last slope.
class ModulusModel {
 public:
  struct Knot {
    double t;
    double omega;
  };

  static ModulusModel lipschitz(double constant) {
    if (!(constant >= 0.0) || !std::isfinite(constant)) {
      throw ParameterError("Lipschitz constant must be finite and nonnegative");
    }
    ModulusModel m;
    m.lipschitz_ = constant;
    return m;
  }

  static ModulusModel tabulated(std::vector<Knot> knots) {
    if (knots.size() < 2) throw ParameterError("tabulated modulus needs at least two knots");
    if (knots.front().t != 0.0 || knots.front().omega != 0.0) {
      throw ParameterError("tabulated modulus must start at (0, 0)");
    }
    for (std::size_t i = 1; i < knots.size(); ++i) {
      if (!(knots[i].t > knots[i - 1].t)) {
        throw ParameterError("tabulated modulus knots must be strictly increasing in t");
      }
      if (!(knots[i].omega >= knots[i - 1].omega)) {
        throw ParameterError("tabulated modulus must be nondecreasing");
      }
    }
    ModulusModel m;
    m.knots_ = std::move(knots);
    return m;
  }

  bool is_lipschitz() const noexcept { return knots_.empty(); }
  double lipschitz_constant() const noexcept { return lipschitz_; }
  const std::vector<Knot>& knots() const noexcept { return knots_; }

  double bound(double t) const {
    if (!(t > 0.0)) return 0.0;
    if (is_lipschitz()) return lipschitz_ * t;
    const auto& k = knots_;
    if (t >= k.back().t) {
      const auto& a = k[k.size() - 2];
      const auto& b = k.back();
      return b.omega + (b.omega - a.omega) / (b.t - a.t) * (t - b.t);
    }
    auto it = std::upper_bound(k.begin(), k.end(), t,
                               [](double v, const Knot& kn) { return v < kn.t; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    return a.omega + (b.omega - a.omega) * (t - a.t) / (b.t - a.t);
  }

  /// Model of bound(t) + slope * t. Piecewise-linear models stay
  /// piecewise-linear on the same knots.
  ModulusModel plus_linear(double slope) const {
    if (!(slope >= 0.0)) throw ParameterError("added slope must be nonnegative");
    if (slope == 0.0) return *this;
    if (is_lipschitz()) return lipschitz(lipschitz_ + slope);
    std::vector<Knot> k = knots_;
    for (auto& kn : k) kn.omega += slope * kn.t;
    return tabulated(std::move(k));
  }

 private:
  ModulusModel() = default;

  double lipschitz_ = 0.0;
  std::vector<Knot> knots_;
};

inline ModulusModel residual_modulus(const ModulusModel& base, double net_lipschitz) {
  if (!(net_lipschitz >= 0.0)) throw ParameterError("network Lipschitz bound must be nonnegative");
  return base.plus_linear(net_lipschitz);
}

/// Tensor lattice {0, h, ..., 1}^d with m points per axis; axis 0 varies fastest.
class VerificationGrid {
 public:
  VerificationGrid(std::size_t dim, std::size_t resolution) : dim_(dim), m_(resolution) {
    if (dim == 0) throw ParameterError("grid dimension must be positive");
    if (resolution < 2) throw ParameterError("grid needs at least two points per axis");
    std::size_t n = 1;
    for (std::size_t k = 0; k < dim; ++k) {
      if (n > std::numeric_limits<std::size_t>::max() / resolution) {
        throw ParameterError("grid size overflows");
      }
      n *= resolution;
    }
    size_ = n;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t resolution() const noexcept { return m_; }
  std::size_t size() const noexcept { return size_; }
  double spacing() const noexcept { return 1.0 / static_cast<double>(m_ - 1); }

  double coordinate(std::size_t i) const noexcept {
    return static_cast<double>(i) / static_cast<double>(m_ - 1);
  }

  void point(std::size_t flat, std::span<double> out) const noexcept {
    for (std::size_t k = 0; k < dim_; ++k) {
      out[k] = coordinate(flat % m_);
      flat /= m_;
    }
  }

  std::vector<double> point(std::size_t flat) const {
    std::vector<double> p(dim_);
    point(flat, p);
    return p;
  }

  std::size_t flat_index(std::span<const std::size_t> idx) const noexcept {
    std::size_t flat = 0;
    for (std::size_t k = dim_; k-- > 0;) flat = flat * m_ + idx[k];
    return flat;
  }

  /// Composite trapezoid weight of a lattice point.
  double weight(std::size_t flat) const noexcept {
    const double h = spacing();
    double w = 1.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      const std::size_t i = flat % m_;
      flat /= m_;
      w *= (i == 0 || i == m_ - 1) ? 0.5 * h : h;
    }
    return w;
  }

  /// Inclusive index range of lattice coordinates inside [lo, hi]; empty when
  /// first > last.
  std::pair<std::int64_t, std::int64_t> index_range(double lo, double hi) const noexcept {
    const auto m = static_cast<std::int64_t>(m_);
    if (!(hi >= 0.0) || !(lo <= 1.0) || lo > hi) return {0, -1};
    const double inv = static_cast<double>(m_ - 1);
    auto first = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(lo * inv)) - 1);
    while (first < m && coordinate(static_cast<std::size_t>(first)) < lo) ++first;
    auto last = std::min<std::int64_t>(m - 1, static_cast<std::int64_t>(std::ceil(hi * inv)) + 1);
    while (last >= 0 && coordinate(static_cast<std::size_t>(last)) > hi) --last;
    return {first, last};
  }

  VerificationGrid refined() const { return VerificationGrid(dim_, 2 * m_ - 1); }

 private:
  std::size_t dim_;
  std::size_t m_;
  std::size_t size_ = 0;
};

inline bool in_unit_cube(std::span<const double> x) noexcept {
  return std::all_of(x.begin(), x.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

/// A continuous function on [0,1]^d together with a certified modulus bound.
struct TargetFunction {
  std::string name;
  std::size_t dim = 1;
  std::function<double(std::span<const double>)> fn;
  ModulusModel modulus = ModulusModel::lipschitz(0.0);

  double evaluate(std::span<const double> x) const {
    if (x.size() != dim) throw DomainError("point dimension does not match target dimension");
    if (!in_unit_cube(x)) throw DomainError("point outside [0,1]^d");
    return fn(x);
  }
};

/// Residual f - Phi sampled on a verification grid. `approximant` evaluates
/// Phi everywhere; an empty approximant is the zero network.
struct ResidualState {
  std::shared_ptr<const TargetFunction> base;
  std::function<double(std::span<const double>)> approximant;
  ModulusModel modulus = ModulusModel::lipschitz(0.0);
  VerificationGrid grid{1, 2};
  std::vector<double> values;

  static ResidualState initial(std::shared_ptr<const TargetFunction> f, VerificationGrid grid,
                               unsigned threads = 1) {
    if (grid.dim() != f->dim) throw ParameterError("grid and target dimensions differ");
    ResidualState s;
    s.base = f;
    s.modulus = f->modulus;
    s.grid = grid;
    s.values.resize(grid.size());
    detail::parallel_for(grid.size(), threads, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> p(grid.dim());
      for (std::size_t i = lo; i < hi; ++i) {
        grid.point(i, p);
        s.values[i] = f->fn(p);
      }
    });
    return s;
  }

  std::size_t dim() const noexcept { return grid.dim(); }

  double value(std::span<const double> x) const {
    const double fx = base->evaluate(x);
    return approximant ? fx - approximant(x) : fx;
  }
};

inline double eval_positive_part(const ResidualState& s, std::span<const double> x) {
  return std::max(s.value(x), 0.0);
}

/// Grid maximum of (sign * g)^+. This is a lower bound on the true supremum;
/// the gap is at most sup_gap(s).
inline double estimate_sup(const ResidualState& s, Sign sign) {
  const double sg = sign_value(sign);
  double m = 0.0;
  for (double v : s.values) m = std::max(m, sg * v);
  return m;
}

inline double estimate_sup_abs(const ResidualState& s) {
  return std::max(estimate_sup(s, Sign::positive), estimate_sup(s, Sign::negative));
}

/// Certified distance between the grid maximum and the continuum supremum.
inline double sup_gap(const ModulusModel& modulus, const VerificationGrid& grid) {
  return modulus.bound(grid.spacing() * std::sqrt(static_cast<double>(grid.dim())) / 2.0);
}

inline double sup_gap(const ResidualState& s) { return sup_gap(s.modulus, s.grid); }

/// Largest amount by which |g(x) - g(y)| exceeds bound(|x - y|) over every
/// pair of grid points. Quadratic in the grid size; intended for small grids.
inline double max_modulus_violation(const std::function<double(std::span<const double>)>& g,
                                    const ModulusModel& modulus, const VerificationGrid& grid) {
  const std::size_t n = grid.size();
  std::vector<double> vals(n);
  std::vector<std::vector<double>> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    pts[i] = grid.point(i);
    vals[i] = g(pts[i]);
  }
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < grid.dim(); ++k) {
        const double t = pts[i][k] - pts[j][k];
        d2 += t * t;
      }
      worst = std::max(worst, std::abs(vals[i] - vals[j]) - modulus.bound(std::sqrt(d2)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Named targets

inline std::shared_ptr<const TargetFunction> make_target(
    std::string name, std::size_t dim, std::function<double(std::span<const double>)> fn,
    ModulusModel modulus) {
  auto t = std::make_shared<TargetFunction>();
  t->name = std::move(name);
  t->dim = dim;
  t->fn = std::move(fn);
  t->modulus = std::move(modulus);
  return t;
}

inline std::shared_ptr<const TargetFunction> make_constant_target(std::size_t dim, double value) {
  return make_target("constant", dim, [value](std::span<const double>) { return value; },
                     ModulusModel::lipschitz(0.0));
}

inline double f1_value(double x) {
  using std::numbers::pi;
  return std::sin(32.0 * pi * x) - 0.5 * std::cos(16.0 * pi * x * x);
}

/// |f1'| <= 32 pi + 16 pi x <= 48 pi on [0,1].
inline double f1_lipschitz() { return 48.0 * std::numbers::pi; }

inline std::shared_ptr<const TargetFunction> make_f1_target() {
  return make_target("f1", 1, [](std::span<const double> x) { return f1_value(x[0]); },
                     ModulusModel::lipschitz(f1_lipschitz()));
}

namespace detail {
struct F2Coefficients {
  double a[2][2] = {{0.3, 0.2}, {0.2, 0.3}};
  double b[2] = {12.0 * std::numbers::pi, 8.0 * std::numbers::pi};
  double c[2][2] = {{4.0 * std::numbers::pi, 12.0 * std::numbers::pi},
                    {6.0 * std::numbers::pi, 10.0 * std::numbers::pi}};
  double d[2][2] = {{14.0 * std::numbers::pi, 12.0 * std::numbers::pi},
                    {8.0 * std::numbers::pi, 10.0 * std::numbers::pi}};
};
}  // namespace detail

inline double f2_value(double x1, double x2) {
  const detail::F2Coefficients k;
  const double x[2] = {x1, x2};
  double s = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      s += k.a[i][j] * std::sin(k.b[i] * x[i] + k.c[i][j] * x[i] * x[j]) *
           std::abs(std::cos(k.b[j] * x[j] + k.d[i][j] * x[i] * x[i]));
    }
  }
  return s;
}

/// Euclidean gradient bound of f2 on [0,1]^2. Each term a sin(u)|cos(v)| has
/// partial derivatives bounded by |a| (|du/dx_k| + |dv/dx_k|).
inline double f2_lipschitz() {
  const detail::F2Coefficients k;
  double g[2] = {0.0, 0.0};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      double du[2] = {0.0, 0.0};
      double dv[2] = {0.0, 0.0};
      // u = b_i x_i + c_ij x_i x_j ; v = b_j x_j + d_ij x_i^2
      du[i] += k.b[i];
      if (i == j) {
        du[i] += 2.0 * k.c[i][j];
      } else {
        du[i] += k.c[i][j];
        du[j] += k.c[i][j];
      }
      dv[j] += k.b[j];
      dv[i] += 2.0 * k.d[i][j];
      for (int q = 0; q < 2; ++q) g[q] += std::abs(k.a[i][j]) * (du[q] + dv[q]);
    }
  }
  return std::sqrt(g[0] * g[0] + g[1] * g[1]);
}

inline std::shared_ptr<const TargetFunction> make_f2_target() {
  return make_target("f2", 2, [](std::span<const double> x) { return f2_value(x[0], x[1]); },
                     ModulusModel::lipschitz(f2_lipschitz()));
}

/// Tensor-grid samples read from CSV (header x1,...,xd,value), evaluated by
/// multilinear interpolation. The Lipschitz constant is declared by the caller.
inline std::shared_ptr<const TargetFunction> load_grid_target(const std::string& path,
                                                              double lipschitz) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open target CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty target CSV '" + path + "'", 0);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "value") {
    throw ParseError("target CSV header must be x1,...,xd,value", 0);
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t k = 0; k < d; ++k) {
    if (header[k] != "x" + std::to_string(k + 1)) {
      throw ParseError("target CSV header must be x1,...,xd,value", 0);
    }
  }
  std::vector<std::vector<double>> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("bad number '" + cell + "' in '" + path + "'", offset);
      }
    }
    if (row.size() != d + 1) throw ParseError("wrong column count in '" + path + "'", offset);
    rows.push_back(std::move(row));
    offset += line.size() + 1;
  }
  std::vector<std::vector<double>> axes(d);
  for (std::size_t k = 0; k < d; ++k) {
    for (const auto& r : rows) axes[k].push_back(r[k]);
    std::sort(axes[k].begin(), axes[k].end());
    axes[k].erase(std::unique(axes[k].begin(), axes[k].end()), axes[k].end());
    if (axes[k].size() < 2 || axes[k].front() != 0.0 || axes[k].back() != 1.0) {
      throw ContractViolation("grid samples must span [0,1] on every axis");
    }
  }
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.size();
  if (total != rows.size()) throw ContractViolation("grid samples do not form a full tensor grid");
  std::vector<double> table(total, std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : rows) {
    std::size_t flat = 0;
    for (std::size_t k = d; k-- > 0;) {
      const auto pos = static_cast<std::size_t>(
          std::lower_bound(axes[k].begin(), axes[k].end(), r[k]) - axes[k].begin());
      flat = flat * axes[k].size() + pos;
    }
    table[flat] = r[d];
  }
  if (std::any_of(table.begin(), table.end(), [](double v) { return std::isnan(v); })) {
    throw ContractViolation("duplicate grid samples in '" + path + "'");
  }
  auto fn = [axes, table, d](std::span<const double> x) {
    // Multilinear interpolation over the enclosing grid cell.
    std::vector<std::size_t> lo(d);
    std::vector<double> frac(d);
    for (std::size_t k = 0; k < d; ++k) {
      const auto& a = axes[k];
      auto it = std::upper_bound(a.begin(), a.end(), x[k]);
      std::size_t i = it == a.begin() ? 0 : static_cast<std::size_t>(it - a.begin()) - 1;
      i = std::min(i, a.size() - 2);
      lo[k] = i;
      frac[k] = (x[k] - a[i]) / (a[i + 1] - a[i]);
    }
    double acc = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
      double w = 1.0;
      std::size_t flat = 0;
      for (std::size_t k = d; k-- > 0;) {
        const bool up = (corner >> k) & 1U;
        w *= up ? frac[k] : 1.0 - frac[k];
        flat = flat * axes[k].size() + lo[k] + (up ? 1 : 0);
      }
      acc += w * table[flat];
    }
    return acc;
  };
  return make_target("custom", d, fn, ModulusModel::lipschitz(lipschitz));
}

}  // namespace mgdl
