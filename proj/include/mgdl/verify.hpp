#pragma once

// Replays the construction invariants against a network read from disk:
// layer widths, compiled layout, pointwise domination, strict grid-norm
// decrease per grade and, given eps, the per-round contraction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mgdl/contraction.hpp"
#include "mgdl/detail/numeric.hpp"
#include "mgdl/function_model.hpp"
#include "mgdl/network.hpp"
#include "mgdl/refine.hpp"

namespace mgdl {

struct CheckRow {
  CheckRow() = default;
  explicit CheckRow(std::string n) : name(std::move(n)) {}

  std::string name;
  bool passed = true;
  bool skipped = false;
  double measured = 0.0;
  double bound = 0.0;
  std::string note;
};

struct VerifyReport {
  std::vector<CheckRow> rows;
  std::size_t grid_resolution = 0;
  bool dense = false;  // true when some grade had to be evaluated as a plain stack

  bool all_passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.passed; });
  }
  const CheckRow* find(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }

  void print(std::ostream& out) const {
    out << std::left << std::setw(28) << "check" << std::setw(7) << "result" << std::setw(24)
        << "measured" << std::setw(24) << "bound" << "note\n";
    for (const auto& r : rows) {
      const char* verdict = r.skipped ? "skip" : (r.passed ? "PASS" : "FAIL");
      out << std::left << std::setw(28) << r.name << std::setw(7) << verdict << std::setw(24)
          << detail::format_double(r.measured) << std::setw(24) << detail::format_double(r.bound)
          << r.note << '\n';
    }
  }
};

struct VerifyOptions {
  std::size_t grid_resolution = 0;   // 0: choose from the smallest cube side
  std::size_t samples_per_cube = 4;
  std::size_t max_grid_points = std::size_t{1} << 22;
  std::optional<double> epsilon;     // enables the round contraction check
  double domination_tol = 1e-12;
  double compile_tol = 1e-9;
};

namespace detail {

inline std::size_t auto_resolution(const MultigradeNetwork& net, const VerifyOptions& opt) {
  double side = 1.0;
  for (const auto& g : net.grades) {
    if (g.atom) side = std::min(side, g.atom->cube.side);
  }
  std::size_t m = 33;
  auto points = [&](std::size_t mm) {
    double p = 1.0;
    for (std::size_t k = 0; k < net.dim; ++k) p *= static_cast<double>(mm);
    return p;
  };
  while (1.0 / static_cast<double>(m - 1) > side / static_cast<double>(opt.samples_per_cube) &&
         points(2 * m - 1) <= static_cast<double>(opt.max_grid_points)) {
    m = 2 * m - 1;
  }
  return m;
}

struct GradeStats {
  std::size_t touched = 0;
  double dl1 = 0.0;
  double dl2 = 0.0;
  bool straddles = false;
};

}  // namespace detail

/// Verifies `net` as an approximant of `f` on a tensor grid.
inline VerifyReport verify_network(const MultigradeNetwork& net, const TargetFunction& f,
                                   const VerifyOptions& opt = {}) {
  if (f.dim != net.dim) throw ParameterError("target and network dimensions differ");
  VerifyReport rep;
  const std::size_t d = net.dim;
  const std::size_t K = net.size();

  const bool canonical = std::all_of(net.grades.begin(), net.grades.end(),
                                     [](const GradeBlock& g) { return g.atom.has_value(); });
  {
    CheckRow row{"layer widths <= 5d"};
    if (net.trained) {
      row.skipped = true;
      row.note = "trained model";
    } else {
      Eigen::Index widest = 0;
      for (const auto& g : net.grades) {
        for (const auto& l : g.hidden) widest = std::max({widest, l.rows(), l.cols()});
      }
      row.measured = static_cast<double>(widest);
      row.bound = static_cast<double>(net.width_budget());
      row.passed = widths_within_budget(net);
    }
    rep.rows.push_back(row);
  }
  {
    CheckRow row{"compiled layout"};
    const auto plain = static_cast<std::size_t>(std::count_if(
        net.grades.begin(), net.grades.end(), [](const GradeBlock& g) { return !g.atom; }));
    row.measured = static_cast<double>(plain);
    row.bound = 0.0;
    if (net.trained) {
      row.skipped = true;
      row.note = "trained model";
    } else {
      row.passed = plain == 0;
      row.note = std::to_string(plain) + " of " + std::to_string(K) + " grades not canonical";
    }
    rep.rows.push_back(row);
  }
  {
    CheckRow row{"round boundaries"};
    const bool ok = K == 0 ? true
                           : (!net.round_boundaries.empty() && net.round_boundaries.back() == K);
    row.passed = ok;
    row.measured = net.round_boundaries.empty() ? 0.0
                                                : static_cast<double>(net.round_boundaries.back());
    row.bound = static_cast<double>(K);
    rep.rows.push_back(row);
  }

  const std::size_t m = opt.grid_resolution ? opt.grid_resolution : detail::auto_resolution(net, opt);
  const VerificationGrid grid(d, m);
  rep.grid_resolution = m;
  rep.dense = !canonical;

  // Residual on the grid, advanced grade by grade.
  std::vector<double> values(grid.size());
  {
    std::vector<double> x(d);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      grid.point(i, x);
      values[i] = f.fn(x);
    }
  }
  const double l1_0 = grid_norm(grid, values, NormKind::l1);
  const double l2_0 = grid_norm(grid, values, NormKind::l2);
  std::vector<detail::GradeStats> stats(K);
  std::vector<double> l1(K + 1, l1_0), l2sq(K + 1, l2_0 * l2_0);
  std::vector<double> round_sup;  // sup at each round start, then after the last
  std::size_t dom_violations = 0;
  double max_increase = -INFINITY;
  double compile_err = 0.0;
  std::size_t compile_checked = 0;

  auto sup_abs = [&]() {
    double s = 0.0;
    for (double v : values) s = std::max(s, std::abs(v));
    return s;
  };
  auto is_round_start = [&](std::size_t g) {
    if (g == 0) return true;
    return std::find(net.round_boundaries.begin(), net.round_boundaries.end(), g) !=
           net.round_boundaries.end();
  };

  auto record = [&](std::size_t g, std::size_t flat, double v) {
    const double before = values[flat];
    const double after = before - v;
    const double inc = std::abs(after) - std::abs(before);
    max_increase = std::max(max_increase, inc);
    if (inc > opt.domination_tol) ++dom_violations;
    const double w = grid.weight(flat);
    stats[g].dl1 += w * (std::abs(before) - std::abs(after));
    stats[g].dl2 += w * (before * before - after * after);
    ++stats[g].touched;
    values[flat] = after;
  };

  if (canonical) {
    std::vector<std::int64_t> lo(d), hi(d), idx(d);
    std::vector<std::size_t> uidx(d);
    std::vector<double> x(d);
    for (std::size_t g = 0; g < K; ++g) {
      if (is_round_start(g)) round_sup.push_back(sup_abs());
      const GradeBlock& block = net.grades[g];
      const CutoffAtom& a = *block.atom;
      bool empty = false;
      for (std::size_t k = 0; k < d; ++k) {
        const double dlo = a.cube.dilate_lo(k, a.r);
        const double dhi = a.cube.dilate_hi(k, a.r);
        if (dlo < 0.0 || dhi > 1.0) stats[g].straddles = true;
        std::tie(lo[k], hi[k]) = grid.index_range(dlo, dhi);
        if (lo[k] > hi[k]) empty = true;
        idx[k] = lo[k];
      }
      if (empty) continue;
      Eigen::VectorXd carried;
      while (true) {
        for (std::size_t k = 0; k < d; ++k) {
          uidx[k] = static_cast<std::size_t>(idx[k]);
          x[k] = grid.coordinate(uidx[k]);
        }
        const double v = a.value(x, net.form);
        const std::size_t flat = grid.flat_index(uidx);
        if (v != 0.0) {
          {
            carried.setZero(block.hidden.front().cols());
            for (std::size_t k = 0; k < d; ++k) carried(static_cast<Eigen::Index>(k)) = x[k];
            const double compiled = block.forward(carried);
            compile_err = std::max(compile_err, std::abs(compiled - v));
            ++compile_checked;
          }
          record(g, flat, v);
        }
        std::size_t k = 0;
        while (k < d && ++idx[k] > hi[k]) {
          idx[k] = lo[k];
          ++k;
        }
        if (k == d) break;
      }
    }
  } else {
    // Plain stacks: run the whole chain at every grid point.
    for (std::size_t g = 0; g <= K; ++g) {
      if (g < K && is_round_start(g)) round_sup.push_back(0.0);
    }
    std::vector<double> x(d), per_grade;
    std::vector<std::size_t> round_of(K, 0);
    {
      std::size_t r = 0;
      for (std::size_t g = 0; g < K; ++g) {
        if (g > 0 && is_round_start(g)) ++r;
        round_of[g] = r;
      }
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      grid.point(i, x);
      eval_network(net, x, std::nullopt, &per_grade);
      for (std::size_t g = 0; g < K; ++g) {
        if (is_round_start(g)) {
          round_sup[round_of[g]] = std::max(round_sup[round_of[g]], std::abs(values[i]));
        }
        if (per_grade[g] != 0.0) record(g, i, per_grade[g]);
      }
    }
  }
  if (K > 0) round_sup.push_back(sup_abs());

  for (std::size_t g = 0; g < K; ++g) {
    l1[g + 1] = l1[g] - stats[g].dl1;
    l2sq[g + 1] = std::max(0.0, l2sq[g] - stats[g].dl2);
  }

  {
    CheckRow row{"pointwise domination"};
    row.measured = K == 0 ? 0.0 : static_cast<double>(dom_violations);
    row.bound = 0.0;
    row.passed = dom_violations == 0;
    row.note = "max |f_{k+1}|-|f_k| = " +
               detail::format_double(K == 0 || max_increase == -INFINITY ? 0.0 : max_increase) +
               ", tol " + detail::format_double(opt.domination_tol);
    rep.rows.push_back(row);
  }
  for (int p = 1; p <= 2; ++p) {
    CheckRow row{p == 1 ? "strict L1 decrease" : "strict L2 decrease"};
    std::size_t failures = 0, unresolved = 0, boundary = 0;
    for (std::size_t g = 0; g < K; ++g) {
      const bool strict = p == 1 ? l1[g + 1] < l1[g] : l2sq[g + 1] < l2sq[g];
      if (strict) continue;
      if (stats[g].touched == 0) {
        ++unresolved;
      } else if (stats[g].straddles) {
        ++boundary;
      } else {
        ++failures;
      }
    }
    row.measured = static_cast<double>(failures);
    row.bound = 0.0;
    row.passed = failures == 0;
    row.note = std::to_string(unresolved) + " unresolved on this grid, " +
               std::to_string(boundary) + " flagged at the boundary";
    rep.rows.push_back(row);
  }
  {
    CheckRow row{"compiled vs closed form"};
    if (!canonical) {
      row.skipped = true;
      row.note = "dense evaluation of the stored weights";
    } else {
      row.measured = compile_err;
      row.bound = opt.compile_tol;
      row.passed = compile_err <= opt.compile_tol;
      row.note = std::to_string(compile_checked) + " support points compared";
    }
    rep.rows.push_back(row);
  }
  {
    CheckRow row{"round contraction"};
    if (!opt.epsilon) {
      row.skipped = true;
      row.note = "needs --eps";
    } else if (K == 0) {
      row.note = "empty network";
    } else {
      // Certificate valid for any grid: the builder's grid points inside a
      // cube are within delta*sqrt(d) of every point of that cube.
      const double eps = *opt.epsilon;
      const double sd = std::sqrt(static_cast<double>(d));
      double worst = -INFINITY;
      MultigradeNetwork prefix;
      prefix.dim = d;
      prefix.r = net.r;
      std::size_t begin = 0;
      for (std::size_t j = 0; j < net.round_boundaries.size() && j + 1 < round_sup.size(); ++j) {
        const std::size_t end = net.round_boundaries[j];
        double side = 1.0;
        for (std::size_t g = begin; g < end; ++g) {
          if (net.grades[g].atom) side = std::min(side, net.grades[g].atom->cube.side);
        }
        const ModulusModel omega = residual_modulus(f.modulus, lipschitz_bound(prefix));
        const double slack = omega.bound(grid.spacing() * sd / 2.0) + omega.bound(side * sd);
        worst = std::max(worst, round_sup[j + 1] - ((1.0 - eps) * round_sup[j] + slack));
        for (std::size_t g = begin; g < end; ++g) prefix.grades.push_back(net.grades[g]);
        prefix.round_boundaries.push_back(end);
        begin = end;
      }
      row.measured = worst;
      row.bound = 0.0;
      row.passed = worst <= 0.0;
      row.note = "max of m_after - (1-eps) m_before - slack over rounds";
    }
    rep.rows.push_back(row);
  }
  {
    CheckRow row{"final grid sup"};
    row.skipped = true;
    row.measured = round_sup.empty() ? sup_abs() : round_sup.back();
    row.bound = round_sup.empty() ? row.measured : round_sup.front();
    row.note = "initial grid sup in bound column";
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace mgdl
