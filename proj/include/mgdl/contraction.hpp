#pragma once

// One application of the balanced contraction S g = T g - T(-g): superlevel
// detection on the verification grid, cube size selection from the modulus,
// lattice cover and signed cutoff atoms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mgdl/cutoff_geometry.hpp"
#include "mgdl/error.hpp"
#include "mgdl/function_model.hpp"

namespace mgdl {

/// Largest epsilon for which the overlap bound keeps T g below g^+.
inline double epsilon_bound(std::size_t d) {
  return 1.0 / (1.0 + std::ldexp(1.0, static_cast<int>(d)));
}

inline double default_epsilon(std::size_t d) { return 0.9 * epsilon_bound(d); }

inline void validate_epsilon(double eps, std::size_t d) {
  if (!(eps > 0.0 && eps < epsilon_bound(d))) {
    throw ParameterError("epsilon must lie in (0, 1/(1+2^d)) = (0, " +
                         detail::format_double(epsilon_bound(d)) + ") for d = " +
                         std::to_string(d) + ", got " + detail::format_double(eps));
  }
}

/// Cube sizes are capped strictly below one.
inline constexpr double kDeltaCap = 1.0 - 0x1p-52;

/// delta = sup{ t in (0,1) : bound(2 sqrt(d) t) <= (1 - eps - 2^d eps) m }.
/// Returns nullopt when m == 0 (the contraction is identically zero then).
inline std::optional<double> compute_delta(double eps, double m, const ModulusModel& modulus,
                                           std::size_t d) {
  validate_epsilon(eps, d);
  if (!(m >= 0.0)) throw ParameterError("sup estimate must be nonnegative");
  if (m == 0.0) return std::nullopt;
  const double budget = (1.0 - eps - std::ldexp(eps, static_cast<int>(d))) * m;
  const double reach = 2.0 * std::sqrt(static_cast<double>(d));
  if (modulus.bound(reach * kDeltaCap) <= budget) return kDeltaCap;
  if (modulus.is_lipschitz()) {
    return std::min(kDeltaCap, budget / (reach * modulus.lipschitz_constant()));
  }
  // Bisection on a nondecreasing bound; lo stays admissible throughout.
  double lo = 0.0;
  double hi = kDeltaCap;
  while (hi - lo > 1e-12 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (modulus.bound(reach * mid) <= budget) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (lo == 0.0) throw ParameterError("modulus admits no positive cube size");
  return lo;
}

/// One signed, scaled cutoff amplitude * Gamma_Q.
struct CutoffAtom {
  Cube cube;
  double amplitude = 0.0;
  DilationParam r{};
  std::size_t grade_index = 0;
  std::vector<double> witness;

  double value(std::span<const double> x, CutoffForm form = CutoffForm::clipped) const {
    return amplitude * cutoff_value(cube, r, x, form);
  }
};

struct PlanSide {
  Sign sign = Sign::positive;
  double m = 0.0;
  double delta = 0.0;
  std::vector<CutoffAtom> atoms;
};

struct ContractionPlan {
  std::size_t dim = 1;
  double epsilon = 0.0;
  DilationParam r{};
  CutoffForm form = CutoffForm::clipped;
  PlanSide positive{Sign::positive, 0.0, 0.0, {}};
  PlanSide negative{Sign::negative, 0.0, 0.0, {}};

  double m_plus() const noexcept { return positive.m; }
  double m_minus() const noexcept { return negative.m; }
  double m_total() const noexcept { return std::max(positive.m, negative.m); }
  std::size_t n() const noexcept { return positive.atoms.size() + negative.atoms.size(); }

  /// Cube size reported in traces: the smaller of the two per-side values.
  double delta() const noexcept {
    if (positive.atoms.empty()) return negative.delta;
    if (negative.atoms.empty()) return positive.delta;
    return std::min(positive.delta, negative.delta);
  }

  /// Atoms in grade order: positive side first, lexicographic beta within a side.
  std::vector<const CutoffAtom*> atoms() const {
    std::vector<const CutoffAtom*> out;
    out.reserve(n());
    for (const auto& a : positive.atoms) out.push_back(&a);
    for (const auto& a : negative.atoms) out.push_back(&a);
    return out;
  }
};

/// Cubes of one side's delta-lattice that contain the grid point x.
inline void containing_lattice_cubes(std::span<const double> x, double delta,
                                     std::vector<std::vector<std::int64_t>>& out) {
  out.clear();
  const std::size_t d = x.size();
  std::vector<std::int64_t> lo(d), hi(d), beta(d);
  for (std::size_t k = 0; k < d; ++k) {
    std::tie(lo[k], hi[k]) = lattice_candidates(x[k], delta, 0.5);
    beta[k] = lo[k];
  }
  while (true) {
    if (Cube::lattice(beta, delta).contains(x)) out.push_back(beta);
    std::size_t k = 0;
    while (k < d && ++beta[k] > hi[k]) {
      beta[k] = lo[k];
      ++k;
    }
    if (k == d) break;
  }
}

/// Atoms for one side of S: T applied to (sign * g). Cubes are selected only
/// when a grid point of the superlevel set certifies the intersection.
inline PlanSide build_side_plan(const ResidualState& s, Sign sign, double eps,
                                DilationParam r = DilationParam{}) {
  const std::size_t d = s.dim();
  validate_epsilon(eps, d);
  PlanSide side;
  side.sign = sign;
  side.m = estimate_sup(s, sign);
  const auto delta = compute_delta(eps, side.m, s.modulus, d);
  if (!delta) return side;
  side.delta = *delta;
  const double h = s.grid.spacing();
  if (h > side.delta / 2.0) {
    throw GridTooCoarse("grid spacing " + detail::format_double(h) +
                            " is too coarse to detect cubes of side " +
                            detail::format_double(side.delta),
                        side.delta / 2.0);
  }
  const double sg = sign_value(sign);
  const double threshold = (1.0 - eps) * side.m;
  const double amplitude = sg * eps * side.m;

  std::map<std::vector<std::int64_t>, std::vector<double>> selected;
  std::vector<double> x(d);
  std::vector<std::vector<std::int64_t>> hits;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (!(sg * s.values[i] >= threshold)) continue;
    s.grid.point(i, x);
    containing_lattice_cubes(x, side.delta, hits);
    if (hits.empty()) {
      throw ContractViolation("superlevel point not covered by any lattice cube");
    }
    for (auto& beta : hits) selected.try_emplace(std::move(beta), x);
  }
  side.atoms.reserve(selected.size());
  for (auto& [beta, witness] : selected) {
    CutoffAtom a;
    a.cube = Cube::lattice(beta, side.delta);
    a.amplitude = amplitude;
    a.r = r;
    a.witness = std::move(witness);
    side.atoms.push_back(std::move(a));
  }
  return side;
}

inline ContractionPlan build_balanced_plan(const ResidualState& s, double eps,
                                           DilationParam r = DilationParam{},
                                           CutoffForm form = CutoffForm::clipped) {
  ContractionPlan p;
  p.dim = s.dim();
  p.epsilon = eps;
  p.r = r;
  p.form = form;
  p.positive = build_side_plan(s, Sign::positive, eps, r);
  p.negative = build_side_plan(s, Sign::negative, eps, r);
  std::size_t k = 1;
  for (auto& a : p.positive.atoms) a.grade_index = k++;
  for (auto& a : p.negative.atoms) a.grade_index = k++;
  return p;
}

inline double side_sum(const ContractionPlan& p, const PlanSide& side, std::span<const double> x) {
  double s = 0.0;
  for (const auto& a : side.atoms) s += a.value(x, p.form);
  return s;
}

/// S g (x) = sum of all atoms, evaluated atom by atom.
inline double apply_plan(const ContractionPlan& p, std::span<const double> x) {
  double s = 0.0;
  for (const auto* a : p.atoms()) s += a->value(x, p.form);
  return s;
}

namespace detail {
struct BetaHash {
  std::size_t operator()(const std::vector<std::int64_t>& b) const noexcept {
    std::size_t h = 1469598103934665603ULL;
    for (auto v : b) {
      h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }
};
}  // namespace detail

/// Lattice lookup for a plan: each point touches at most 2^d atoms per side,
/// found by hashing beta instead of scanning every atom. Sums are formed in
/// grade order, so `evaluate` is bit-identical to apply_plan.
class PlanIndex {
 public:
  explicit PlanIndex(const ContractionPlan& p) : plan_(&p), atoms_(p.atoms()) {
    add_side(p.positive, 0);
    add_side(p.negative, p.positive.atoms.size());
  }

  const ContractionPlan& plan() const noexcept { return *plan_; }
  const std::vector<const CutoffAtom*>& atoms() const noexcept { return atoms_; }

  /// Grade-order positions (0-based within the plan) of atoms whose dilate
  /// contains x.
  void active(std::span<const double> x, std::vector<std::size_t>& out) const {
    out.clear();
    for (const auto& side : sides_) collect(side, x, out);
    std::sort(out.begin(), out.end());
  }

  double evaluate(std::span<const double> x) const {
    thread_local std::vector<std::size_t> act;
    active(x, act);
    double s = 0.0;
    for (auto i : act) s += atoms_[i]->value(x, plan_->form);
    return s;
  }

 private:
  struct SideIndex {
    double delta = 0.0;
    std::unordered_map<std::vector<std::int64_t>, std::size_t, detail::BetaHash> lookup;
  };

  void add_side(const PlanSide& side, std::size_t offset) {
    if (side.atoms.empty()) return;
    SideIndex si;
    si.delta = side.delta;
    for (std::size_t i = 0; i < side.atoms.size(); ++i) {
      si.lookup.emplace(side.atoms[i].cube.index, offset + i);
    }
    sides_.push_back(std::move(si));
  }

  void collect(const SideIndex& side, std::span<const double> x,
               std::vector<std::size_t>& out) const {
    const std::size_t d = x.size();
    const double half = 0.5 * plan_->r.value();
    std::int64_t lo[8], hi[8], beta_buf[8];
    if (d > 8) throw ParameterError("PlanIndex supports d <= 8");
    for (std::size_t k = 0; k < d; ++k) {
      std::tie(lo[k], hi[k]) = lattice_candidates(x[k], side.delta, half);
      beta_buf[k] = lo[k];
    }
    std::vector<std::int64_t> beta(d);
    while (true) {
      beta.assign(beta_buf, beta_buf + d);
      auto it = side.lookup.find(beta);
      if (it != side.lookup.end() && atoms_[it->second]->cube.dilate_contains(x, plan_->r)) {
        out.push_back(it->second);
      }
      std::size_t k = 0;
      while (k < d && ++beta_buf[k] > hi[k]) {
        beta_buf[k] = lo[k];
        ++k;
      }
      if (k == d) break;
    }
  }

  const ContractionPlan* plan_;
  std::vector<const CutoffAtom*> atoms_;
  std::vector<SideIndex> sides_;
};

/// Grid check of the structural conditions of one plan against the residual
/// it was built from.
struct ConditionReport {
  std::size_t points = 0;
  std::size_t pointwise_violations = 0;   // side sum outside [0, g^+ + slack]
  double pointwise_max_excess = 0.0;
  std::size_t stability_violations = 0;   // superlevel point with side sum < eps M
  std::size_t stability_points = 0;
  std::size_t sign_violations = 0;        // S g (x) g(x) < 0 beyond slack
  std::size_t cover_misses = 0;           // superlevel point outside every cube
  double contraction_sup = 0.0;           // max |g - S g|
  double contraction_bound = 0.0;         // (1 - eps) M_total + slack

  bool ok() const noexcept {
    return pointwise_violations == 0 && stability_violations == 0 && sign_violations == 0 &&
           cover_misses == 0 && contraction_sup <= contraction_bound;
  }
};

inline ConditionReport check_conditions(const ContractionPlan& p, const ResidualState& s,
                                        double slack) {
  ConditionReport rep;
  const PlanIndex index(p);
  const std::size_t n_pos = p.positive.atoms.size();
  std::vector<double> x(s.dim());
  std::vector<std::size_t> act;
  const double eps = p.epsilon;
  rep.contraction_bound = (1.0 - eps) * p.m_total() + slack;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    s.grid.point(i, x);
    const double g = s.values[i];
    index.active(x, act);
    double pos = 0.0;
    double neg = 0.0;
    bool in_pos_cube = false;
    bool in_neg_cube = false;
    for (auto k : act) {
      const CutoffAtom& a = *index.atoms()[k];
      const double v = a.value(x, p.form);
      if (k < n_pos) {
        pos += v;
        in_pos_cube = in_pos_cube || a.cube.contains(x);
      } else {
        neg -= v;
        in_neg_cube = in_neg_cube || a.cube.contains(x);
      }
    }
    ++rep.points;
    const double gp = std::max(g, 0.0);
    const double gm = std::max(-g, 0.0);
    const double excess = std::max({-pos, pos - gp - slack, -neg, neg - gm - slack});
    if (excess > 0.0) {
      ++rep.pointwise_violations;
      rep.pointwise_max_excess = std::max(rep.pointwise_max_excess, excess);
    }
    if (p.m_plus() > 0.0 && g >= (1.0 - eps) * p.m_plus()) {
      ++rep.stability_points;
      if (!(pos >= eps * p.m_plus())) ++rep.stability_violations;
      if (!in_pos_cube) ++rep.cover_misses;
    }
    if (p.m_minus() > 0.0 && -g >= (1.0 - eps) * p.m_minus()) {
      ++rep.stability_points;
      if (!(neg >= eps * p.m_minus())) ++rep.stability_violations;
      if (!in_neg_cube) ++rep.cover_misses;
    }
    const double sg = pos - neg;
    if (sg != 0.0 && sg * g < 0.0 && std::abs(g) > slack) ++rep.sign_violations;
    rep.contraction_sup = std::max(rep.contraction_sup, std::abs(g - sg));
  }
  return rep;
}

/// Documented plan layout; field order is fixed.
inline nlohmann::ordered_json plan_to_json(const ContractionPlan& p) {
  nlohmann::ordered_json j;
  j["epsilon"] = p.epsilon;
  j["r"] = p.r.value();
  j["sides"] = nlohmann::ordered_json::array();
  for (const PlanSide* side : {&p.positive, &p.negative}) {
    nlohmann::ordered_json js;
    js["sign"] = side->sign == Sign::positive ? "+" : "-";
    js["m"] = side->m;
    js["delta"] = side->delta;
    js["cubes"] = nlohmann::ordered_json::array();
    for (const auto& a : side->atoms) {
      nlohmann::ordered_json jc;
      jc["beta"] = a.cube.index;
      jc["center"] = a.cube.center;
      jc["side"] = a.cube.side;
      jc["witness_point"] = a.witness;
      js["cubes"].push_back(std::move(jc));
    }
    j["sides"].push_back(std::move(js));
  }
  return j;
}

}  // namespace mgdl
