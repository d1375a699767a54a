#pragma once

// Outer refinement loop: build a balanced plan on the current residual,
// compile and append it, update the residual on the verification grid and
// record the per-grade and per-round certificates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mgdl/contraction.hpp"
#include "mgdl/cutoff_geometry.hpp"
#include "mgdl/detail/numeric.hpp"
#include "mgdl/error.hpp"
#include "mgdl/function_model.hpp"
#include "mgdl/network.hpp"

namespace mgdl {

enum class NormKind { l1, l2, linf };

/// Composite trapezoid quadrature of |g|^p on the grid (max for linf).
inline double grid_norm(const VerificationGrid& grid, std::span<const double> values, NormKind p) {
  if (p == NormKind::linf) {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
  std::vector<double> terms(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double a = std::abs(values[i]);
    terms[i] = grid.weight(i) * (p == NormKind::l1 ? a : a * a);
  }
  const double s = detail::pairwise_sum(terms);
  return p == NormKind::l1 ? s : std::sqrt(s);
}

inline double grid_norm(const ResidualState& s, NormKind p) {
  return grid_norm(s.grid, s.values, p);
}

/// Lipschitz bound of Phi for networks built by the refinement loop. Within
/// one round, positive-side dilates sit where the round's residual is
/// positive and negative-side dilates where it is negative, so on the domain
/// only one side is active at a point; in d = 1 the ramps of two overlapping
/// lattice neighbours never overlap, so one slope suffices per side.
inline double constructed_lipschitz_bound(const MultigradeNetwork& net) {
  const double overlap = net.dim == 1 ? 1.0 : std::ldexp(1.0, static_cast<int>(net.dim));
  double total = 0.0;
  std::size_t begin = 0;
  for (std::size_t end : net.round_boundaries) {
    double side_max[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t g = begin; g < end; ++g) {
      const auto& atom = net.grades[g].atom;
      if (!atom) return lipschitz_bound(net);
      const int s = atom->amplitude >= 0.0 ? 0 : 1;
      side_max[s] = std::max(side_max[s], atom_lipschitz(*atom));
      ++count[s];
    }
    double round_bound = 0.0;
    for (int s = 0; s < 2; ++s) {
      round_bound =
          std::max(round_bound, std::min(static_cast<double>(count[s]), overlap) * side_max[s]);
    }
    total += round_bound;
    begin = end;
  }
  if (begin != net.grades.size()) return lipschitz_bound(net);
  return total;
}

struct GradeRecord {
  std::size_t k = 0;
  std::size_t round = 0;
  double sup = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l1_before = 0.0;
  double l2_before = 0.0;
  double amplitude = 0.0;
  std::vector<std::int64_t> beta;
  std::size_t touched = 0;            // grid points where the grade is nonzero
  std::size_t domination_violations = 0;
  double max_increase = 0.0;          // max of |f_{k+1}| - |f_k| over touched points
  bool meets_domain = true;           // cube meets [0,1]^d with positive measure
  bool straddles = false;             // dilate pokes outside [0,1]^d

  bool strict_l1() const noexcept { return l1 < l1_before; }
  bool strict_l2() const noexcept { return l2 < l2_before; }
};

struct RoundRecord {
  std::size_t j = 0;
  std::size_t k_j = 0;
  std::size_t n_j = 0;
  double m_before = 0.0;
  double m_after = 0.0;
  double ratio = 0.0;
  double slack = 0.0;            // 2 * omega(h sqrt d) budget of the round inequality
  double envelope_bound = 0.0;   // (1 - eps)^j * initial grid sup
  double envelope_slack = 0.0;   // accumulated grid-to-continuum slack
  double sup_gap = 0.0;          // omega_g(h sqrt d) of this round
  std::size_t grid_resolution = 0;
  double delta_plus = 0.0;
  double delta_minus = 0.0;
  double m_plus = 0.0;
  double m_minus = 0.0;
  double network_lipschitz = 0.0;
  ConditionReport conditions;
  std::size_t refinements = 0;
};

struct RefinementTrace {
  double epsilon = 0.0;
  double initial_sup = 0.0;
  double initial_l1 = 0.0;
  double initial_l2 = 0.0;
  std::size_t initial_resolution = 0;
  std::vector<GradeRecord> per_grade;
  std::vector<RoundRecord> per_round;
  bool halted = false;
  std::string diagnostic;

  double final_sup() const noexcept {
    return per_round.empty() ? initial_sup : per_round.back().m_after;
  }
};

struct RefineConfig {
  double epsilon = 0.25;
  DilationParam r{};
  CutoffForm form = CutoffForm::clipped;
  std::size_t initial_resolution = 0;      // 0 selects a per-dimension default
  std::size_t samples_per_cube = 16;       // grid refined until h <= delta / samples
  std::size_t max_grid_points = std::size_t{1} << 24;
  std::size_t max_rounds = 12;
  unsigned threads = 1;

  static std::size_t default_resolution(std::size_t d) {
    switch (d) {
      case 1: return 4097;
      case 2: return 257;
      case 3: return 33;
      default: return 9;
    }
  }
};

struct StopRule {
  std::optional<std::size_t> rounds;
  std::optional<double> sup_tol;

  static StopRule after_rounds(std::size_t j) { return StopRule{j, std::nullopt}; }
  static StopRule at_tolerance(double tau) { return StopRule{std::nullopt, tau}; }
};

namespace detail {
/// Max over |values| with point updates.
class MaxTree {
 public:
  void build(std::span<const double> v) {
    n_ = 1;
    while (n_ < v.size()) n_ <<= 1;
    t_.assign(2 * n_, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) t_[n_ + i] = std::abs(v[i]);
    for (std::size_t i = n_; i-- > 1;) t_[i] = std::max(t_[2 * i], t_[2 * i + 1]);
  }
  void update(std::size_t i, double v) {
    i += n_;
    t_[i] = std::abs(v);
    for (i >>= 1; i >= 1; i >>= 1) t_[i] = std::max(t_[2 * i], t_[2 * i + 1]);
  }
  double max() const noexcept { return t_.size() > 1 ? t_[1] : 0.0; }

 private:
  std::size_t n_ = 1;
  std::vector<double> t_;
};
}  // namespace detail

/// Stateful driver of the refinement loop. Holds the residual on the
/// verification grid, the accumulated network and the trace.
class Refiner {
 public:
  Refiner(std::shared_ptr<const TargetFunction> target, RefineConfig cfg)
      : target_(std::move(target)), cfg_(cfg) {
    validate_epsilon(cfg_.epsilon, target_->dim);
    if (cfg_.samples_per_cube < 2) throw ParameterError("samples_per_cube must be at least 2");
    const std::size_t m = cfg_.initial_resolution ? cfg_.initial_resolution
                                                  : RefineConfig::default_resolution(target_->dim);
    state_ = ResidualState::initial(target_, VerificationGrid(target_->dim, m), cfg_.threads);
    state_.approximant = [this](std::span<const double> x) {
      return target_->fn(x) - residual_at(x);
    };
    net_.dim = target_->dim;
    net_.r = cfg_.r;
    net_.form = cfg_.form;
    reset_norms();
    trace_.epsilon = cfg_.epsilon;
    trace_.initial_sup = tree_.max();
    trace_.initial_l1 = l1_;
    trace_.initial_l2 = std::sqrt(l2sq_);
    trace_.initial_resolution = m;
  }

  Refiner(const Refiner&) = delete;
  Refiner& operator=(const Refiner&) = delete;

  const ResidualState& state() const noexcept { return state_; }
  const MultigradeNetwork& network() const noexcept { return net_; }
  const RefinementTrace& trace() const noexcept { return trace_; }
  const std::vector<std::unique_ptr<ContractionPlan>>& plans() const noexcept { return plans_; }
  double current_sup() const noexcept { return tree_.max(); }

  /// f(x) - Phi(x) with the atoms subtracted one at a time in grade order,
  /// the same sequence the grid values went through.
  double residual_at(std::span<const double> x) const {
    double r = target_->fn(x);
    std::vector<std::size_t> act;
    for (const auto& idx : indices_) {
      idx.active(x, act);
      for (auto i : act) {
        const double v = idx.atoms()[i]->value(x, idx.plan().form);
        if (v != 0.0) r -= v;
      }
    }
    return r;
  }

  /// One application of the balanced contraction to the current residual.
  const RoundRecord& run_round() {
    RoundRecord rec;
    rec.j = trace_.per_round.size() + 1;
    rec.m_before = tree_.max();
    if (rec.m_before == 0.0) {
      rec.k_j = net_.size();
      rec.grid_resolution = state_.grid.resolution();
      rec.envelope_bound = envelope_bound(rec.j);
      rec.envelope_slack = (1.0 - cfg_.epsilon) * previous_envelope_slack();
      trace_.per_round.push_back(rec);
      return trace_.per_round.back();
    }

    auto plan = std::make_unique<ContractionPlan>();
    while (true) {
      const double mp = estimate_sup(state_, Sign::positive);
      const double mm = estimate_sup(state_, Sign::negative);
      const auto dp = compute_delta(cfg_.epsilon, mp, state_.modulus, state_.dim());
      const auto dm = compute_delta(cfg_.epsilon, mm, state_.modulus, state_.dim());
      double delta = kDeltaCap;
      if (dp) delta = std::min(delta, *dp);
      if (dm) delta = std::min(delta, *dm);
      if (state_.grid.spacing() > delta / static_cast<double>(cfg_.samples_per_cube)) {
        refine_grid();
        ++rec.refinements;
        continue;
      }
      *plan = build_balanced_plan(state_, cfg_.epsilon, cfg_.r, cfg_.form);
      rec.sup_gap = state_.modulus.bound(state_.grid.spacing() *
                                         std::sqrt(static_cast<double>(state_.dim())));
      rec.conditions = check_conditions(*plan, state_, 0.0);
      if (rec.conditions.stability_violations > 0 || rec.conditions.cover_misses > 0) {
        refine_grid();
        ++rec.refinements;
        continue;
      }
      break;
    }
    rec.m_before = tree_.max();
    rec.grid_resolution = state_.grid.resolution();
    rec.m_plus = plan->m_plus();
    rec.m_minus = plan->m_minus();
    rec.delta_plus = plan->positive.delta;
    rec.delta_minus = plan->negative.delta;
    rec.slack = 2.0 * rec.sup_gap;

    const std::size_t first_grade = net_.size();
    net_ = append_plan(std::move(net_), *plan);
    plans_.push_back(std::move(plan));
    indices_.emplace_back(*plans_.back());
    const ContractionPlan& p = *plans_.back();

    const auto atoms = p.atoms();
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      apply_grade(*atoms[i], first_grade + i + 1, rec.j, p.form);
    }

    reset_norms();
    rec.n_j = p.n();
    rec.k_j = net_.size();
    rec.m_after = tree_.max();
    rec.ratio = rec.m_after / rec.m_before;
    rec.envelope_bound = envelope_bound(rec.j);
    rec.envelope_slack = (1.0 - cfg_.epsilon) * previous_envelope_slack() + rec.sup_gap;
    rec.network_lipschitz = constructed_lipschitz_bound(net_);
    state_.modulus = residual_modulus(target_->modulus, rec.network_lipschitz);
    trace_.per_round.push_back(std::move(rec));
    return trace_.per_round.back();
  }

  RefinementTrace& mutable_trace() noexcept { return trace_; }
  MultigradeNetwork release_network() { return std::move(net_); }

 private:
  double envelope_bound(std::size_t j) const {
    return std::pow(1.0 - cfg_.epsilon, static_cast<double>(j)) * trace_.initial_sup;
  }

  double previous_envelope_slack() const {
    return trace_.per_round.empty() ? 0.0 : trace_.per_round.back().envelope_slack;
  }

  void reset_norms() {
    tree_.build(state_.values);
    l1_ = grid_norm(state_, NormKind::l1);
    const double l2 = grid_norm(state_, NormKind::l2);
    l2sq_ = l2 * l2;
  }

  void refine_grid() {
    const VerificationGrid fine = state_.grid.refined();
    if (fine.size() > cfg_.max_grid_points) {
      throw GridTooCoarse("grid refinement to " + std::to_string(fine.resolution()) +
                              " points per axis exceeds the configured cap of " +
                              std::to_string(cfg_.max_grid_points) + " points",
                          fine.spacing());
    }
    const VerificationGrid& coarse = state_.grid;
    const std::size_t d = fine.dim();
    const std::size_t mf = fine.resolution();
    const std::size_t mc = coarse.resolution();
    std::vector<double> values(fine.size());
    detail::parallel_for(fine.size(), cfg_.threads, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> x(d);
      for (std::size_t i = lo; i < hi; ++i) {
        std::size_t rest = i;
        std::size_t coarse_flat = 0;
        std::size_t stride = 1;
        bool on_coarse = true;
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t ik = rest % mf;
          rest /= mf;
          if (ik % 2) on_coarse = false;
          coarse_flat += (ik / 2) * stride;
          stride *= mc;
        }
        if (on_coarse) {
          values[i] = state_.values[coarse_flat];
        } else {
          fine.point(i, x);
          values[i] = residual_at(x);
        }
      }
    });
    state_.grid = fine;
    state_.values = std::move(values);
    reset_norms();
  }

  void apply_grade(const CutoffAtom& atom, std::size_t k, std::size_t round, CutoffForm form) {
    const std::size_t d = state_.dim();
    const VerificationGrid& grid = state_.grid;
    GradeRecord g;
    g.k = k;
    g.round = round;
    g.amplitude = atom.amplitude;
    g.beta = atom.cube.index;
    g.l1_before = l1_;
    g.l2_before = std::sqrt(l2sq_);

    std::vector<std::int64_t> lo(d), hi(d), idx(d);
    bool empty = false;
    for (std::size_t a = 0; a < d; ++a) {
      const double dlo = atom.cube.dilate_lo(a, atom.r);
      const double dhi = atom.cube.dilate_hi(a, atom.r);
      if (dlo < 0.0 || dhi > 1.0) g.straddles = true;
      const double qlo = atom.cube.center[a] - 0.5 * atom.cube.side;
      const double qhi = atom.cube.center[a] + 0.5 * atom.cube.side;
      if (std::min(qhi, 1.0) - std::max(qlo, 0.0) <= 0.0) g.meets_domain = false;
      std::tie(lo[a], hi[a]) = grid.index_range(dlo, dhi);
      if (lo[a] > hi[a]) empty = true;
      idx[a] = lo[a];
    }
    double dl1 = 0.0;
    double dl2 = 0.0;
    if (!empty) {
      std::vector<double> x(d);
      std::vector<std::size_t> uidx(d);
      while (true) {
        for (std::size_t a = 0; a < d; ++a) {
          uidx[a] = static_cast<std::size_t>(idx[a]);
          x[a] = grid.coordinate(uidx[a]);
        }
        const double v = atom.value(x, form);
        if (v != 0.0) {
          const std::size_t flat = grid.flat_index(uidx);
          const double before = state_.values[flat];
          const double after = before - v;
          const double inc = std::abs(after) - std::abs(before);
          g.max_increase = (g.touched == 0) ? inc : std::max(g.max_increase, inc);
          if (inc > 1e-12) ++g.domination_violations;
          ++g.touched;
          const double w = grid.weight(flat);
          dl1 += w * (std::abs(before) - std::abs(after));
          dl2 += w * (before * before - after * after);
          state_.values[flat] = after;
          tree_.update(flat, after);
        }
        std::size_t a = 0;
        while (a < d && ++idx[a] > hi[a]) {
          idx[a] = lo[a];
          ++a;
        }
        if (a == d) break;
      }
    }
    l1_ -= dl1;
    l2sq_ = std::max(0.0, l2sq_ - dl2);
    g.l1 = l1_;
    g.l2 = std::sqrt(l2sq_);
    g.sup = tree_.max();
    trace_.per_grade.push_back(std::move(g));
  }

  std::shared_ptr<const TargetFunction> target_;
  RefineConfig cfg_;
  ResidualState state_;
  MultigradeNetwork net_;
  std::vector<std::unique_ptr<ContractionPlan>> plans_;
  std::vector<PlanIndex> indices_;
  detail::MaxTree tree_;
  RefinementTrace trace_;
  double l1_ = 0.0;
  double l2sq_ = 0.0;
};

struct RefineResult {
  MultigradeNetwork network;
  RefinementTrace trace;
};

/// Runs rounds until the stop rule is met. A tolerance that the grid cannot
/// reach halts at cfg.max_rounds (or at the grid cap) with a diagnostic.
inline RefineResult refine(std::shared_ptr<const TargetFunction> f, StopRule stop,
                           RefineConfig cfg) {
  if (!stop.rounds && !stop.sup_tol) throw ParameterError("stop rule needs rounds or sup_tol");
  if (stop.sup_tol && !(*stop.sup_tol >= 0.0)) throw ParameterError("sup_tol must be nonnegative");
  Refiner refiner(std::move(f), cfg);
  auto done = [&](std::size_t j) {
    if (stop.rounds && j >= *stop.rounds) return true;
    if (stop.sup_tol && refiner.current_sup() <= *stop.sup_tol) return true;
    return false;
  };
  std::size_t j = 0;
  while (!done(j)) {
    if (j >= cfg.max_rounds) {
      refiner.mutable_trace().halted = true;
      refiner.mutable_trace().diagnostic =
          "stopped after the round cap of " + std::to_string(cfg.max_rounds) +
          " rounds with grid sup " + detail::format_double(refiner.current_sup());
      break;
    }
    try {
      refiner.run_round();
    } catch (const GridTooCoarse& e) {
      refiner.mutable_trace().halted = true;
      refiner.mutable_trace().diagnostic = e.what();
      break;
    }
    ++j;
  }
  RefineResult out;
  out.trace = refiner.trace();
  out.network = refiner.release_network();
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

inline std::string beta_to_string(const std::vector<std::int64_t>& beta) {
  std::string s;
  for (std::size_t i = 0; i < beta.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(beta[i]);
  }
  return s;
}

/// Columns: k,sup,l1,l2,amplitude,beta followed by diagnostic columns.
inline void write_grade_csv(const RefinementTrace& t, std::ostream& out) {
  out << "k,sup,l1,l2,amplitude,beta,round,l1_before,l2_before,touched,"
         "domination_violations,max_increase,straddles\n";
  using detail::format_double;
  for (const auto& g : t.per_grade) {
    out << g.k << ',' << format_double(g.sup) << ',' << format_double(g.l1) << ','
        << format_double(g.l2) << ',' << format_double(g.amplitude) << ','
        << beta_to_string(g.beta) << ',' << g.round << ',' << format_double(g.l1_before) << ','
        << format_double(g.l2_before) << ',' << g.touched << ',' << g.domination_violations
        << ',' << format_double(g.max_increase) << ',' << (g.straddles ? 1 : 0) << '\n';
  }
}

/// Columns: j,k_j,n_j,m_before,m_after,ratio,slack followed by the envelope
/// certificate and grid diagnostics.
inline void write_round_csv(const RefinementTrace& t, std::ostream& out) {
  out << "j,k_j,n_j,m_before,m_after,ratio,slack,envelope_bound,envelope_slack,grid,"
         "delta_plus,delta_minus,network_lipschitz\n";
  using detail::format_double;
  for (const auto& r : t.per_round) {
    out << r.j << ',' << r.k_j << ',' << r.n_j << ',' << format_double(r.m_before) << ','
        << format_double(r.m_after) << ',' << format_double(r.ratio) << ','
        << format_double(r.slack) << ',' << format_double(r.envelope_bound) << ','
        << format_double(r.envelope_slack) << ',' << r.grid_resolution << ','
        << format_double(r.delta_plus) << ',' << format_double(r.delta_minus) << ','
        << format_double(r.network_lipschitz) << '\n';
  }
}

}  // namespace mgdl
