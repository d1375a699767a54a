#pragma once

// Brute-force references for small instances: exhaustive overlap counting,
// dense superlevel scans, finite-difference slope scans and closed-form
// norms. Everything here is quadratic or worse and refuses large inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgdl/cutoff_geometry.hpp"
#include "mgdl/error.hpp"
#include "mgdl/function_model.hpp"

namespace mgdl::oracle {

inline constexpr std::size_t kMaxDim = 3;
inline constexpr std::size_t kMaxResolution = 65;

inline void check_instance(std::size_t d, std::size_t m) {
  if (d == 0 || d > kMaxDim) {
    throw ParameterError("oracle instances need 1 <= d <= " + std::to_string(kMaxDim) + ", got d=" +
                         std::to_string(d));
  }
  if (m < 2 || m > kMaxResolution) {
    throw ParameterError("oracle instances need 2 <= m <= " + std::to_string(kMaxResolution) +
                         ", got m=" + std::to_string(m));
  }
}

struct OverlapResult {
  std::size_t max_at_vertices = 0;
  std::size_t max_at_midpoints = 0;
  std::size_t max_at_random = 0;
  std::size_t vertices = 0;
  std::size_t midpoints = 0;
  std::size_t random_points = 0;

  std::size_t max_overall() const {
    return std::max({max_at_vertices, max_at_midpoints, max_at_random});
  }
};

/// All n^d cubes of the lattice with side 1/n, counted against every
/// lattice vertex, every edge midpoint and `random_points` uniform points.
/// Counting is by direct comparison with every cube.
inline OverlapResult overlap_scan(std::size_t d, std::size_t n, DilationParam r,
                                  std::size_t random_points, std::uint64_t seed) {
  check_instance(d, n + 1);
  const double delta = 1.0 / static_cast<double>(n);
  std::vector<Cube> cubes;
  {
    std::vector<std::int64_t> beta(d, 0);
    while (true) {
      cubes.push_back(Cube::lattice(beta, delta));
      std::size_t k = 0;
      while (k < d && ++beta[k] >= static_cast<std::int64_t>(n)) {
        beta[k] = 0;
        ++k;
      }
      if (k == d) break;
    }
  }
  auto count = [&](std::span<const double> x) {
    std::size_t c = 0;
    for (const auto& q : cubes) {
      bool in = true;
      for (std::size_t k = 0; k < d && in; ++k) {
        in = std::abs(x[k] - q.center[k]) <= 0.5 * r.value() * q.side;
      }
      c += in ? 1 : 0;
    }
    return c;
  };
  OverlapResult out;
  // Half-step lattice: points with all even coordinates are vertices, those
  // with exactly one odd coordinate are edge midpoints.
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  while (true) {
    std::size_t odd = 0;
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = static_cast<double>(idx[k]) * 0.5 * delta;
      odd += idx[k] % 2;
    }
    if (odd == 0) {
      out.max_at_vertices = std::max(out.max_at_vertices, count(x));
      ++out.vertices;
    } else if (odd == 1) {
      out.max_at_midpoints = std::max(out.max_at_midpoints, count(x));
      ++out.midpoints;
    }
    std::size_t k = 0;
    while (k < d && ++idx[k] > 2 * n) {
      idx[k] = 0;
      ++k;
    }
    if (k == d) break;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < random_points; ++i) {
    for (auto& v : x) v = u(rng);
    out.max_at_random = std::max(out.max_at_random, count(x));
  }
  out.random_points = random_points;
  return out;
}

struct SuperlevelResult {
  std::size_t points = 0;
  std::size_t in_set = 0;
  double sup_positive = 0.0;
  double threshold = 0.0;

  double fraction() const { return points ? static_cast<double>(in_set) / points : 0.0; }
};

/// {x : g(x) >= (1 - eps) sup g^+} on the m^d grid by direct evaluation.
inline SuperlevelResult superlevel_scan(const std::function<double(std::span<const double>)>& g,
                                        std::size_t d, std::size_t m, double eps) {
  check_instance(d, m);
  const VerificationGrid grid(d, m);
  std::vector<double> v(grid.size());
  std::vector<double> x(d);
  SuperlevelResult out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid.point(i, x);
    v[i] = g(x);
    out.sup_positive = std::max(out.sup_positive, v[i]);
  }
  out.points = grid.size();
  out.threshold = (1.0 - eps) * out.sup_positive;
  if (out.sup_positive > 0.0) {
    out.in_set = static_cast<std::size_t>(
        std::count_if(v.begin(), v.end(), [&](double t) { return t >= out.threshold; }));
  }
  return out;
}

/// Largest |g(x) - g(y)| / |x - y| over all pairs of grid points.
inline double lipschitz_scan_pairs(const std::function<double(std::span<const double>)>& g,
                                   std::size_t d, std::size_t m) {
  check_instance(d, m);
  if (d == 3 && m > 17) throw ParameterError("pairwise scan in d=3 needs m <= 17");
  const VerificationGrid grid(d, m);
  std::vector<std::vector<double>> pts(grid.size());
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    pts[i] = grid.point(i);
    v[i] = g(pts[i]);
  }
  double best = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
      best = std::max(best, std::abs(v[i] - v[j]) / std::sqrt(dist));
    }
  }
  return best;
}

/// Largest slope over `pairs` random pairs at distance at most `radius`.
inline double lipschitz_scan_random(const std::function<double(std::span<const double>)>& g,
                                    std::size_t d, std::size_t pairs, double radius,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> step(-radius, radius);
  std::vector<double> x(d), y(d);
  double best = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    double dist = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = u(rng);
      y[k] = std::clamp(x[k] + step(rng), 0.0, 1.0);
      dist += (x[k] - y[k]) * (x[k] - y[k]);
    }
    if (dist == 0.0) continue;
    best = std::max(best, std::abs(g(x) - g(y)) / std::sqrt(dist));
  }
  return best;
}

/// Closed-form L^p norms on [0,1]^d of the reference functions the suite
/// uses: "x1" (first coordinate) and "constant:<c>".
inline double closed_form_norm(const std::string& name, std::size_t d, int p) {
  (void)d;
  if (p != 1 && p != 2) throw ParameterError("closed-form norms cover p = 1 and p = 2");
  if (name == "x1") return p == 1 ? 0.5 : 1.0 / std::sqrt(3.0);
  if (name.rfind("constant:", 0) == 0) return std::abs(std::stod(name.substr(9)));
  throw ParameterError("no closed form for '" + name + "'");
}

inline std::function<double(std::span<const double>)> reference_function(const std::string& name) {
  if (name == "x1") return [](std::span<const double> x) { return x[0]; };
  if (name.rfind("constant:", 0) == 0) {
    const double c = std::stod(name.substr(9));
    return [c](std::span<const double>) { return c; };
  }
  throw ParameterError("unknown reference function '" + name + "'");
}

/// Trapezoid norm on the m^d grid, for comparison with the closed form.
inline double grid_lp_norm(const std::function<double(std::span<const double>)>& g,
                           std::size_t d, std::size_t m, int p) {
  check_instance(d, m);
  const VerificationGrid grid(d, m);
  std::vector<double> terms(grid.size());
  std::vector<double> x(d);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid.point(i, x);
    const double a = std::abs(g(x));
    terms[i] = grid.weight(i) * (p == 1 ? a : a * a);
  }
  const double s = detail::pairwise_sum(terms);
  return p == 1 ? s : std::sqrt(s);
}

/// Report consumed by the test suite and written by the CLI.
inline nlohmann::ordered_json run_all(std::size_t d, std::size_t m, DilationParam r, double eps,
                                      std::uint64_t seed) {
  check_instance(d, m);
  nlohmann::ordered_json j;
  j["d"] = d;
  j["m"] = m;
  j["r"] = detail::format_double(r.value());
  j["eps"] = detail::format_double(eps);

  const std::size_t cells = std::min<std::size_t>(m - 1, d == 3 ? 8 : 16);
  const auto ov = overlap_scan(d, cells, r, 10000, seed);
  j["overlap"] = {{"cells_per_axis", cells},
                  {"max_at_vertices", ov.max_at_vertices},
                  {"max_at_midpoints", ov.max_at_midpoints},
                  {"max_at_random", ov.max_at_random},
                  {"bound", std::size_t{1} << d}};

  const auto one = superlevel_scan(reference_function("constant:1"), d, m, eps);
  j["superlevel_constant_one"] = {{"points", one.points},
                                  {"in_set", one.in_set},
                                  {"fraction", detail::format_double(one.fraction())}};

  nlohmann::ordered_json norms = nlohmann::ordered_json::array();
  for (int p : {1, 2}) {
    norms.push_back({{"function", "x1"},
                     {"p", p},
                     {"closed_form", detail::format_double(closed_form_norm("x1", d, p))},
                     {"grid", detail::format_double(grid_lp_norm(reference_function("x1"), d, m, p))}});
  }
  j["norms"] = norms;

  const std::size_t mp = d == 3 ? std::min<std::size_t>(m, 9) : std::min<std::size_t>(m, 33);
  j["lipschitz_x1"] = {{"pairs_grid", mp},
                       {"max_slope", detail::format_double(
                                         lipschitz_scan_pairs(reference_function("x1"), d, mp))},
                       {"bound", "1"}};
  return j;
}

}  // namespace mgdl::oracle
