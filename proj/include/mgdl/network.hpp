#pragma once

// Exact compilation of cutoff atoms into fixed-width multigrade ReLU blocks,
// evaluation of the partial sums Phi_k, Lipschitz certificates and the JSON
// interchange format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mgdl/contraction.hpp"
#include "mgdl/cutoff_geometry.hpp"
#include "mgdl/detail/numeric.hpp"
#include "mgdl/error.hpp"

namespace mgdl {

struct AffineMap {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;

  AffineMap() = default;
  AffineMap(Eigen::Index rows, Eigen::Index cols)
      : weights(Eigen::MatrixXd::Zero(rows, cols)), bias(Eigen::VectorXd::Zero(rows)) {}

  Eigen::Index rows() const noexcept { return weights.rows(); }
  Eigen::Index cols() const noexcept { return weights.cols(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& in) const { return weights * in + bias; }

  friend bool operator==(const AffineMap& a, const AffineMap& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           a.weights == b.weights && a.bias == b.bias;
  }
};

/// One grade: ReLU hidden layers followed by the grade's output map. For
/// compiled grades the first `dim` units of every hidden layer carry the
/// input point unchanged; `atom` records the cutoff the grade realizes.
struct GradeBlock {
  std::vector<AffineMap> hidden;
  AffineMap output;
  std::optional<CutoffAtom> atom;

  Eigen::Index out_width() const noexcept { return hidden.empty() ? 0 : hidden.back().rows(); }

  /// Runs the hidden stack on `carried` in place and returns the grade output.
  double forward(Eigen::VectorXd& carried) const {
    for (const auto& layer : hidden) {
      carried = layer.apply(carried).cwiseMax(0.0);
    }
    return output.apply(carried)(0);
  }
};

struct MultigradeNetwork {
  std::size_t dim = 1;
  DilationParam r{};
  CutoffForm form = CutoffForm::clipped;
  bool trained = false;
  std::vector<GradeBlock> grades;
  std::vector<std::size_t> round_boundaries;

  std::size_t size() const noexcept { return grades.size(); }

  /// Width of the vector handed to the next grade.
  Eigen::Index carried_width() const noexcept {
    return grades.empty() ? static_cast<Eigen::Index>(dim) : grades.back().out_width();
  }

  std::size_t width_budget() const noexcept { return 5 * dim; }
};

/// ReLU(x) - ReLU(-x) = x: a two-unit carry for values of either sign. The
/// default layout carries nonnegative inputs with a single unit and does not
/// need it.
inline AffineMap signed_carry_layer(Eigen::Index width) {
  AffineMap m(2 * width, width);
  for (Eigen::Index k = 0; k < width; ++k) {
    m.weights(2 * k, k) = 1.0;
    m.weights(2 * k + 1, k) = -1.0;
  }
  return m;
}

inline AffineMap signed_carry_readout(Eigen::Index width) {
  AffineMap m(width, 2 * width);
  for (Eigen::Index k = 0; k < width; ++k) {
    m.weights(k, 2 * k) = 1.0;
    m.weights(k, 2 * k + 1) = -1.0;
  }
  return m;
}

namespace detail {
inline bool uses_outer_relu(std::size_t d, CutoffForm form) {
  return d >= 2 && form == CutoffForm::clipped;
}

inline void check_width(const AffineMap& m, std::size_t budget) {
  if (m.rows() > static_cast<Eigen::Index>(budget) ||
      m.cols() > static_cast<Eigen::Index>(budget)) {
    throw ContractViolation("affine map exceeds the 5d width budget");
  }
}
}  // namespace detail

/// Realize amplitude * Gamma_Q as a grade block. Hidden layer 1 is
/// [d carry units; 4d trapezoid units]; in d >= 2 with the clipped cutoff a
/// second hidden layer [d carry units; 1 clip unit] follows.
inline GradeBlock compile_atom(const CutoffAtom& a, std::size_t d,
                               CutoffForm form = CutoffForm::clipped,
                               Eigen::Index input_width = -1) {
  if (!(a.cube.side > 0.0)) throw ParameterError("atom cube must have positive side");
  if (a.cube.dim() != d) throw ParameterError("atom dimension mismatch");
  if (input_width < 0) input_width = static_cast<Eigen::Index>(d);
  const auto di = static_cast<Eigen::Index>(d);
  const double r = a.r.value();
  const double s = 2.0 / a.cube.side;

  GradeBlock g;
  AffineMap first(5 * di, input_width);
  for (Eigen::Index k = 0; k < di; ++k) {
    first.weights(k, k) = 1.0;
    const double c = a.cube.center[static_cast<std::size_t>(k)];
    const Eigen::Index row = di + 4 * k;
    first.weights(row + 0, k) = s;
    first.bias(row + 0) = r - s * c;
    first.weights(row + 1, k) = s;
    first.bias(row + 1) = 1.0 - s * c;
    first.weights(row + 2, k) = -s;
    first.bias(row + 2) = r + s * c;
    first.weights(row + 3, k) = -s;
    first.bias(row + 3) = 1.0 + s * c;
  }
  g.hidden.push_back(std::move(first));

  const double ramp = 1.0 / (r - 1.0);
  if (detail::uses_outer_relu(d, form)) {
    AffineMap clip(di + 1, 5 * di);
    for (Eigen::Index k = 0; k < di; ++k) {
      clip.weights(k, k) = 1.0;
      const Eigen::Index row = di + 4 * k;
      clip.weights(di, row + 0) = ramp;
      clip.weights(di, row + 1) = -ramp;
      clip.weights(di, row + 2) = ramp;
      clip.weights(di, row + 3) = -ramp;
    }
    // sum_k psi_k - (d - 1) with psi_k = ramp * (...) - 1
    clip.bias(di) = -(2.0 * static_cast<double>(d) - 1.0);
    g.hidden.push_back(std::move(clip));
    g.output = AffineMap(1, di + 1);
    g.output.weights(0, di) = a.amplitude;
  } else {
    const double w = a.amplitude * ramp / static_cast<double>(d);
    g.output = AffineMap(1, 5 * di);
    for (Eigen::Index k = 0; k < di; ++k) {
      const Eigen::Index row = di + 4 * k;
      g.output.weights(0, row + 0) = w;
      g.output.weights(0, row + 1) = -w;
      g.output.weights(0, row + 2) = w;
      g.output.weights(0, row + 3) = -w;
    }
    g.output.bias(0) = -a.amplitude;
  }
  for (const auto& layer : g.hidden) detail::check_width(layer, 5 * d);
  detail::check_width(g.output, 5 * d);
  g.atom = a;
  return g;
}

/// Appends one grade per atom in plan order and closes a round.
inline MultigradeNetwork append_plan(MultigradeNetwork net, const ContractionPlan& p) {
  if (p.dim != net.dim) throw ParameterError("plan dimension does not match network dimension");
  if (net.trained) throw ContractViolation("cannot append constructive grades to a trained model");
  if (p.n() == 0) return net;
  net.r = p.r;
  net.form = p.form;
  net.grades.reserve(net.grades.size() + p.n());
  for (const auto* a : p.atoms()) {
    CutoffAtom atom = *a;
    atom.grade_index = net.grades.size() + 1;
    net.grades.push_back(compile_atom(atom, net.dim, p.form, net.carried_width()));
  }
  net.round_boundaries.push_back(net.grades.size());
  return net;
}

/// Phi_upto(x): the sum of the first `upto` grade outputs (all grades when
/// omitted). Evaluates the stored affine maps, not the atom metadata.
inline double eval_network(const MultigradeNetwork& net, std::span<const double> x,
                           std::optional<std::size_t> upto = std::nullopt,
                           std::vector<double>* per_grade = nullptr) {
  if (x.size() != net.dim) throw ParameterError("point dimension does not match network");
  const std::size_t k = upto.value_or(net.grades.size());
  if (k > net.grades.size()) throw ParameterError("grade index beyond network size");
  Eigen::VectorXd carried(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) carried(static_cast<Eigen::Index>(i)) = x[i];
  if (per_grade) per_grade->clear();
  double sum = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    const double out = net.grades[g].forward(carried);
    if (per_grade) per_grade->push_back(out);
    sum += out;
  }
  return sum;
}

/// Slope of amplitude * Gamma_Q, bounded as |amplitude| * 2 d / (l (r - 1)).
inline double atom_lipschitz(const CutoffAtom& a) {
  return std::abs(a.amplitude) * 2.0 * static_cast<double>(a.cube.dim()) /
         (a.cube.side * (a.r.value() - 1.0));
}

/// Certified Euclidean Lipschitz bound of Phi.
///
/// Atoms of one round and one sign share a delta-lattice, so at most 2^d of
/// their dilates overlap at any point and their gradients add at most 2^d
/// deep; the bound takes min(count, 2^d) times the largest slope per
/// (round, sign) group. Grades without atom metadata fall back to the product
/// of Frobenius norms along their path.
inline double lipschitz_bound(const MultigradeNetwork& net) {
  const double cap = std::ldexp(1.0, static_cast<int>(net.dim));
  double total = 0.0;
  struct Group {
    std::size_t count = 0;
    double max_slope = 0.0;
    double side = 0.0;
    bool uniform = true;
    double sum = 0.0;
  };
  std::map<std::pair<std::size_t, int>, Group> groups;
  std::size_t round = 0;
  double chain = 1.0;
  for (std::size_t g = 0; g < net.grades.size(); ++g) {
    while (round < net.round_boundaries.size() && g >= net.round_boundaries[round]) ++round;
    const auto& grade = net.grades[g];
    for (const auto& layer : grade.hidden) chain *= layer.weights.norm();
    if (grade.atom) {
      const auto& a = *grade.atom;
      auto& grp = groups[{round, a.amplitude >= 0.0 ? 1 : -1}];
      const double slope = atom_lipschitz(a);
      if (grp.count > 0 && std::abs(grp.side - a.cube.side) > 1e-9 * grp.side) grp.uniform = false;
      grp.side = a.cube.side;
      grp.max_slope = std::max(grp.max_slope, slope);
      grp.sum += slope;
      ++grp.count;
    } else {
      total += grade.output.weights.norm() * chain;
    }
  }
  for (const auto& [key, grp] : groups) {
    total += grp.uniform ? std::min(static_cast<double>(grp.count), cap) * grp.max_slope : grp.sum;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Reconstruction of atom metadata from stored weights

/// Recovers the atom a compiled grade realizes and confirms that recompiling
/// it reproduces every stored weight. Returns nullopt for grades that do not
/// have the compiled layout (trained or altered grades).
inline std::optional<CutoffAtom> reconstruct_atom(const GradeBlock& g, std::size_t d,
                                                  DilationParam r, CutoffForm form,
                                                  double tol = 1e-12) {
  const auto di = static_cast<Eigen::Index>(d);
  const bool outer = detail::uses_outer_relu(d, form);
  if (g.hidden.size() != (outer ? 2u : 1u)) return std::nullopt;
  const auto& first = g.hidden[0];
  if (first.rows() != 5 * di || first.cols() < di) return std::nullopt;
  CutoffAtom a;
  a.r = r;
  const double s = first.weights(di, 0);
  if (!(s > 0.0)) return std::nullopt;
  a.cube.side = 2.0 / s;
  a.cube.center.resize(d);
  a.cube.index.resize(d);
  for (Eigen::Index k = 0; k < di; ++k) {
    const double c = (r.value() - first.bias(di + 4 * k)) / s;
    a.cube.center[static_cast<std::size_t>(k)] = c;
    a.cube.index[static_cast<std::size_t>(k)] = std::llround(c / a.cube.side - 0.5);
  }
  if (outer) {
    if (g.output.cols() != di + 1) return std::nullopt;
    a.amplitude = g.output.weights(0, di);
  } else {
    if (g.output.cols() != 5 * di) return std::nullopt;
    a.amplitude = g.output.weights(0, di) * static_cast<double>(d) * (r.value() - 1.0);
  }
  const GradeBlock ref = compile_atom(a, d, form, first.cols());
  auto close = [tol](const AffineMap& x, const AffineMap& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (std::abs(x.bias(i) - y.bias(i)) > tol * std::max(1.0, std::abs(y.bias(i)))) return false;
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (std::abs(x.weights(i, j) - y.weights(i, j)) >
            tol * std::max(1.0, std::abs(y.weights(i, j))))
          return false;
      }
    }
    return true;
  };
  for (std::size_t l = 0; l < g.hidden.size(); ++l) {
    if (!close(g.hidden[l], ref.hidden[l])) return std::nullopt;
  }
  if (!close(g.output, ref.output)) return std::nullopt;
  return a;
}

// ---------------------------------------------------------------------------
// Interchange format
//
// {
//   "dim": d,
//   "r": "<17 significant digits>",
//   "grades": [ { "hidden": [ {"weights": [[...]], "bias": [...]} ],
//                 "output": {"weights": [[...]], "bias": [...]} } ],
//   "round_boundaries": [k_1, k_2, ...],
//   "trained": true                      (only for trained models)
// }
//
// Every weight and bias is a decimal string with 17 significant digits so
// that binary64 values round-trip exactly. Hidden layers are listed in
// application order; grade l's first layer reads the full output of grade
// l-1's last hidden layer (the raw input for l = 1).

namespace detail {
inline nlohmann::ordered_json affine_to_json(const AffineMap& m) {
  nlohmann::ordered_json j;
  j["weights"] = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(format_double(m.weights(i, k)));
    j["weights"].push_back(std::move(row));
  }
  j["bias"] = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) j["bias"].push_back(format_double(m.bias(i)));
  return j;
}

inline double parse_number(const nlohmann::json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (!v.is_string()) throw ParseError("expected a number string at " + where, 0);
  const std::string& s = v.get_ref<const std::string&>();
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ParseError("bad number '" + s + "' at " + where, 0);
  return x;
}

inline AffineMap affine_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("weights") || !j.contains("bias")) {
    throw ParseError("affine map needs weights and bias at " + where, 0);
  }
  const auto& w = j.at("weights");
  const auto& b = j.at("bias");
  if (!w.is_array() || !b.is_array() || w.size() != b.size() || w.empty()) {
    throw ParseError("inconsistent affine map shape at " + where, 0);
  }
  const auto rows = static_cast<Eigen::Index>(w.size());
  const auto cols = static_cast<Eigen::Index>(w[0].size());
  AffineMap m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = w[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ParseError("ragged weight matrix at " + where, 0);
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      m.weights(i, k) = parse_number(row[static_cast<std::size_t>(k)], where);
    }
    m.bias(i) = parse_number(b[static_cast<std::size_t>(i)], where);
  }
  return m;
}
}  // namespace detail

inline nlohmann::ordered_json network_to_json(const MultigradeNetwork& net) {
  nlohmann::ordered_json j;
  j["dim"] = net.dim;
  j["r"] = detail::format_double(net.r.value());
  j["grades"] = nlohmann::ordered_json::array();
  for (const auto& g : net.grades) {
    nlohmann::ordered_json jg;
    jg["hidden"] = nlohmann::ordered_json::array();
    for (const auto& layer : g.hidden) jg["hidden"].push_back(detail::affine_to_json(layer));
    jg["output"] = detail::affine_to_json(g.output);
    j["grades"].push_back(std::move(jg));
  }
  j["round_boundaries"] = net.round_boundaries;
  if (net.trained) j["trained"] = true;
  return j;
}

/// Inverse of network_to_json. Compiled grades get their atom metadata
/// reconstructed; grades whose weights do not match the compiled layout are
/// kept as plain affine stacks.
inline MultigradeNetwork network_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("network file must hold a JSON object", 0);
  for (const char* key : {"dim", "r", "grades", "round_boundaries"}) {
    if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", 0);
  }
  MultigradeNetwork net;
  net.dim = j.at("dim").get<std::size_t>();
  if (net.dim == 0) throw ParseError("dim must be positive", 0);
  net.r = DilationParam(detail::parse_number(j.at("r"), "r"));
  net.trained = j.value("trained", false);
  const auto& grades = j.at("grades");
  if (!grades.is_array()) throw ParseError("grades must be an array", 0);
  // Layer count of the first compiled grade fixes the cutoff form for d >= 2.
  if (net.dim >= 2 && !grades.empty() && grades[0].contains("hidden") &&
      grades[0]["hidden"].size() == 1) {
    net.form = CutoffForm::averaged;
  }
  Eigen::Index width = static_cast<Eigen::Index>(net.dim);
  for (std::size_t g = 0; g < grades.size(); ++g) {
    const std::string where = "grades[" + std::to_string(g) + "]";
    const auto& jg = grades[g];
    if (!jg.is_object() || !jg.contains("hidden") || !jg.contains("output")) {
      throw ParseError("grade needs hidden and output at " + where, 0);
    }
    GradeBlock block;
    for (std::size_t l = 0; l < jg["hidden"].size(); ++l) {
      block.hidden.push_back(detail::affine_from_json(
          jg["hidden"][l], where + ".hidden[" + std::to_string(l) + "]"));
    }
    block.output = detail::affine_from_json(jg["output"], where + ".output");
    if (block.hidden.empty()) throw ParseError("grade without hidden layers at " + where, 0);
    for (std::size_t l = 0; l < block.hidden.size(); ++l) {
      const Eigen::Index expect = l == 0 ? width : block.hidden[l - 1].rows();
      if (block.hidden[l].cols() != expect) {
        throw ParseError("layer input width mismatch at " + where, 0);
      }
    }
    if (block.output.rows() != 1 || block.output.cols() != block.hidden.back().rows()) {
      throw ParseError("output map shape mismatch at " + where, 0);
    }
    width = block.hidden.back().rows();
    if (!net.trained) {
      block.atom = reconstruct_atom(block, net.dim, net.r, net.form);
      if (block.atom) block.atom->grade_index = g + 1;
    }
    net.grades.push_back(std::move(block));
  }
  net.round_boundaries = j.at("round_boundaries").get<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < net.round_boundaries.size(); ++i) {
    if (net.round_boundaries[i] > net.grades.size() ||
        (i > 0 && net.round_boundaries[i] <= net.round_boundaries[i - 1])) {
      throw ParseError("round_boundaries must be strictly increasing grade counts", 0);
    }
  }
  return net;
}

inline void export_network(const MultigradeNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << network_to_json(net).dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline MultigradeNetwork import_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open network file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed network file '" + path + "' at byte " + std::to_string(e.byte) +
                         ": " + e.what(),
                     e.byte);
  }
  try {
    return network_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed network file '" + path + "': " + e.what(), 0);
  }
}

/// Checks every affine map against the 5d budget (compiled networks only).
inline bool widths_within_budget(const MultigradeNetwork& net) {
  const auto budget = static_cast<Eigen::Index>(net.width_budget());
  for (const auto& g : net.grades) {
    for (const auto& l : g.hidden) {
      if (l.rows() > budget || l.cols() > budget) return false;
    }
    if (g.output.rows() > budget || g.output.cols() > budget) return false;
  }
  return true;
}

}  // namespace mgdl
