#pragma once

// Grade-wise MGDL training and the end-to-end FCNN baseline. Forward and
// backward passes are written out by hand on Eigen column-major batches
// (one column per sample); the optimizer is Adam or plain SGD.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgdl/detail/numeric.hpp"
#include "mgdl/error.hpp"
#include "mgdl/function_model.hpp"
#include "mgdl/network.hpp"

namespace mgdl {

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Eigen::MatrixXd x;  // dim x n
  Eigen::VectorXd y;  // n

  std::size_t size() const noexcept { return static_cast<std::size_t>(y.size()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(x.rows()); }
};

enum class Sampling { uniform_random, grid };

/// Pairs (x, f(x)). Uniform sampling draws n points from [0,1]^d with a
/// seeded mt19937_64; grid sampling needs n = m^d and reproduces the
/// verification lattice point order.
inline Dataset make_dataset(const TargetFunction& f, std::size_t n, Sampling sampling,
                            std::uint64_t seed = 0) {
  if (n == 0) throw ParameterError("dataset size must be positive");
  const std::size_t d = f.dim;
  Dataset ds;
  ds.x.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  ds.y.resize(static_cast<Eigen::Index>(n));
  std::vector<double> p(d);
  if (sampling == Sampling::grid) {
    const auto m = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(n), 1.0 / d)));
    std::size_t total = 1;
    for (std::size_t k = 0; k < d; ++k) total *= m;
    if (m < 2 || total != n) throw ParameterError("grid sampling needs n = m^d with m >= 2");
    const VerificationGrid grid(d, m);
    for (std::size_t i = 0; i < n; ++i) {
      grid.point(i, p);
      for (std::size_t k = 0; k < d; ++k) ds.x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = p[k];
      ds.y(static_cast<Eigen::Index>(i)) = f.fn(p);
    }
    return ds;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      p[k] = u(rng);
      ds.x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = p[k];
    }
    ds.y(static_cast<Eigen::Index>(i)) = f.fn(p);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Model pieces

/// A stack of ReLU∘affine layers. Frozen blocks are only ever read.
struct TrainableBlock {
  std::vector<AffineMap> layers;
  bool trainable = true;

  Eigen::Index in_width() const { return layers.front().weights.cols(); }
  Eigen::Index out_width() const { return layers.back().weights.rows(); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x;
    for (const auto& l : layers) {
      h = ((l.weights * h).colwise() + l.bias).cwiseMax(0.0);
    }
    return h;
  }
};

/// Block plus linear readout; one grade of MGDL, or the whole FCNN.
struct Head {
  TrainableBlock block;
  AffineMap out;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : block.layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n + static_cast<std::size_t>(out.weights.size() + out.bias.size());
  }
};

/// FNV-1a over the raw parameter bytes, used to assert freezing.
inline std::uint64_t checksum(const TrainableBlock& b) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const double* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : b.layers) {
    mix(l.weights.data(), l.weights.size());
    mix(l.bias.data(), l.bias.size());
  }
  return h;
}

inline std::uint64_t checksum(const Head& h) {
  TrainableBlock tmp{{h.out}, false};
  return checksum(h.block) ^ (checksum(tmp) * 31ULL);
}

namespace detail {
inline AffineMap init_affine(Eigen::Index out, Eigen::Index in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  AffineMap a;
  a.weights.resize(out, in);
  a.bias.resize(out);
  for (Eigen::Index i = 0; i < out; ++i) {
    for (Eigen::Index j = 0; j < in; ++j) a.weights(i, j) = u(rng);
  }
  for (Eigen::Index i = 0; i < out; ++i) a.bias(i) = u(rng);
  return a;
}
}  // namespace detail

inline Head init_head(Eigen::Index in, const std::vector<Eigen::Index>& widths, std::mt19937_64& rng) {
  if (widths.empty()) throw ParameterError("a block needs at least one hidden layer");
  Head h;
  Eigen::Index prev = in;
  for (auto w : widths) {
    if (w <= 0) throw ParameterError("hidden widths must be positive");
    h.block.layers.push_back(detail::init_affine(w, prev, rng));
    prev = w;
  }
  h.out = detail::init_affine(1, prev, rng);
  return h;
}

// ---------------------------------------------------------------------------
// Loss and gradient

/// Gradient in the same shapes as the parameters.
struct HeadGradient {
  std::vector<Eigen::MatrixXd> dw;
  std::vector<Eigen::VectorXd> db;
  Eigen::MatrixXd dw_out;
  Eigen::VectorXd db_out;
};

inline Eigen::RowVectorXd head_predict(const Head& h, const Eigen::MatrixXd& x) {
  return ((h.out.weights * h.block.forward(x)).colwise() + h.out.bias).row(0);
}

inline double mean_square(const Eigen::RowVectorXd& r) {
  std::vector<double> sq(static_cast<std::size_t>(r.size()));
  for (Eigen::Index i = 0; i < r.size(); ++i) sq[static_cast<std::size_t>(i)] = r(i) * r(i);
  return detail::pairwise_sum(sq) / static_cast<double>(r.size());
}

/// Mean squared error of the head on (x, y) and, if grad is given, its
/// gradient with respect to every parameter of the head.
inline double head_loss(const Head& h, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                        HeadGradient* grad = nullptr) {
  const std::size_t L = h.block.layers.size();
  std::vector<Eigen::MatrixXd> act(L + 1);
  act[0] = x;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& A = h.block.layers[l];
    act[l + 1] = ((A.weights * act[l]).colwise() + A.bias).cwiseMax(0.0);
  }
  const Eigen::RowVectorXd pred = ((h.out.weights * act[L]).colwise() + h.out.bias).row(0);
  const Eigen::RowVectorXd diff = pred - y;
  const double loss = mean_square(diff);
  if (!grad) return loss;

  const double scale = 2.0 / static_cast<double>(y.size());
  Eigen::MatrixXd delta = scale * diff;  // 1 x n
  grad->dw_out = delta * act[L].transpose();
  grad->db_out = delta.rowwise().sum();
  grad->dw.resize(L);
  grad->db.resize(L);
  Eigen::MatrixXd back = h.out.weights.transpose() * delta;
  for (std::size_t l = L; l-- > 0;) {
    // ReLU derivative taken as 0 at the kink.
    back = back.cwiseProduct((act[l + 1].array() > 0.0).cast<double>().matrix());
    grad->dw[l] = back * act[l].transpose();
    grad->db[l] = back.rowwise().sum();
    if (l > 0) back = h.block.layers[l].weights.transpose() * back;
  }
  return loss;
}

/// Flat views for finite-difference checks.
inline Eigen::VectorXd flatten(const Head& h) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(h.parameter_count()));
  Eigen::Index o = 0;
  auto put = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) v(o++) = m.data()[i];
  };
  for (const auto& l : h.block.layers) {
    put(l.weights);
    put(l.bias);
  }
  put(h.out.weights);
  put(h.out.bias);
  return v;
}

inline void unflatten(const Eigen::VectorXd& v, Head& h) {
  if (v.size() != static_cast<Eigen::Index>(h.parameter_count())) {
    throw ParameterError("parameter vector has the wrong length");
  }
  Eigen::Index o = 0;
  auto get = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = v(o++);
  };
  for (auto& l : h.block.layers) {
    get(l.weights);
    get(l.bias);
  }
  get(h.out.weights);
  get(h.out.bias);
}

inline Eigen::VectorXd flatten(const HeadGradient& g) {
  Eigen::Index n = g.dw_out.size() + g.db_out.size();
  for (std::size_t l = 0; l < g.dw.size(); ++l) n += g.dw[l].size() + g.db[l].size();
  Eigen::VectorXd v(n);
  Eigen::Index o = 0;
  auto put = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) v(o++) = m.data()[i];
  };
  for (std::size_t l = 0; l < g.dw.size(); ++l) {
    put(g.dw[l]);
    put(g.db[l]);
  }
  put(g.dw_out);
  put(g.db_out);
  return v;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { adam, sgd };

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  Eigen::VectorXd m, v;
};

/// One optimizer step on a trainable head. Parameters are updated through
/// their flat view, so a frozen block can never be reached from here.
inline void optimizer_step(Head& h, const HeadGradient& g, double lr, OptimizerKind kind,
                           AdamState& s) {
  if (!h.block.trainable) throw ContractViolation("optimizer step on a frozen block");
  Eigen::VectorXd p = flatten(h);
  const Eigen::VectorXd gv = flatten(g);
  if (kind == OptimizerKind::sgd) {
    p -= lr * gv;
  } else {
    if (s.m.size() != p.size()) {
      s.m = Eigen::VectorXd::Zero(p.size());
      s.v = Eigen::VectorXd::Zero(p.size());
      s.t = 0;
    }
    ++s.t;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * gv;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * gv.cwiseAbs2();
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    p.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
  }
  unflatten(p, h);
}

// ---------------------------------------------------------------------------
// Configuration and traces

struct TrainConfig {
  std::size_t grades = 4;
  std::vector<std::vector<Eigen::Index>> widths;  // per grade hidden widths
  std::vector<std::size_t> epochs_per_grade;
  std::size_t batch_size = 400;
  double lr0 = 1e-3;
  std::size_t lr_step = 20;  // s in lr0 * 0.9^floor(k / s)
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;

  /// Equal-width blocks with `layers` hidden layers each.
  static TrainConfig uniform(std::size_t grades, Eigen::Index width, std::size_t layers,
                             std::vector<std::size_t> epochs) {
    TrainConfig c;
    c.grades = grades;
    c.widths.assign(grades, std::vector<Eigen::Index>(layers, width));
    c.epochs_per_grade = std::move(epochs);
    return c;
  }

  void validate() const {
    if (grades == 0) throw ParameterError("grades must be positive");
    if (widths.size() != grades) throw ParameterError("widths must list one entry per grade");
    if (epochs_per_grade.size() != grades) {
      throw ParameterError("epochs_per_grade must list one entry per grade");
    }
    if (batch_size == 0) throw ParameterError("batch_size must be positive");
    if (lr_step == 0) throw ParameterError("lr step must be positive");
    if (!(lr0 > 0.0)) throw ParameterError("lr0 must be positive");
    for (const auto& w : widths) {
      if (w.empty()) throw ParameterError("every grade needs at least one hidden layer");
    }
  }

  std::size_t total_epochs() const {
    return std::accumulate(epochs_per_grade.begin(), epochs_per_grade.end(), std::size_t{0});
  }

  double learning_rate(std::size_t k) const {
    return lr0 * std::pow(0.9, static_cast<double>(k / lr_step));
  }
};

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t grade = 1;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double test_max = 0.0;
};

struct TrainTrace {
  std::vector<TraceRow> per_epoch;
  std::vector<std::size_t> grade_boundaries;  // global epoch at which each grade starts

  void write_csv(std::ostream& out) const {
    out << "epoch,grade,train_mse,test_mse,test_max\n";
    for (const auto& r : per_epoch) {
      out << r.epoch << ',' << r.grade << ',' << detail::format_double(r.train_mse) << ','
          << detail::format_double(r.test_mse) << ',' << detail::format_double(r.test_max) << '\n';
    }
  }

  /// Last recorded training MSE of a grade (1-based).
  double final_train_mse(std::size_t grade) const {
    double v = std::nan("");
    for (const auto& r : per_epoch) {
      if (r.grade == grade) v = r.train_mse;
    }
    return v;
  }
  const TraceRow& last() const { return per_epoch.back(); }
};

// ---------------------------------------------------------------------------
// Training loop shared by both methods

namespace detail {
struct Evaluation {
  double mse = 0.0;
  double max_abs = 0.0;
};

inline Evaluation evaluate_head(const Head& h, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) {
  const Eigen::RowVectorXd r = head_predict(h, x) - y;
  return {mean_square(r), r.cwiseAbs().maxCoeff()};
}

/// Trains one head for `epochs` epochs. Rows are appended after every
/// epoch; `epoch0` is the global epoch index the head starts at.
inline void fit_head(Head& h, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                     const Eigen::MatrixXd& xt, const Eigen::RowVectorXd& yt, std::size_t epochs,
                     const TrainConfig& cfg, std::mt19937_64& rng, std::size_t grade,
                     std::size_t epoch0, TrainTrace& trace) {
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  AdamState adam;
  HeadGradient g;
  Eigen::MatrixXd xb;
  Eigen::RowVectorXd yb;
  for (std::size_t e = 0; e < epochs; ++e) {
    const double lr = cfg.learning_rate(e);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      xb.resize(x.rows(), static_cast<Eigen::Index>(b));
      yb.resize(static_cast<Eigen::Index>(b));
      for (std::size_t i = 0; i < b; ++i) {
        xb.col(static_cast<Eigen::Index>(i)) = x.col(order[start + i]);
        yb(static_cast<Eigen::Index>(i)) = y(order[start + i]);
      }
      const double loss = head_loss(h, xb, yb, &g);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("loss became non-finite at grade " + std::to_string(grade) +
                               ", epoch " + std::to_string(epoch0 + e + 1));
      }
      optimizer_step(h, g, lr, cfg.optimizer, adam);
    }
    const auto tr = evaluate_head(h, x, y);
    const auto te = evaluate_head(h, xt, yt);
    if (!std::isfinite(tr.mse)) {
      throw TrainingDiverged("loss became non-finite at grade " + std::to_string(grade) +
                             ", epoch " + std::to_string(epoch0 + e + 1));
    }
    trace.per_epoch.push_back({epoch0 + e + 1, grade, tr.mse, te.mse, te.max_abs});
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// MGDL

struct MgdlModel {
  std::vector<Head> grades;

  /// Phi_m(x) = sum_k g_k(T_k ... T_1 x), optionally truncated to `upto` grades.
  Eigen::RowVectorXd predict(const Eigen::MatrixXd& x, std::size_t upto = SIZE_MAX) const {
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(x.cols());
    Eigen::MatrixXd h = x;
    for (std::size_t k = 0; k < std::min(upto, grades.size()); ++k) {
      h = grades[k].block.forward(h);
      s += ((grades[k].out.weights * h).colwise() + grades[k].out.bias).row(0);
    }
    return s;
  }
};

struct MgdlResult {
  MgdlModel model;
  TrainTrace trace;
  std::vector<std::uint64_t> frozen_checksums;    // checksum of grade k when it was frozen
  std::vector<double> start_residual_mse;         // mean of (y^{(m)})^2 per grade
  std::vector<double> final_mse;                  // grade-m objective after its last epoch
  std::vector<Eigen::RowVectorXd> residual_targets;  // y^{(m)} on the training set
};

/// Grade-by-grade training: grade m only sees the frozen features
/// x^(m) = T_{m-1} ... T_1 x and the residual y^(m) = y^(m-1) - g_{m-1}(x^(m)).
inline MgdlResult mgdl_train(const Dataset& train, const Dataset& test, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ParameterError("training set is empty");
  std::mt19937_64 rng(cfg.seed);
  MgdlResult res;
  Eigen::MatrixXd feat = train.x;
  Eigen::MatrixXd feat_t = test.x;
  Eigen::RowVectorXd y = train.y.transpose();
  Eigen::RowVectorXd yt = test.y.transpose();
  std::size_t epoch = 0;
  for (std::size_t m = 0; m < cfg.grades; ++m) {
    Head h = init_head(feat.rows(), cfg.widths[m], rng);
    res.trace.grade_boundaries.push_back(epoch);
    res.residual_targets.push_back(y);
    res.start_residual_mse.push_back(mean_square(y));
    const auto tr0 = detail::evaluate_head(h, feat, y);
    const auto te0 = detail::evaluate_head(h, feat_t, yt);
    res.trace.per_epoch.push_back({epoch, m + 1, tr0.mse, te0.mse, te0.max_abs});
    detail::fit_head(h, feat, y, feat_t, yt, cfg.epochs_per_grade[m], cfg, rng, m + 1, epoch,
                     res.trace);
    epoch += cfg.epochs_per_grade[m];
    h.block.trainable = false;
    res.frozen_checksums.push_back(checksum(h));

    // Advance features and residuals with exactly the expressions the
    // objective used, so mean((y^(m+1))^2) reproduces the final objective.
    const Eigen::MatrixXd next = h.block.forward(feat);
    const Eigen::MatrixXd next_t = h.block.forward(feat_t);
    y = y - ((h.out.weights * next).colwise() + h.out.bias).row(0);
    yt = yt - ((h.out.weights * next_t).colwise() + h.out.bias).row(0);
    res.final_mse.push_back(mean_square(y));
    feat = next;
    feat_t = next_t;
    res.model.grades.push_back(std::move(h));
  }
  return res;
}

// ---------------------------------------------------------------------------
// FCNN baseline

struct FcnnResult {
  Head model;
  TrainTrace trace;
};

/// End-to-end training of one stack whose hidden layers are the
/// concatenation of every grade's layers.
inline FcnnResult fcnn_train(const Dataset& train, const Dataset& test, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ParameterError("training set is empty");
  std::vector<Eigen::Index> widths;
  for (const auto& w : cfg.widths) widths.insert(widths.end(), w.begin(), w.end());
  std::mt19937_64 rng(cfg.seed);
  FcnnResult res;
  res.model = init_head(train.x.rows(), widths, rng);
  const Eigen::RowVectorXd y = train.y.transpose();
  const Eigen::RowVectorXd yt = test.y.transpose();
  const auto tr0 = detail::evaluate_head(res.model, train.x, y);
  const auto te0 = detail::evaluate_head(res.model, test.x, yt);
  res.trace.per_epoch.push_back({0, 1, tr0.mse, te0.mse, te0.max_abs});
  detail::fit_head(res.model, train.x, y, test.x, yt, cfg.total_epochs(), cfg, rng, 1, 0,
                   res.trace);
  return res;
}

// ---------------------------------------------------------------------------
// Export into the network interchange format

inline MultigradeNetwork to_network(const MgdlModel& model, std::size_t dim) {
  MultigradeNetwork net;
  net.dim = dim;
  net.trained = true;
  for (const auto& h : model.grades) {
    GradeBlock g;
    g.hidden = h.block.layers;
    g.output = h.out;
    net.grades.push_back(std::move(g));
  }
  net.round_boundaries.push_back(net.grades.size());
  return net;
}

inline MultigradeNetwork to_network(const Head& fcnn, std::size_t dim) {
  MgdlModel m;
  m.grades.push_back(fcnn);
  return to_network(m, dim);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckReport {
  std::size_t probes = 0;
  std::size_t redrawn = 0;  // probes whose stencil crossed a ReLU kink
  double max_rel_error = 0.0;
};

/// Central differences against head_loss on `probes` random coordinates.
/// A probe is redrawn when some pre-activation changes sign inside the
/// stencil, since the loss is not differentiable there.
inline GradCheckReport gradient_check(const Head& h, const Eigen::MatrixXd& x,
                                      const Eigen::RowVectorXd& y, std::size_t probes,
                                      std::uint64_t seed, double step = 1e-5) {
  auto pattern = [&](const Head& hh) {
    std::vector<bool> bits;
    Eigen::MatrixXd a = x;
    for (const auto& l : hh.block.layers) {
      const Eigen::MatrixXd z = (l.weights * a).colwise() + l.bias;
      for (Eigen::Index i = 0; i < z.size(); ++i) bits.push_back(z.data()[i] > 0.0);
      a = z.cwiseMax(0.0);
    }
    return bits;
  };
  HeadGradient g;
  head_loss(h, x, y, &g);
  const Eigen::VectorXd analytic = flatten(g);
  const Eigen::VectorXd p0 = flatten(h);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, p0.size() - 1);
  GradCheckReport rep;
  Head work = h;
  std::size_t attempts = 0;
  while (rep.probes < probes) {
    if (++attempts > 100 * probes) throw ContractViolation("gradient check could not find smooth probes");
    const Eigen::Index i = pick(rng);
    Eigen::VectorXd p = p0;
    p(i) = p0(i) + step;
    unflatten(p, work);
    const auto pat_plus = pattern(work);
    const double fp = head_loss(work, x, y);
    p(i) = p0(i) - step;
    unflatten(p, work);
    const auto pat_minus = pattern(work);
    const double fm = head_loss(work, x, y);
    if (pat_plus != pat_minus) {
      ++rep.redrawn;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * step);
    const double a = analytic(i);
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.probes;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Comparison bookkeeping

/// True if, for every grade m >= 2, some epoch in the first 10% of grade m
/// (at least one epoch) has training MSE below grade m-1's final MSE.
inline bool boundary_drops(const TrainTrace& t, const std::vector<std::size_t>& epochs_per_grade) {
  for (std::size_t m = 2; m <= epochs_per_grade.size(); ++m) {
    const double prev = t.final_train_mse(m - 1);
    const std::size_t start = t.grade_boundaries.at(m - 1);
    const std::size_t window = std::max<std::size_t>(1, epochs_per_grade[m - 1] / 10);
    bool dropped = false;
    for (const auto& r : t.per_epoch) {
      if (r.grade == m && r.epoch > start && r.epoch <= start + window && r.train_mse < prev) {
        dropped = true;
        break;
      }
    }
    if (!dropped) return false;
  }
  return true;
}

}  // namespace mgdl
