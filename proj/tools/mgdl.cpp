// mgdl: constructive refinement, verification, training comparison and
// brute-force oracles from the command line.
//
// Exit status: 0 pass, 1 invariant or experiment failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mgdl/mgdl.hpp"

#ifndef MGDL_VERSION
#define MGDL_VERSION "0.0.0"
#endif
#ifndef MGDL_GIT_HASH
#define MGDL_GIT_HASH "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TargetOptions {
  std::string name = "f1";
  std::size_t d = 0;  // 0: implied by the target
  double value = 1.0;
  std::string csv;
  double lipschitz = 0.0;
};

std::shared_ptr<const mgdl::TargetFunction> resolve_target(const TargetOptions& t) {
  std::shared_ptr<const mgdl::TargetFunction> f;
  if (t.name == "constant") {
    f = mgdl::make_constant_target(t.d ? t.d : 1, t.value);
  } else if (t.name == "f1") {
    f = mgdl::make_f1_target();
  } else if (t.name == "f2") {
    f = mgdl::make_f2_target();
  } else if (t.name == "custom" || t.name == "custom-grid") {
    if (t.csv.empty()) throw UsageError("--target custom needs --csv FILE");
    if (!(t.lipschitz > 0.0)) throw UsageError("--target custom needs --lipschitz L > 0");
    f = mgdl::load_grid_target(t.csv, t.lipschitz);
  } else {
    throw UsageError("unknown target '" + t.name + "'");
  }
  if (t.d && t.d != f->dim) {
    throw UsageError("target '" + t.name + "' lives in d=" + std::to_string(f->dim) +
                     ", not d=" + std::to_string(t.d));
  }
  return f;
}

void add_target_options(CLI::App* app, TargetOptions& t) {
  app->add_option("--target", t.name, "constant, f1, f2 or custom")
      ->check(CLI::IsMember({"constant", "f1", "f2", "custom", "custom-grid"}));
  app->add_option("--d", t.d, "input dimension (constant target; checked for the others)")
      ->check(CLI::Range(1, 8));
  app->add_option("--value", t.value, "value of the constant target");
  app->add_option("--csv", t.csv, "tensor-grid samples for the custom target");
  app->add_option("--lipschitz", t.lipschitz, "Lipschitz constant of the custom target");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw mgdl::IoError("cannot write '" + p.string() + "'");
  out << text;
}

void write_json(const fs::path& p, const ordered_json& j) { write_text(p, j.dump(2) + "\n"); }

/// Config echo plus the one file allowed to differ between identical runs.
void write_provenance(const fs::path& out, const CLI::App& root, const std::string& command,
                      unsigned threads) {
  fs::create_directories(out);
  write_text(out / "config.toml", root.config_to_str(true, false));
  ordered_json meta;
  meta["tool"] = "mgdl";
  meta["version"] = MGDL_VERSION;
  meta["git_hash"] = MGDL_GIT_HASH;
  meta["command"] = command;
  meta["threads"] = threads;
  meta["timestamp"] = utc_timestamp();
  write_json(out / "metadata.json", meta);
}

// ---------------------------------------------------------------------------

struct ConstructOptions {
  TargetOptions target;
  std::optional<double> eps;
  double r = 1.5;
  std::optional<std::size_t> rounds;
  std::optional<double> sup_tol;
  std::size_t grid = 0;
  std::size_t samples_per_cube = 16;
  std::size_t max_rounds = 12;
  std::size_t max_points = std::size_t{1} << 24;
  std::string form = "clipped";
  unsigned threads = 1;
  std::string out;
};

int cmd_construct(const ConstructOptions& o, const CLI::App& root) {
  // The eps bound depends only on d, so it is checked before the target.
  if (o.eps && o.target.d) {
    try {
      mgdl::validate_epsilon(*o.eps, o.target.d);
    } catch (const mgdl::ParameterError& e) {
      throw UsageError(e.what());
    }
  }
  auto f = resolve_target(o.target);
  const double eps = o.eps.value_or(mgdl::default_epsilon(f->dim));
  try {
    mgdl::validate_epsilon(eps, f->dim);
  } catch (const mgdl::ParameterError& e) {
    throw UsageError(e.what());
  }
  if (!o.rounds && !o.sup_tol) throw UsageError("construct needs --rounds or --sup-tol");
  mgdl::RefineConfig cfg;
  cfg.epsilon = eps;
  try {
    cfg.r = mgdl::DilationParam(o.r);
  } catch (const mgdl::ParameterError& e) {
    throw UsageError(e.what());
  }
  cfg.form = o.form == "averaged" ? mgdl::CutoffForm::averaged : mgdl::CutoffForm::clipped;
  cfg.initial_resolution = o.grid;
  cfg.samples_per_cube = o.samples_per_cube;
  cfg.max_rounds = o.max_rounds;
  cfg.max_grid_points = o.max_points;
  cfg.threads = o.threads;
  mgdl::StopRule stop{o.rounds, o.sup_tol};

  const fs::path out(o.out);
  write_provenance(out, root, "construct", o.threads);
  const auto res = mgdl::refine(f, stop, cfg);
  mgdl::export_network(res.network, (out / "network.json").string());
  {
    std::ofstream g(out / "grades.csv");
    mgdl::write_grade_csv(res.trace, g);
    std::ofstream r(out / "rounds.csv");
    mgdl::write_round_csv(res.trace, r);
  }

  using mgdl::detail::format_double;
  std::vector<std::string> failures;
  std::size_t dom = 0, nonstrict_interior = 0, flagged = 0;
  for (const auto& g : res.trace.per_grade) {
    dom += g.domination_violations;
    const bool strict = g.strict_l1() && g.strict_l2();
    if (!strict && g.meets_domain) {
      if (g.straddles) {
        ++flagged;
      } else {
        ++nonstrict_interior;
      }
    }
  }
  if (dom) failures.push_back(std::to_string(dom) + " pointwise domination violations above 1e-12");
  if (nonstrict_interior) {
    failures.push_back(std::to_string(nonstrict_interior) +
                       " interior grades without strict L1/L2 decrease");
  }
  ordered_json rounds = ordered_json::array();
  bool envelope_ok = true;
  for (const auto& r : res.trace.per_round) {
    const bool contraction = r.m_after <= (1.0 - eps) * r.m_before + r.slack;
    const bool envelope = r.m_after <= r.envelope_bound + r.envelope_slack;
    envelope_ok = envelope_ok && envelope;
    if (!contraction) {
      failures.push_back("round " + std::to_string(r.j) + ": m_after " + format_double(r.m_after) +
                         " > (1-eps) m_before + slack = " +
                         format_double((1.0 - eps) * r.m_before + r.slack));
    }
    if (!envelope) {
      failures.push_back("round " + std::to_string(r.j) + ": sup " + format_double(r.m_after) +
                         " > (1-eps)^j M0 + slack = " +
                         format_double(r.envelope_bound + r.envelope_slack));
    }
    if (r.n_j > 0 && !r.conditions.ok()) {
      failures.push_back("round " + std::to_string(r.j) + ": plan conditions failed on the grid");
    }
    rounds.push_back({{"j", r.j},
                      {"sup", format_double(r.m_after)},
                      {"envelope_bound", format_double(r.envelope_bound)},
                      {"envelope_slack", format_double(r.envelope_slack)},
                      {"envelope_ok", envelope},
                      {"contraction_ok", contraction}});
  }
  ordered_json summary;
  summary["target"] = f->name;
  summary["dim"] = f->dim;
  summary["epsilon"] = format_double(eps);
  summary["r"] = format_double(o.r);
  summary["rounds"] = res.trace.per_round.size();
  summary["grades"] = res.network.size();
  summary["initial_sup"] = format_double(res.trace.initial_sup);
  summary["final_sup"] = format_double(res.trace.final_sup());
  summary["envelope_ok"] = envelope_ok;
  summary["domination_violations"] = dom;
  summary["flagged_boundary_grades"] = flagged;
  summary["halted"] = res.trace.halted;
  summary["diagnostic"] = res.trace.diagnostic;
  summary["per_round"] = rounds;
  summary["failures"] = failures;
  write_json(out / "summary.json", summary);

  std::cout << "target " << f->name << ", d=" << f->dim << ", eps=" << format_double(eps) << '\n'
            << "rounds " << res.trace.per_round.size() << ", grades " << res.network.size()
            << ", final sup " << format_double(res.trace.final_sup()) << '\n';
  for (const auto& r : res.trace.per_round) {
    std::cout << "  round " << r.j << ": sup " << format_double(r.m_after) << " <= "
              << format_double(r.envelope_bound) << " + " << format_double(r.envelope_slack)
              << '\n';
  }
  if (res.trace.halted) std::cout << "halted: " << res.trace.diagnostic << '\n';
  for (const auto& msg : failures) std::cerr << "FAIL " << msg << '\n';
  if (o.sup_tol && res.trace.halted) return kFail;
  return failures.empty() ? kPass : kFail;
}

// ---------------------------------------------------------------------------

struct VerifyCliOptions {
  TargetOptions target;
  std::string network;
  std::size_t grid = 0;
  std::optional<double> eps;
  unsigned threads = 1;
  std::string out;
};

int cmd_verify(const VerifyCliOptions& o, const CLI::App& root) {
  const auto net = mgdl::import_network(o.network);
  TargetOptions t = o.target;
  if (!t.d) t.d = net.dim;
  auto f = resolve_target(t);
  mgdl::VerifyOptions vo;
  vo.grid_resolution = o.grid;
  vo.epsilon = o.eps;
  const auto rep = mgdl::verify_network(net, *f, vo);
  std::cout << "network " << o.network << ": " << net.size() << " grades, d=" << net.dim
            << ", grid " << rep.grid_resolution << (rep.dense ? " (dense evaluation)" : "")
            << '\n';
  rep.print(std::cout);
  if (!o.out.empty()) {
    const fs::path out(o.out);
    write_provenance(out, root, "verify", o.threads);
    ordered_json j = ordered_json::array();
    for (const auto& r : rep.rows) {
      j.push_back({{"check", r.name},
                   {"result", r.skipped ? "skip" : (r.passed ? "pass" : "fail")},
                   {"measured", mgdl::detail::format_double(r.measured)},
                   {"bound", mgdl::detail::format_double(r.bound)},
                   {"note", r.note}});
    }
    write_json(out / "verify.json", {{"grid", rep.grid_resolution}, {"checks", j}});
  }
  return rep.all_passed() ? kPass : kFail;
}

// ---------------------------------------------------------------------------

struct TrainCliOptions {
  TargetOptions target;
  std::size_t grades = 4;
  Eigen::Index width = 32;
  std::size_t layers = 2;
  std::optional<std::size_t> epochs;
  std::vector<std::size_t> epochs_per_grade;
  std::size_t seeds = 3;
  std::size_t n_train = 10000;
  std::size_t n_test = 3000;
  std::size_t batch = 400;
  double lr = 3e-3;
  std::size_t lr_step_mgdl = 20;
  std::size_t lr_step_fcnn = 33;
  bool check = false;
  unsigned threads = 1;
  std::string out;
};

std::vector<std::size_t> split_epochs(std::size_t total, std::size_t grades) {
  // Grade shares 1:2:4:9 for four grades, doubling shares otherwise.
  std::vector<double> w;
  if (grades == 4) {
    w = {1, 2, 4, 9};
  } else {
    for (std::size_t g = 0; g < grades; ++g) w.push_back(std::ldexp(1.0, static_cast<int>(g)));
  }
  double sum = 0.0;
  for (double v : w) sum += v;
  std::vector<std::size_t> e(grades);
  std::size_t used = 0;
  for (std::size_t g = 0; g + 1 < grades; ++g) {
    e[g] = static_cast<std::size_t>(std::floor(static_cast<double>(total) * w[g] / sum));
    used += e[g];
  }
  e[grades - 1] = total - used;
  return e;
}

struct SeedOutcome {
  mgdl::MgdlResult mgdl;
  mgdl::FcnnResult fcnn;
};

int cmd_train(const TrainCliOptions& o, const CLI::App& root) {
  auto f = resolve_target(o.target);
  if (o.grades == 0) throw UsageError("--grades must be positive");
  std::vector<std::size_t> epochs = o.epochs_per_grade;
  if (epochs.empty()) epochs = split_epochs(o.epochs.value_or(2000), o.grades);
  if (epochs.size() != o.grades) throw UsageError("--epochs-per-grade needs one entry per grade");

  mgdl::TrainConfig cfg = mgdl::TrainConfig::uniform(o.grades, o.width, o.layers, epochs);
  cfg.batch_size = o.batch;
  cfg.lr0 = o.lr;
  try {
    cfg.validate();
  } catch (const mgdl::ParameterError& e) {
    throw UsageError(e.what());
  }
  const fs::path out(o.out);
  write_provenance(out, root, "train", o.threads);

  std::vector<SeedOutcome> outcomes(o.seeds);
  auto run_seed = [&](std::size_t s) {
    const auto train = mgdl::make_dataset(*f, o.n_train, mgdl::Sampling::uniform_random, 1000 + s);
    const auto test = mgdl::make_dataset(*f, o.n_test, mgdl::Sampling::uniform_random, 2000 + s);
    mgdl::TrainConfig c = cfg;
    c.seed = s;
    c.lr_step = o.lr_step_mgdl;
    outcomes[s].mgdl = mgdl::mgdl_train(train, test, c);
    c.lr_step = o.lr_step_fcnn;
    outcomes[s].fcnn = mgdl::fcnn_train(train, test, c);
  };
  // Seeds are independent; each is computed by one thread, so results do
  // not depend on the worker count.
  const unsigned workers = std::max(1u, std::min<unsigned>(o.threads, static_cast<unsigned>(o.seeds)));
  for (std::size_t base = 0; base < o.seeds; base += workers) {
    std::vector<std::thread> pool;
    for (std::size_t s = base; s < std::min<std::size_t>(o.seeds, base + workers); ++s) {
      pool.emplace_back(run_seed, s);
    }
    for (auto& t : pool) t.join();
  }

  using mgdl::detail::format_double;
  ordered_json per_seed = ordered_json::array();
  std::size_t wins = 0, drops = 0;
  for (std::size_t s = 0; s < o.seeds; ++s) {
    const auto& r = outcomes[s];
    {
      std::ofstream a(out / ("mgdl_trace_seed" + std::to_string(s) + ".csv"));
      r.mgdl.trace.write_csv(a);
      std::ofstream b(out / ("fcnn_trace_seed" + std::to_string(s) + ".csv"));
      r.fcnn.trace.write_csv(b);
    }
    mgdl::export_network(mgdl::to_network(r.mgdl.model, f->dim),
                         (out / ("mgdl_model_seed" + std::to_string(s) + ".json")).string());
    mgdl::export_network(mgdl::to_network(r.fcnn.model, f->dim),
                         (out / ("fcnn_model_seed" + std::to_string(s) + ".json")).string());
    const double m_test = r.mgdl.trace.last().test_mse;
    const double f_test = r.fcnn.trace.last().test_mse;
    const bool win = m_test <= f_test;
    const bool drop = mgdl::boundary_drops(r.mgdl.trace, epochs);
    wins += win ? 1 : 0;
    drops += drop ? 1 : 0;
    per_seed.push_back({{"seed", s},
                        {"mgdl_train_mse", format_double(r.mgdl.trace.last().train_mse)},
                        {"mgdl_test_mse", format_double(m_test)},
                        {"mgdl_test_max", format_double(r.mgdl.trace.last().test_max)},
                        {"fcnn_train_mse", format_double(r.fcnn.trace.last().train_mse)},
                        {"fcnn_test_mse", format_double(f_test)},
                        {"fcnn_test_max", format_double(r.fcnn.trace.last().test_max)},
                        {"mgdl_not_worse", win},
                        {"boundary_drops", drop}});
    std::cout << "seed " << s << ": MGDL test MSE " << format_double(m_test) << ", FCNN test MSE "
              << format_double(f_test) << (win ? "  (MGDL <= FCNN)" : "  (FCNN lower)")
              << (drop ? ", drops at every boundary" : ", missing boundary drop") << '\n';
  }
  const bool majority_win = 2 * wins > o.seeds;
  const bool majority_drop = o.grades < 2 || 2 * drops > o.seeds;
  ordered_json summary;
  summary["target"] = f->name;
  summary["grades"] = o.grades;
  summary["epochs_per_grade"] = epochs;
  summary["seeds"] = per_seed;
  summary["mgdl_not_worse_count"] = wins;
  summary["boundary_drop_count"] = drops;
  summary["majority_mgdl_not_worse"] = majority_win;
  summary["majority_boundary_drops"] = majority_drop;
  write_json(out / "comparison.json", summary);
  std::cout << "verdict: MGDL <= FCNN in " << wins << " of " << o.seeds
            << " seeds; grade-boundary drops in " << drops << " of " << o.seeds << '\n';
  if (o.check && !(majority_win && majority_drop)) return kFail;
  return kPass;
}

// ---------------------------------------------------------------------------

struct OracleCliOptions {
  std::size_t d = 2;
  std::size_t grid = 17;
  double r = 1.5;
  double eps = 0.25;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out;
};

int cmd_oracle(const OracleCliOptions& o, const CLI::App& root) {
  try {
    mgdl::oracle::check_instance(o.d, o.grid);
  } catch (const mgdl::ParameterError& e) {
    throw UsageError(std::string("refused: ") + e.what());
  }
  const auto report = mgdl::oracle::run_all(o.d, o.grid, mgdl::DilationParam(o.r), o.eps, o.seed);
  if (!o.out.empty()) {
    write_provenance(o.out, root, "oracle", o.threads);
    write_json(fs::path(o.out) / "oracle.json", report);
  }
  std::cout << report.dump(2) << '\n';
  const bool ok = report["overlap"]["max_at_vertices"].get<std::size_t>() ==
                      report["overlap"]["bound"].get<std::size_t>() &&
                  report["overlap"]["max_at_random"].get<std::size_t>() <=
                      report["overlap"]["bound"].get<std::size_t>();
  return ok ? kPass : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multigrade ReLU construction and training"};
  app.set_version_flag("--version", std::string(MGDL_VERSION) + " (" + MGDL_GIT_HASH + ")");
  app.set_config("--config", "", "read options from a TOML/INI file");
  app.require_subcommand(1);

  ConstructOptions co;
  auto* construct = app.add_subcommand("construct", "build a multigrade network by refinement");
  add_target_options(construct, co.target);
  construct->add_option("--eps", co.eps, "contraction parameter, 0 < eps < 1/(1+2^d)");
  construct->add_option("--r", co.r, "dilation factor in (1,2)");
  construct->add_option("--rounds", co.rounds, "number of rounds");
  construct->add_option("--sup-tol", co.sup_tol, "stop once the grid sup falls to this value");
  construct->add_option("--grid", co.grid, "initial grid resolution per axis (0: default)");
  construct->add_option("--samples-per-cube", co.samples_per_cube, "grid points per cube side")
      ->check(CLI::Range(2, 1024));
  construct->add_option("--max-rounds", co.max_rounds, "round cap for --sup-tol runs");
  construct->add_option("--max-points", co.max_points, "grid size cap");
  construct->add_option("--form", co.form, "cutoff form")->check(CLI::IsMember({"clipped", "averaged"}));
  construct->add_option("--threads", co.threads, "worker threads")->check(CLI::Range(1, 256));
  construct->add_option("--out", co.out, "output directory")->required();

  VerifyCliOptions vo;
  auto* verify = app.add_subcommand("verify", "replay the construction invariants on a network file");
  verify->add_option("network", vo.network, "network JSON file")->required();
  add_target_options(verify, vo.target);
  verify->add_option("--grid", vo.grid, "grid resolution per axis (0: from the smallest cube)");
  verify->add_option("--eps", vo.eps, "enables the per-round contraction check");
  verify->add_option("--threads", vo.threads, "worker threads")->check(CLI::Range(1, 256));
  verify->add_option("--out", vo.out, "optional output directory for verify.json");

  TrainCliOptions to;
  auto* train = app.add_subcommand("train", "grade-wise MGDL versus end-to-end FCNN");
  add_target_options(train, to.target);
  train->add_option("--grades", to.grades, "number of grades");
  train->add_option("--width", to.width, "hidden width");
  train->add_option("--layers", to.layers, "hidden layers per grade");
  train->add_option("--epochs", to.epochs, "total epochs, split over grades 1:2:4:9");
  train->add_option("--epochs-per-grade", to.epochs_per_grade, "explicit epochs per grade");
  train->add_option("--seeds", to.seeds, "number of seeds")->check(CLI::Range(1, 64));
  train->add_option("--n-train", to.n_train, "training samples");
  train->add_option("--n-test", to.n_test, "test samples");
  train->add_option("--batch", to.batch, "mini-batch size");
  train->add_option("--lr", to.lr, "initial learning rate");
  train->add_option("--lr-step-mgdl", to.lr_step_mgdl, "decay step s for MGDL grades");
  train->add_option("--lr-step-fcnn", to.lr_step_fcnn, "decay step s for the FCNN");
  train->add_flag("--check", to.check, "exit 1 unless the majority verdicts hold");
  train->add_option("--threads", to.threads, "seeds trained in parallel")->check(CLI::Range(1, 256));
  train->add_option("--out", to.out, "output directory")->required();

  OracleCliOptions oo;
  auto* oracle = app.add_subcommand("oracle", "brute-force reference checks on small instances");
  oracle->add_option("--d", oo.d, "dimension (at most 3)");
  oracle->add_option("--grid", oo.grid, "grid resolution (at most 65)");
  oracle->add_option("--r", oo.r, "dilation factor");
  oracle->add_option("--eps", oo.eps, "superlevel parameter");
  oracle->add_option("--seeds", oo.seed, "seed for the random points");
  oracle->add_option("--threads", oo.threads, "worker threads")->check(CLI::Range(1, 256));
  oracle->add_option("--out", oo.out, "optional output directory for oracle.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (*construct) return cmd_construct(co, app);
    if (*verify) return cmd_verify(vo, app);
    if (*train) return cmd_train(to, app);
    if (*oracle) return cmd_oracle(oo, app);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const mgdl::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  }
  return kUsage;
}
