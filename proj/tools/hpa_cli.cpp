// hpa: command-line front end for the equilibrium solvers, the stationarity
// analyzer and the HPA trainer.
//
// Exit codes: 0 success, 2 validation or parse error, 3 runtime or
// numerical failure. HPA_LOG=debug prints training progress to stderr.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hpa/envs.hpp"
#include "hpa/equilibrium.hpp"
#include "hpa/hpa.hpp"
#include "hpa/stationarity.hpp"
#include "hpa/svg.hpp"

#ifndef HPA_VERSION
#define HPA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool debug_log() {
  const char* v = std::getenv("HPA_LOG");
  return v && std::string(v) == "debug";
}

class Manifest {
 public:
  Manifest(std::string command, fs::path dir) : dir_(std::move(dir)) {
    j_["command"] = std::move(command);
    j_["version"] = HPA_VERSION;
    j_["started"] = utc_now();
    j_["outputs"] = json::array();
  }
  json& config() { return j_["config"]; }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void output(const std::string& name) { j_["outputs"].push_back(name); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path(name).string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path(name).string() + "'");
    output(name);
  }

  void finish() {
    j_["finished"] = utc_now();
    output("run_manifest.json");
    std::ofstream out(path("run_manifest.json"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path("run_manifest.json").string() + "'");
    out << j_.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  json j_;
};

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir + "': " + ec.message());
  return p;
}

// Actions print 1-based, as a1, a2, ... in the usual matrix notation.
std::string action_tuple(const hpa::JointAction& a) {
  std::string s = "(";
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i] + 1);
  return s + ")";
}

std::string payoff_tuple(const std::vector<double>& p) { return "(" + hpa::fmt_vec(p, ",") + ")"; }

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
  std::string game;
  bool ne = false, se = false;
  std::string ordering, groups, out = ".";
};

void cmd_solve(const SolveArgs& a) {
  const hpa::MatrixGame g = hpa::as_matrix_game(a.game);
  const auto scheme = hpa::GroupScheme::parse(a.groups, g.players());
  std::vector<hpa::Ordering> orderings;
  if (!a.ordering.empty()) {
    hpa::Ordering o = hpa::Ordering::parse(a.ordering);
    if (o.size() != scheme.num_groups())
      throw hpa::ValidationError("ordering: expected a permutation of " +
                                 std::to_string(scheme.num_groups()) + " groups, got " +
                                 std::to_string(o.size()) + " entries");
    orderings.push_back(std::move(o));
  } else {
    orderings = hpa::enumerate_orderings(scheme);
  }
  const bool want_ne = a.ne || !a.se, want_se = a.se || !a.ne;

  Manifest m("solve", prepare_dir(a.out));
  m.config() = {{"game", a.game}, {"ne", want_ne}, {"se", want_se},
                {"ordering", a.ordering}, {"groups", a.groups}};

  json report{{"game", g.name()}, {"players", g.players()}, {"actions", g.actions()}};
  std::ostringstream text;
  text << "game " << g.name() << " (actions are 1-based)\n";
  const auto nash = hpa::pure_nash(g);
  if (want_ne) {
    text << "NE {";
    json arr = json::array();
    for (std::size_t i = 0; i < nash.size(); ++i) {
      text << (i ? ", " : "") << action_tuple(nash[i]);
      arr.push_back({{"joint_action", nash[i]}, {"payoffs", hpa::payoff(g, nash[i])}});
    }
    text << "}\n";
    for (const auto& n : nash) text << "  NE " << action_tuple(n) << " payoffs " << payoff_tuple(hpa::payoff(g, n)) << '\n';
    report["nash"] = arr;
  }
  if (want_se) {
    json arr = json::array();
    for (const auto& o : orderings) {
      const auto sol = hpa::se_backward_induction(g, o, scheme);
      text << "SE ordering " << o.str() << ": " << action_tuple(sol.joint_action) << " payoffs "
           << payoff_tuple(sol.payoffs) << '\n';
      json entry{{"ordering", o.perm()}, {"joint_action", sol.joint_action}, {"payoffs", sol.payoffs}};
      json rel = json::array();
      if (want_ne && !nash.empty()) {
        bool dominates_all = true;
        for (const auto& n : nash) {
          const auto p = hpa::pareto_compare(sol.payoffs, hpa::payoff(g, n));
          dominates_all = dominates_all && p == hpa::Pareto::dominates;
          text << "  vs NE " << action_tuple(n) << ": " << hpa::to_string(p) << '\n';
          rel.push_back({{"nash", n}, {"relation", hpa::to_string(p)}});
        }
        if (dominates_all) text << "  SE Pareto-dominates NE\n";
        entry["pareto_vs_nash"] = rel;
      }
      arr.push_back(entry);
    }
    report["stackelberg"] = arr;
  }
  std::cout << text.str();
  m.write_text("solve_report.json", report.dump(2) + "\n");
  m.finish();
}

// ---------------------------------------------------------------------------
// order-scan

void cmd_order_scan(const std::string& game, const std::string& groups, const std::string& out) {
  const hpa::MatrixGame g = hpa::as_matrix_game(game);
  const auto scheme = hpa::GroupScheme::parse(groups, g.players());
  const auto rep = hpa::order_scan(g, scheme);
  Manifest m("order-scan", prepare_dir(out));
  m.config() = {{"game", game}, {"groups", groups}};
  std::ostringstream csv;
  hpa::write_order_scan_csv(csv, rep, g.players());
  std::cout << csv.str() << "SE-SHIFT: " << (rep.se_shift ? "yes" : "no") << '\n';
  m.write_text("order_scan.csv", csv.str());
  m.finish();
}

// ---------------------------------------------------------------------------
// stationarity

struct StationarityArgs {
  std::string game, ord1, ord2, out = ".";
  double eps = 1e-8;
  std::size_t max_iter = hpa::kDefaultLmIterations;
};

void cmd_stationarity(const StationarityArgs& a) {
  hpa::Game any = hpa::resolve_game(a.game);
  if (!std::holds_alternative<hpa::QuadraticGame>(any))
    throw hpa::ValidationError("game: '" + a.game + "' is not a quadratic game");
  const auto& g = std::get<hpa::QuadraticGame>(any);
  const std::size_t n = g.players();
  std::vector<std::size_t> id(n), rev(n);
  for (std::size_t i = 0; i < n; ++i) id[i] = i, rev[i] = n - 1 - i;
  const hpa::Ordering o1 = a.ord1.empty() ? hpa::Ordering(id) : hpa::Ordering::parse(a.ord1);
  const hpa::Ordering o2 = a.ord2.empty() ? hpa::Ordering(rev) : hpa::Ordering::parse(a.ord2);
  if (o1.size() != n || o2.size() != n)
    throw hpa::ValidationError("ordering: expected a permutation of " + std::to_string(n) + " players");
  if (!(a.eps > 0.0)) throw hpa::ValidationError("eps: must be > 0");
  if (a.max_iter < 1) throw hpa::ValidationError("max-iter: must be >= 1");

  const auto sys = hpa::stack_joint_system(g, o1, o2);
  const auto rank = hpa::rank_test(sys);
  const auto lm = hpa::lm_minimize(sys, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)), a.eps, a.max_iter);

  Manifest m("stationarity", prepare_dir(a.out));
  m.config() = {{"game", a.game}, {"ord1", o1.perm()}, {"ord2", o2.perm()},
                {"eps", a.eps}, {"max_iter", a.max_iter}};
  std::ostringstream text;
  text << hpa::to_string(rank.verdict) << " (rank " << rank.rank_A
       << (rank.rank_A == rank.rank_Ab ? " = " : " != ") << rank.rank_Ab << ")\n";
  text << "least-squares residual " << hpa::fmt_num(rank.residual) << '\n';
  std::vector<double> cand(lm.candidate.data(), lm.candidate.data() + lm.candidate.size());
  text << "lm: " << hpa::to_string(lm.verdict) << " at eps " << hpa::fmt_num(a.eps) << ", residual "
       << hpa::fmt_num(lm.residual) << " after " << lm.iterations << " iterations, x = ("
       << hpa::fmt_vec(cand, ",") << ")\n";
  std::cout << text.str();
  json rep{{"verdict", hpa::to_string(rank.verdict)},
           {"rank_A", rank.rank_A},
           {"rank_Ab", rank.rank_Ab},
           {"least_squares_residual", rank.residual},
           {"lm", {{"verdict", hpa::to_string(lm.verdict)},
                   {"residual", lm.residual},
                   {"iterations", lm.iterations},
                   {"candidate", cand}}}};
  m.write_text("stationarity_report.json", rep.dump(2) + "\n");
  m.finish();
}

// ---------------------------------------------------------------------------
// train / eval

hpa::EnvParams env_params(const hpa::HpaConfig& c) { return {c.horizon, c.period(), 1.0}; }

std::string curves_svg(const hpa::HpaModel& model, const std::vector<hpa::MetricsRow>& rows) {
  hpa::Panel ret{"mean team return per step", {{"team return", {}}}, false};
  hpa::Panel freq{"option frequency", {}, true};
  for (const auto& o : model.upper.options) freq.series.push_back({hpa::option_label(o), {}});
  for (const auto& r : rows) {
    ret.series[0].y.push_back(r.mean_team_return);
    for (std::size_t o = 0; o < r.option_frequency.size(); ++o) freq.series[o].y.push_back(r.option_frequency[o]);
  }
  std::ostringstream out;
  hpa::write_svg(out, {ret, freq});
  return out.str();
}

struct TrainArgs {
  std::string env = "switching_leader", config, out;
  std::optional<std::uint64_t> seed;
  std::uint64_t max_env_steps = 0;
};

void cmd_train(const TrainArgs& a) {
  hpa::HpaConfig cfg = a.config.empty() ? hpa::HpaConfig{} : hpa::load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  auto env = hpa::make_builtin(a.env, env_params(cfg));
  const fs::path dir = prepare_dir(a.out);
  Manifest m("train", dir);
  m.config() = {{"env", a.env}, {"hpa", hpa::to_json(cfg)}, {"max_env_steps", a.max_env_steps}};
  m.seed(cfg.seed);

  const bool dbg = debug_log();
  auto result = hpa::train(*env, cfg,
                           [&](const hpa::EpisodeRecord& rec) {
                             if (dbg && rec.episode % 100 == 0)
                               std::cerr << "episode " << rec.episode << '\n';
                           },
                           a.max_env_steps);

  std::ostringstream metrics;
  hpa::write_metrics_header(metrics, result.model);
  for (const auto& row : result.metrics) hpa::write_metrics_row(metrics, row);
  m.write_text("metrics.csv", metrics.str());
  m.write_text("curves.svg", curves_svg(result.model, result.metrics));
  for (const auto& f : hpa::save_model(dir / "checkpoints", result.model)) m.output("checkpoints/" + f);

  const auto& last = result.metrics;
  std::cout << "trained " << last.size() << " episodes";
  if (!last.empty()) std::cout << ", " << last.back().env_steps << " env steps, final team return "
                               << hpa::fmt_num(last.back().mean_team_return);
  std::cout << "\nwrote " << dir.string() << '\n';
  m.finish();
}

struct EvalArgs {
  std::string checkpoint, env, out = ".";
  std::size_t episodes = 10;
};

void cmd_eval(const EvalArgs& a) {
  if (a.episodes < 1) throw hpa::ValidationError("episodes: must be >= 1");
  const hpa::HpaModel model = hpa::load_model(a.checkpoint);
  auto env = hpa::make_builtin(a.env, env_params(model.config));
  const auto oracle = [&](std::size_t s) { return hpa::oracle_best_option(*env, s, model.upper.options); };
  const auto rep = hpa::evaluate(model, *env, a.episodes, oracle);

  Manifest m("eval", prepare_dir(a.out));
  m.config() = {{"checkpoint", a.checkpoint}, {"env", a.env}, {"episodes", a.episodes}};
  m.seed(model.config.seed);

  std::ostringstream text;
  text << "greedy mean team return per step: " << hpa::fmt_num(rep.mean_team_return) << '\n';
  text << "state-matched boundaries: " << rep.matched << '/' << rep.boundaries << '\n';
  json hist = json::array();
  for (std::size_t s = 0; s < rep.greedy_counts.size(); ++s) {
    text << "state " << s << " (best " << hpa::option_label(model.upper.options[oracle(s)]) << "):";
    json row = json::object();
    for (std::size_t o = 0; o < rep.greedy_counts[s].size(); ++o) {
      const std::string label = hpa::option_label(model.upper.options[o]);
      text << ' ' << label << '=' << rep.greedy_counts[s][o] << " (p "
           << hpa::fmt_num(rep.option_probs[s][o]) << ')';
      row[label] = {{"greedy_count", rep.greedy_counts[s][o]}, {"probability", rep.option_probs[s][o]}};
    }
    text << '\n';
    hist.push_back(row);
  }
  std::cout << text.str();
  json report{{"mean_team_return", rep.mean_team_return},
              {"boundaries", rep.boundaries},
              {"matched", rep.matched},
              {"histogram", hist}};
  m.write_text("eval_report.json", report.dump(2) + "\n");
  m.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stackelberg ordering solvers and hierarchical priority adjustment"};
  app.set_version_flag("--version", std::string(HPA_VERSION));
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Pure NE and Stackelberg solutions of a matrix game");
  s->add_option("game", solve.game, "Built-in game name or JSON file")->required();
  s->add_flag("--ne", solve.ne, "Report pure Nash equilibria");
  s->add_flag("--se", solve.se, "Report Stackelberg solutions");
  s->add_option("--ordering", solve.ordering, "Group ordering, e.g. 0,1 (default: all)");
  s->add_option("--groups", solve.groups, "Group scheme: singletons, GxS, or blocks like 0,1;2");
  s->add_option("--out", solve.out, "Directory for the report and run manifest");

  std::string scan_game, scan_groups, scan_out = ".";
  auto* sc = app.add_subcommand("order-scan", "Stackelberg solution under every ordering");
  sc->add_option("game", scan_game, "Built-in game name or JSON file")->required();
  sc->add_option("--groups", scan_groups, "Group scheme");
  sc->add_option("--out", scan_out, "Directory for the CSV and run manifest");

  StationarityArgs st;
  auto* stc = app.add_subcommand("stationarity", "Joint stationarity test for two orderings");
  stc->add_option("game", st.game, "Quadratic game JSON file")->required();
  stc->add_option("--ord1", st.ord1, "First ordering (default: identity)");
  stc->add_option("--ord2", st.ord2, "Second ordering (default: reversed)");
  stc->add_option("--eps", st.eps, "Residual tolerance for the iterative solve");
  stc->add_option("--max-iter", st.max_iter, "Iteration limit for the iterative solve");
  stc->add_option("--out", st.out, "Directory for the report and run manifest");

  TrainArgs tr;
  auto* trc = app.add_subcommand("train", "Train HPA on a built-in environment");
  trc->add_option("--env", tr.env, "Environment name");
  trc->add_option("--config", tr.config, "JSON config file");
  trc->add_option("--seed", tr.seed, "Seed (overrides the config)");
  trc->add_option("--out", tr.out, "Run directory")->required();
  trc->add_option("--max-env-steps", tr.max_env_steps, "Env-step budget, 0 for none");

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  evc->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  evc->add_option("--env", ev.env, "Environment name")->required();
  evc->add_option("--episodes", ev.episodes, "Episodes to evaluate");
  evc->add_option("--out", ev.out, "Directory for the report and run manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*s) cmd_solve(solve);
    else if (*sc) cmd_order_scan(scan_game, scan_groups, scan_out);
    else if (*stc) cmd_stationarity(st);
    else if (*trc) cmd_train(tr);
    else if (*evc) cmd_eval(ev);
  } catch (const hpa::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const hpa::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const hpa::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
