#pragma once

// Built-in matrix environments: an iterated single-state game and the
// two-state switching-leader game whose best ordering depends on the state.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hpa/equilibrium.hpp"
#include "hpa/error.hpp"
#include "hpa/games.hpp"
#include "hpa/smg.hpp"

namespace hpa {

/// Largest per-cell mean absolute payoff over the given games. For fig2 this
/// is 40, so the SE cell (40, 40) normalizes to (1, 1).
inline double payoff_normalizer(const std::vector<MatrixGame>& games) {
  double best = 0.0;
  for (const auto& g : games)
    for (std::size_t c = 0; c < g.num_cells(); ++c) {
      const JointAction joint = g.unflatten(c);
      double s = 0.0;
      for (std::size_t p = 0; p < g.players(); ++p) s += std::abs(g.payoff(p, joint));
      best = std::max(best, s / static_cast<double>(g.players()));
    }
  return best > 0.0 ? best : 1.0;
}

/// Player roles swapped: payoff of player p at (a0, a1) is the original
/// payoff of player 1-p at (a1, a0). Two players only.
inline MatrixGame swap_roles(const MatrixGame& g) {
  if (g.players() != 2) throw ValidationError("swap_roles: needs a 2-player game");
  const std::size_t m0 = g.actions()[0], m1 = g.actions()[1];
  std::vector<std::vector<double>> pay(2, std::vector<double>(m0 * m1));
  for (std::size_t a0 = 0; a0 < m1; ++a0)
    for (std::size_t a1 = 0; a1 < m0; ++a1)
      for (std::size_t p = 0; p < 2; ++p)
        pay[p][a0 * m0 + a1] = g.payoff(1 - p, JointAction{a1, a0});
  return MatrixGame(g.name() + "_swapped", {m1, m0}, std::move(pay), false);
}

/// Plays one of several matrix games per step. The state is
/// floor(t / period) mod (number of games), so with a single game this is the
/// plain iterated game.
class MatrixSequenceEnv : public Env {
 public:
  MatrixSequenceEnv(std::string name, std::vector<MatrixGame> games, std::size_t horizon,
                    std::size_t period = 1, double gamma = 1.0)
      : games_(std::move(games)), period_(period) {
    if (games_.empty()) throw ValidationError("env: needs at least one game");
    if (period_ < 1) throw ValidationError("period: must be >= 1");
    for (const auto& g : games_)
      if (g.actions() != games_.front().actions())
        throw ValidationError("env: games differ in action spaces");
    desc_.name = std::move(name);
    desc_.num_states = games_.size();
    desc_.actions = games_.front().actions();
    desc_.horizon = horizon;
    desc_.gamma = gamma;
    desc_.normalizer = payoff_normalizer(games_);
    desc_.validate();
  }

  const EnvDescriptor& descriptor() const override { return desc_; }
  const std::vector<MatrixGame>& games() const { return games_; }
  std::size_t period() const { return period_; }

  std::size_t state_at(std::size_t t) const { return (t / period_) % games_.size(); }

  std::size_t reset() override {
    t_ = 0;
    return state();
  }

  StepResult step(const JointAction& joint) override {
    if (done()) throw ValidationError("episode finished");
    if (joint.size() != desc_.agents())
      throw ValidationError("action: expected " + std::to_string(desc_.agents()) + " entries");
    for (std::size_t i = 0; i < joint.size(); ++i)
      if (joint[i] >= desc_.actions[i])
        throw ValidationError("action: agent " + std::to_string(i) + " action " +
                              std::to_string(joint[i]) + " out of range");
    const MatrixGame& g = games_[state()];
    StepResult r;
    r.rewards.resize(desc_.agents());
    for (std::size_t i = 0; i < joint.size(); ++i)
      r.rewards[i] = g.payoff(i, joint) / desc_.normalizer;
    ++t_;
    r.next_state = state();
    r.done = done();
    return r;
  }

  std::size_t state() const override { return state_at(t_); }
  std::size_t time() const override { return t_; }

 private:
  std::vector<MatrixGame> games_;
  std::size_t period_;
  EnvDescriptor desc_;
  std::size_t t_ = 0;
};

struct EnvParams {
  std::size_t horizon = 8;
  std::size_t period = 2;  // switching envs: steps per state
  double gamma = 1.0;
};

inline std::unique_ptr<MatrixSequenceEnv> make_iterated(std::string name, MatrixGame game,
                                                        const EnvParams& p) {
  return std::make_unique<MatrixSequenceEnv>(std::move(name), std::vector<MatrixGame>{std::move(game)},
                                             p.horizon, 1, p.gamma);
}

inline std::unique_ptr<MatrixSequenceEnv> make_switching(std::string name, MatrixGame m0,
                                                         MatrixGame m1, const EnvParams& p) {
  return std::make_unique<MatrixSequenceEnv>(
      std::move(name), std::vector<MatrixGame>{std::move(m0), std::move(m1)}, p.horizon,
      p.period, p.gamma);
}

inline MatrixGame as_matrix_game(const std::string& name_or_path) {
  Game g = resolve_game(name_or_path);
  if (!std::holds_alternative<MatrixGame>(g))
    throw ValidationError("env: '" + name_or_path + "' is not a matrix game");
  return std::get<MatrixGame>(std::move(g));
}

inline std::vector<std::string> builtin_env_names() {
  return {"iterated_fig2", "switching_leader"};
}

/// "iterated_fig2", "switching_leader", "iterated:<game>", or
/// "switching:<game0>,<game1>" where <game> is a built-in name or a file.
inline std::unique_ptr<MatrixSequenceEnv> make_builtin(const std::string& name,
                                                       const EnvParams& p = {}) {
  if (name == "iterated_fig2") return make_iterated(name, builtin_game("fig2"), p);
  if (name == "switching_leader") {
    MatrixGame m0 = builtin_game("fig2");
    MatrixGame m1 = swap_roles(m0);
    return make_switching(name, std::move(m0), std::move(m1), p);
  }
  if (name.rfind("iterated:", 0) == 0) return make_iterated(name, as_matrix_game(name.substr(9)), p);
  if (name.rfind("switching:", 0) == 0) {
    const std::string rest = name.substr(10);
    const auto comma = rest.find(',');
    if (comma == std::string::npos)
      throw ValidationError("env: switching needs two games separated by ','");
    return make_switching(name, as_matrix_game(rest.substr(0, comma)),
                          as_matrix_game(rest.substr(comma + 1)), p);
  }
  throw ValidationError("env: unknown name '" + name + "'");
}

/// Per-step team return at `state` when every agent plays the SE of that
/// state's game under `ordering`.
inline double oracle_step_return(const MatrixSequenceEnv& env, std::size_t state,
                                 const Ordering& ordering) {
  const auto sol = se_backward_induction(env.games().at(state), ordering);
  double team = 0.0;
  for (double v : sol.payoffs) team += v;
  return team / env.descriptor().normalizer;
}

inline double oracle_window_return(const MatrixSequenceEnv& env, std::size_t state,
                                   const Ordering& ordering, std::size_t k) {
  return oracle_step_return(env, state, ordering) * static_cast<double>(k);
}

/// Ordering with the highest SE team return at `state`; ties go to the
/// first in lexicographic order.
inline std::size_t oracle_best_option(const MatrixSequenceEnv& env, std::size_t state,
                                      const std::vector<Ordering>& options) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < options.size(); ++o) {
    const double v = oracle_step_return(env, state, options[o]);
    if (v > best_v) {
      best_v = v;
      best = o;
    }
  }
  return best;
}

/// Mean per-step SE team return over one episode when the ordering at each
/// step is chosen by `pick(state)`.
template <typename Pick>
double oracle_mean_return(const MatrixSequenceEnv& env, Pick pick) {
  double total = 0.0;
  const std::size_t H = env.descriptor().horizon;
  for (std::size_t t = 0; t < H; ++t) {
    const std::size_t s = env.state_at(t);
    total += oracle_step_return(env, s, pick(s));
  }
  return total / static_cast<double>(H);
}

}  // namespace hpa
