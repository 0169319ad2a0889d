#pragma once

// Sequential Markov game plumbing: the environment contract, subgame states
// (base state plus the actions of agents that already moved), windowed
// rollouts under an ordering, and the two transition buffers.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpa/error.hpp"
#include "hpa/format.hpp"
#include "hpa/games.hpp"
#include "hpa/policy.hpp"
#include "hpa/rng.hpp"

namespace hpa {

struct EnvDescriptor {
  std::string name;
  std::size_t num_states = 1;         // discrete state index in [0, num_states)
  std::vector<std::size_t> actions;   // per-agent action counts
  std::size_t horizon = 1;
  double gamma = 1.0;
  double normalizer = 1.0;            // rewards = payoff / normalizer

  std::size_t agents() const { return actions.size(); }

  std::size_t joint_actions() const {
    return std::accumulate(actions.begin(), actions.end(), std::size_t{1},
                           std::multiplies<>());
  }

  void validate() const {
    if (horizon < 1) throw ValidationError("horizon: must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma: must lie in (0, 1]");
    if (actions.empty()) throw ValidationError("actions: need at least one agent");
    if (num_states < 1) throw ValidationError("num_states: must be >= 1");
  }
};

struct StepResult {
  std::size_t next_state = 0;
  std::vector<double> rewards;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvDescriptor& descriptor() const = 0;
  virtual std::size_t reset() = 0;
  virtual StepResult step(const JointAction& joint) = 0;
  virtual std::size_t state() const = 0;
  virtual std::size_t time() const = 0;
  bool done() const { return time() >= descriptor().horizon; }
};

// ---------------------------------------------------------------------------
// Subgame states and their encodings

/// What an agent sees when it acts: the base state and the actions of the
/// agents ahead of it in the active ordering, in acting order.
struct SubgameState {
  std::size_t agent = 0;
  std::size_t base = 0;
  std::vector<std::pair<std::size_t, std::size_t>> predecessors;  // (agent, action)

  friend bool operator==(const SubgameState&, const SubgameState&) = default;
};

/// Maps subgame states to approximator inputs. Each agent's input has one
/// slot per other agent holding 0 (not yet acted) or 1 + its action.
class SubgameEncoder {
 public:
  SubgameEncoder() = default;
  explicit SubgameEncoder(const EnvDescriptor& d) : states_(d.num_states), actions_(d.actions) {}

  std::size_t table_size(std::size_t agent) const {
    std::size_t n = states_;
    for (std::size_t j = 0; j < actions_.size(); ++j)
      if (j != agent) n *= actions_[j] + 1;
    return n;
  }

  std::size_t feature_size(std::size_t agent) const {
    std::size_t n = states_;
    for (std::size_t j = 0; j < actions_.size(); ++j)
      if (j != agent) n += actions_[j] + 1;
    return n;
  }

  Input encode(const SubgameState& s) const {
    const std::vector<std::size_t> slot = slots(s);
    Input in;
    in.index = s.base;
    for (std::size_t j = 0; j < actions_.size(); ++j)
      if (j != s.agent) in.index = in.index * (actions_[j] + 1) + slot[j];
    in.features.assign(feature_size(s.agent), 0.0);
    in.features[s.base] = 1.0;
    std::size_t off = states_;
    for (std::size_t j = 0; j < actions_.size(); ++j) {
      if (j == s.agent) continue;
      in.features[off + slot[j]] = 1.0;
      off += actions_[j] + 1;
    }
    return in;
  }

 private:
  std::vector<std::size_t> slots(const SubgameState& s) const {
    if (s.base >= states_) throw ValidationError("subgame state: base state out of range");
    std::vector<std::size_t> slot(actions_.size(), 0);
    for (auto [agent, action] : s.predecessors) {
      if (agent >= actions_.size() || agent == s.agent || action >= actions_[agent])
        throw ValidationError("subgame state: invalid predecessor");
      slot[agent] = 1 + action;
    }
    return slot;
  }

  std::size_t states_ = 1;
  std::vector<std::size_t> actions_;
};

/// One-hot base-state input for state-only approximators.
inline Input state_input(std::size_t state, std::size_t num_states) {
  Input in;
  in.index = state;
  in.features.assign(num_states, 0.0);
  in.features.at(state) = 1.0;
  return in;
}

// ---------------------------------------------------------------------------
// Transitions and buffers

struct LowerTransition {
  std::size_t t = 0;
  std::size_t state = 0;
  JointAction action;
  std::vector<double> rewards;      // external, per agent
  std::size_t next_state = 0;
  std::vector<double> old_log_probs;
  std::vector<SubgameState> observations;  // per agent (native index)
  Ordering ordering;
  bool done = false;
};

struct UpperTransition {
  std::size_t state = 0;            // window start
  Ordering option;
  std::size_t option_index = 0;
  double window_return = 0.0;       // team-summed externals over the window
  std::size_t next_state = 0;       // window end
  std::size_t length = 0;           // steps actually executed
  std::size_t first_lower = 0;      // index of the window's first step in D_l
  bool done = false;
};

struct Buffers {
  std::vector<LowerTransition> lower;
  std::vector<UpperTransition> upper;

  void clear() {
    lower.clear();
    upper.clear();
  }
};

// ---------------------------------------------------------------------------
// Rollouts

/// Per-agent policy: distribution over that agent's actions given its
/// subgame state.
using LowerPolicyFn = std::function<ActionDistribution(const SubgameState&)>;

struct Window {
  std::vector<LowerTransition> lower;
  UpperTransition upper;
};

/// Runs min(k, remaining) steps under `ordering`. Within a step agents act
/// in acting order, each seeing its predecessors' actions. With `greedy` the
/// argmax action is taken and no randomness is consumed.
inline Window rollout_window(Env& env, const GroupScheme& scheme, const Ordering& ordering,
                             std::size_t option_index,
                             const std::vector<LowerPolicyFn>& policies, std::size_t k,
                             Rng& rng, bool greedy = false) {
  if (k < 1) throw ValidationError("k: must be >= 1");
  if (env.done()) throw ValidationError("episode finished");
  const EnvDescriptor& d = env.descriptor();
  if (policies.size() != d.agents())
    throw ValidationError("policies: expected " + std::to_string(d.agents()) + ", got " +
                          std::to_string(policies.size()));
  const std::vector<std::size_t> sequence = scheme.agent_sequence(ordering);

  Window w;
  w.upper.state = env.state();
  w.upper.option = ordering;
  w.upper.option_index = option_index;
  for (std::size_t step = 0; step < k && !env.done(); ++step) {
    LowerTransition tr;
    tr.t = env.time();
    tr.state = env.state();
    tr.ordering = ordering;
    tr.action.assign(d.agents(), 0);
    tr.old_log_probs.assign(d.agents(), 0.0);
    tr.observations.resize(d.agents());
    std::vector<std::pair<std::size_t, std::size_t>> history;
    for (std::size_t agent : sequence) {
      SubgameState obs{agent, tr.state, history};
      const ActionDistribution dist = policies[agent](obs);
      if (dist.probs.size() != d.actions[agent])
        throw ValidationError("policy: agent " + std::to_string(agent) +
                              " returned the wrong number of actions");
      for (double p : dist.probs)
        if (!std::isfinite(p)) throw NumericalError("policy: non-finite distribution");
      const std::size_t a = greedy ? dist.greedy() : rng.categorical(dist.probs);
      tr.action[agent] = a;
      tr.old_log_probs[agent] = std::log(dist.probs[a]);
      if (!std::isfinite(tr.old_log_probs[agent]))
        throw NumericalError("policy: chose an action with zero probability");
      tr.observations[agent] = std::move(obs);
      history.emplace_back(agent, a);
    }
    StepResult res = env.step(tr.action);
    tr.rewards = std::move(res.rewards);
    tr.next_state = res.next_state;
    tr.done = res.done;
    for (double r : tr.rewards) w.upper.window_return += r;
    w.lower.push_back(std::move(tr));
  }
  w.upper.length = w.lower.size();
  w.upper.next_state = env.state();
  w.upper.done = env.done();
  return w;
}

/// R_t = sum over u >= t of gamma^(u-t) r_u.
inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

/// Chooses the ordering for the window starting at `state`; receives the
/// previous window's option index or -1 on the first window.
using OptionChooser = std::function<std::size_t(std::size_t state, long previous)>;

/// Resets `env` and plays one episode in k-step windows, appending to `buf`.
inline void rollout_episode(Env& env, const GroupScheme& scheme,
                            const std::vector<Ordering>& options, const OptionChooser& choose,
                            const std::vector<LowerPolicyFn>& policies, std::size_t k,
                            Rng& rng, Buffers& buf, bool greedy = false) {
  env.reset();
  long previous = -1;
  while (!env.done()) {
    const std::size_t option = choose(env.state(), previous);
    Window w = rollout_window(env, scheme, options.at(option), option, policies, k, rng, greedy);
    w.upper.first_lower = buf.lower.size();
    for (auto& tr : w.lower) buf.lower.push_back(std::move(tr));
    buf.upper.push_back(w.upper);
    previous = static_cast<long>(option);
  }
}

/// CSV: t, state, a_1..a_n, r_1..r_n, ordering, done.
inline void write_trajectory_csv(std::ostream& out, const std::vector<LowerTransition>& lower,
                                 std::size_t agents) {
  out << "t,state";
  for (std::size_t i = 1; i <= agents; ++i) out << ",a_" << i;
  for (std::size_t i = 1; i <= agents; ++i) out << ",r_" << i;
  out << ",ordering,done\n";
  for (const auto& tr : lower) {
    out << tr.t << ',' << tr.state;
    for (std::size_t a : tr.action) out << ',' << a;
    for (double r : tr.rewards) out << ',' << fmt_num(r);
    out << ',' << tr.ordering.str() << ',' << (tr.done ? 1 : 0) << '\n';
  }
}

}  // namespace hpa
