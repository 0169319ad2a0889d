#pragma once

// Hierarchical priority adjustment: an option-critic upper level whose
// options are agent orderings, sitting on top of per-agent PPO lower
// policies that act sequentially under the chosen ordering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpa/error.hpp"
#include "hpa/format.hpp"
#include "hpa/games.hpp"
#include "hpa/policy.hpp"
#include "hpa/rng.hpp"
#include "hpa/smg.hpp"

namespace hpa {

// ---------------------------------------------------------------------------
// Configuration

struct HpaConfig {
  std::size_t k = 2;
  double gamma = 0.99;
  double gamma_u = 0.99;
  double epsilon = 0.2;
  double eta = 0.01;
  double psi = 0.01;
  double alpha = 0.1;         // Q_U step size
  double alpha_v = 2.0;       // termination step size
  double alpha_theta = 0.01;  // lower policy step size
  double alpha_critic = 0.05;
  double alpha_upper = 0.02;  // option-policy step size
  double lambda = 0.95;
  std::size_t episodes = 2000;
  std::size_t horizon = 8;
  std::uint64_t seed = 1;
  std::size_t epochs = 4;
  std::string optimizer = "adam";
  std::string approximator = "tabular";
  std::size_t hidden = 64;
  std::string groups;          // GroupScheme spec; empty means singletons
  std::string fixed_ordering;  // non-empty: single-option upper level
  std::size_t env_period = 0;  // switching envs; 0 means k
  std::size_t pretrain_episodes = 1000;  // lower-only episodes on external reward

  std::size_t period() const { return env_period == 0 ? k : env_period; }

  void validate() const {
    if (k < 1) throw ValidationError("k: must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma: must lie in (0, 1]");
    if (!(gamma_u > 0.0 && gamma_u <= 1.0)) throw ValidationError("gamma_u: must lie in (0, 1]");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ValidationError("epsilon: must lie in (0, 1)");
    if (!(eta >= 0.0)) throw ValidationError("eta: must be >= 0");
    if (!(psi >= 0.0)) throw ValidationError("psi: must be >= 0");
    auto rate = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw ValidationError(std::string(name) + ": must be > 0");
    };
    rate(alpha, "alpha");
    rate(alpha_v, "alpha_v");
    rate(alpha_theta, "alpha_theta");
    rate(alpha_critic, "alpha_critic");
    rate(alpha_upper, "alpha_upper");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda: must lie in [0, 1]");
    if (horizon < 1) throw ValidationError("horizon: must be >= 1");
    if (epochs < 1) throw ValidationError("epochs: must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd")
      throw ValidationError("optimizer: must be 'adam' or 'sgd'");
    parse_approximator_kind(approximator);
    if (hidden < 1) throw ValidationError("hidden: must be >= 1");
  }

  OptimizerConfig optimizer_config(double lr) const {
    OptimizerConfig c;
    c.learning_rate = lr;
    c.adam = optimizer == "adam";
    return c;
  }
};

inline nlohmann::json to_json(const HpaConfig& c) {
  return {{"k", c.k},
          {"gamma", c.gamma},
          {"gamma_u", c.gamma_u},
          {"epsilon", c.epsilon},
          {"eta", c.eta},
          {"psi", c.psi},
          {"alpha", c.alpha},
          {"alpha_v", c.alpha_v},
          {"alpha_theta", c.alpha_theta},
          {"alpha_critic", c.alpha_critic},
          {"alpha_upper", c.alpha_upper},
          {"lambda", c.lambda},
          {"episodes", c.episodes},
          {"horizon", c.horizon},
          {"seed", c.seed},
          {"epochs", c.epochs},
          {"optimizer", c.optimizer},
          {"approximator", c.approximator},
          {"hidden", c.hidden},
          {"groups", c.groups},
          {"fixed_ordering", c.fixed_ordering},
          {"env_period", c.env_period},
          {"pretrain_episodes", c.pretrain_episodes}};
}

/// Fields not present keep their defaults; unknown fields are rejected.
inline HpaConfig config_from_json(const nlohmann::json& j, HpaConfig c = {}) {
  if (!j.is_object()) throw ParseError("config: top level must be an object");
  auto get = [&](const std::string& key, auto& field) {
    using T = std::decay_t<decltype(field)>;
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ValidationError(key + ": expected a string");
      field = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ValidationError(key + ": expected an integer");
      if (v.is_number_unsigned()) {
        field = static_cast<T>(v.get<std::uint64_t>());
      } else {
        const auto x = v.get<std::int64_t>();
        // Negative counts are reported as out of range for the field.
        if (x < 0) throw ValidationError(key + ": must be >= " + (key == "k" ? "1" : "0"));
        field = static_cast<T>(x);
      }
    } else {
      if (!v.is_number()) throw ValidationError(key + ": expected a number");
      field = v.get<double>();
    }
  };
  for (const auto& [key, _] : j.items()) {
    if (key == "k") get(key, c.k);
    else if (key == "gamma") get(key, c.gamma);
    else if (key == "gamma_u") get(key, c.gamma_u);
    else if (key == "epsilon") get(key, c.epsilon);
    else if (key == "eta") get(key, c.eta);
    else if (key == "psi") get(key, c.psi);
    else if (key == "alpha") get(key, c.alpha);
    else if (key == "alpha_v") get(key, c.alpha_v);
    else if (key == "alpha_theta") get(key, c.alpha_theta);
    else if (key == "alpha_critic") get(key, c.alpha_critic);
    else if (key == "alpha_upper") get(key, c.alpha_upper);
    else if (key == "lambda") get(key, c.lambda);
    else if (key == "episodes") get(key, c.episodes);
    else if (key == "horizon") get(key, c.horizon);
    else if (key == "seed") get(key, c.seed);
    else if (key == "epochs") get(key, c.epochs);
    else if (key == "optimizer") get(key, c.optimizer);
    else if (key == "approximator") get(key, c.approximator);
    else if (key == "hidden") get(key, c.hidden);
    else if (key == "groups") get(key, c.groups);
    else if (key == "fixed_ordering") get(key, c.fixed_ordering);
    else if (key == "env_period") get(key, c.env_period);
    else if (key == "pretrain_episodes") get(key, c.pretrain_episodes);
    else throw ValidationError(key + ": unknown config field");
  }
  c.validate();
  return c;
}

inline HpaConfig load_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Upper level

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Distribution over flat joint actions when the lower policies act under
/// option `option` at `state`.
using JointDistFn = std::function<std::vector<double>(std::size_t state, std::size_t option)>;

struct UpperState {
  std::vector<Ordering> options;
  std::size_t num_states = 1;
  std::size_t num_joint = 1;
  Approximator policy;       // state -> option logits
  Approximator critic;       // state -> V_Omega
  Approximator termination;  // tabular state -> per-option beta logits
  Approximator q_u;          // tabular (state, option) -> per-joint-action value
  std::vector<char> q_u_seen;
  std::uint64_t T = 0;       // windows so far
  std::uint64_t t = 0;       // env steps so far

  static UpperState create(std::vector<Ordering> opts, std::size_t states, std::size_t joint,
                           ApproximatorKind kind, std::size_t hidden, Rng& rng) {
    UpperState u;
    u.options = std::move(opts);
    u.num_states = states;
    u.num_joint = joint;
    auto make = [&](std::size_t out) {
      switch (kind) {
        case ApproximatorKind::tabular: return Approximator::tabular(states, out);
        case ApproximatorKind::linear: return Approximator::linear(states, out);
        case ApproximatorKind::mlp: return Approximator::mlp(states, hidden, out, rng);
      }
      return Approximator::tabular(states, out);
    };
    u.policy = make(u.options.size());
    u.critic = make(1);
    u.termination = Approximator::tabular(states, u.options.size());
    u.q_u = Approximator::tabular(states * u.options.size(), joint);
    u.q_u_seen.assign(u.q_u.params().size(), 0);
    return u;
  }

  std::size_t num_options() const { return options.size(); }
  Input input(std::size_t s) const { return state_input(s, num_states); }

  ActionDistribution option_distribution(std::size_t s) const {
    return softmax(policy.forward(input(s)));
  }
  double value(std::size_t s) const { return critic.forward(input(s))[0]; }

  std::size_t beta_index(std::size_t s, std::size_t option) const {
    return s * options.size() + option;
  }
  double beta(std::size_t s, std::size_t option) const {
    return sigmoid(termination.params().at(beta_index(s, option)));
  }

  std::size_t qu_index(std::size_t s, std::size_t option, std::size_t a) const {
    return (s * options.size() + option) * num_joint + a;
  }
  double qu(std::size_t s, std::size_t option, std::size_t a) const {
    return q_u.params().at(qu_index(s, option, a));
  }
};

struct OptionChoice {
  std::size_t option = 0;
  bool sampled = false;   // fresh draw from the option policy
  double log_prob = 0.0;  // log pi_Omega(option | s) at selection time
};

/// At a window boundary: keep the previous option unless it terminates
/// (probability beta), otherwise draw from the option policy.
inline OptionChoice select_option(const UpperState& u, std::size_t s,
                                  std::optional<std::size_t> previous, Rng& rng) {
  const ActionDistribution dist = u.option_distribution(s);
  OptionChoice c;
  if (previous) {
    const double b = u.beta(s, *previous);
    if (!(b >= 0.0 && b <= 1.0)) throw NumericalError("termination: invalid probability");
    if (!(rng.uniform() < b)) {
      c.option = *previous;
      c.log_prob = std::log(dist.probs[c.option]);
      return c;
    }
  }
  c.option = rng.categorical(dist.probs);
  c.sampled = true;
  c.log_prob = std::log(dist.probs[c.option]);
  return c;
}

/// Deterministic counterpart: terminate when beta > 0.5, then take the
/// most probable option.
inline std::size_t select_option_greedy(const UpperState& u, std::size_t s,
                                        std::optional<std::size_t> previous) {
  if (previous && !(u.beta(s, *previous) > 0.5)) return *previous;
  return u.option_distribution(s).greedy();
}

struct QOmega {
  double value = 0.0;
  bool complete = true;  // every entry with positive probability was visited
};

inline QOmega q_omega(const UpperState& u, std::size_t s, std::size_t option,
                      const std::vector<double>& joint_probs) {
  if (joint_probs.size() != u.num_joint)
    throw ValidationError("q_omega: joint distribution has the wrong size");
  QOmega q;
  for (std::size_t a = 0; a < u.num_joint; ++a) {
    if (joint_probs[a] == 0.0) continue;
    const std::size_t idx = u.qu_index(s, option, a);
    if (!u.q_u_seen[idx]) q.complete = false;
    q.value += joint_probs[a] * u.q_u.params()[idx];
  }
  return q;
}

inline QOmega q_omega(const UpperState& u, std::size_t s, std::size_t option,
                      const JointDistFn& joint) {
  return q_omega(u, s, option, joint(s, option));
}

inline std::vector<double> q_omega_all(const UpperState& u, std::size_t s,
                                       const JointDistFn& joint) {
  std::vector<double> q(u.num_options());
  for (std::size_t o = 0; o < q.size(); ++o) q[o] = q_omega(u, s, o, joint).value;
  return q;
}

/// (1 - beta) Q + beta V.
inline double u_mix(double beta, double q, double v) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("u_target: beta outside [0, 1]");
  return (1.0 - beta) * q + beta * v;
}

inline double u_target(const UpperState& u, std::size_t option, std::size_t s_next,
                       const JointDistFn& joint) {
  return u_mix(u.beta(s_next, option), q_omega(u, s_next, option, joint).value,
               u.value(s_next));
}

struct QuSample {
  std::size_t state = 0;
  std::size_t option = 0;
  std::size_t action = 0;  // flat joint action of the window's first step
  double reward = 0.0;     // window return
  std::size_t next_state = 0;
  bool done = false;
};

/// One TD step on Q_U; returns delta.
inline double td_update_qu(UpperState& u, const QuSample& x, double alpha, double gamma_u,
                           const JointDistFn& joint) {
  const std::size_t idx = u.qu_index(x.state, x.option, x.action);
  double delta = x.reward - u.q_u.params()[idx];
  if (!x.done) {
    const auto q = q_omega_all(u, x.next_state, joint);
    const double b = u.beta(x.next_state, x.option);
    delta += gamma_u * ((1.0 - b) * q[x.option] + b * *std::max_element(q.begin(), q.end()));
  }
  if (!std::isfinite(delta)) throw NumericalError("td_update_qu: non-finite delta");
  u.q_u.params()[idx] += alpha * delta;
  u.q_u_seen[idx] = 1;
  return delta;
}

/// pi_Omega(option|s') * beta(s', option) * (Q_Omega(s', option) - max Q_Omega(s') + psi).
/// Minimizing it lowers beta where the option is within psi of the best.
inline double termination_objective(const UpperState& u, std::size_t s_next, std::size_t option,
                                    double psi, const JointDistFn& joint) {
  const auto q = q_omega_all(u, s_next, joint);
  const double adv = q[option] - *std::max_element(q.begin(), q.end()) + psi;
  return u.option_distribution(s_next).probs[option] * u.beta(s_next, option) * adv;
}

struct TerminationStep {
  double objective = 0.0;
  double gradient = 0.0;  // d objective / d termination logit at (s', option)
};

inline TerminationStep termination_gradient(const UpperState& u, std::size_t s_next,
                                            std::size_t option, double psi,
                                            const JointDistFn& joint) {
  const auto q = q_omega_all(u, s_next, joint);
  const double adv = q[option] - *std::max_element(q.begin(), q.end()) + psi;
  const double w = u.option_distribution(s_next).probs[option];
  const double b = u.beta(s_next, option);
  TerminationStep r;
  r.objective = w * b * adv;
  r.gradient = w * b * (1.0 - b) * adv;
  if (!std::isfinite(r.gradient)) throw NumericalError("termination: non-finite gradient");
  return r;
}

inline TerminationStep termination_step(UpperState& u, std::size_t s_next, std::size_t option,
                                        double alpha_v, double psi, const JointDistFn& joint) {
  const TerminationStep r = termination_gradient(u, s_next, option, psi, joint);
  u.termination.params()[u.beta_index(s_next, option)] -= alpha_v * r.gradient;
  return r;
}

/// A_h = R_T + gamma_u V(s_{T+1}) (1 - done) - V(s_T).
inline double upper_advantage(const UpperState& u, const UpperTransition& ut, double gamma_u) {
  const double next = ut.done ? 0.0 : u.value(ut.next_state);
  return ut.window_return + gamma_u * next - u.value(ut.state);
}

/// A_h / k for each executed step; a truncated window keeps the divisor k.
inline std::vector<double> intrinsic_rewards(double a_h, std::size_t k, std::size_t length) {
  if (k < 1) throw ValidationError("k: must be >= 1");
  return std::vector<double>(length, a_h / static_cast<double>(k));
}

inline std::vector<double> intrinsic_rewards(double a_h, std::size_t k) {
  return intrinsic_rewards(a_h, k, k);
}

struct UpperSample {
  std::size_t state = 0;
  std::size_t option = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double target = 0.0;  // bootstrapped window return
  double v_old = 0.0;
  bool sampled = true;  // only fresh draws train the option policy
};

struct UpperLosses {
  double policy = 0.0;
  double critic = 0.0;
};

inline void check_finite(const Approximator& net, const char* what) {
  if (!net.finite()) throw NumericalError(std::string(what) + ": non-finite parameters");
}

inline UpperLosses upper_policy_update(UpperState& u, const std::vector<UpperSample>& batch,
                                       const HpaConfig& cfg, Optimizer& policy_opt,
                                       Optimizer& critic_opt) {
  if (batch.empty()) throw ValidationError("upper update: empty batch");
  std::vector<LossTerm> pterms, vterms;
  std::size_t sampled = 0;
  for (const auto& x : batch) sampled += x.sampled ? 1 : 0;
  for (const auto& x : batch) {
    if (x.sampled)
      pterms.push_back(policy_surrogate_term(u.input(x.state), x.option, x.old_log_prob,
                                             x.advantage, cfg.epsilon, cfg.eta,
                                             1.0 / static_cast<double>(sampled)));
    vterms.push_back(value_term(u.input(x.state), x.v_old, x.target, cfg.epsilon,
                                1.0 / static_cast<double>(batch.size())));
  }
  UpperLosses losses;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (!pterms.empty()) {
      auto g = gradient(u.policy, pterms);
      if (e == 0) losses.policy = g.loss;
      policy_opt.step(u.policy.params(), g.grad);
    }
    auto g = gradient(u.critic, vterms);
    if (e == 0) losses.critic = g.loss;
    critic_opt.step(u.critic.params(), g.grad);
  }
  check_finite(u.policy, "upper policy");
  check_finite(u.critic, "upper critic");
  return losses;
}

// ---------------------------------------------------------------------------
// Lower level

struct LowerAgent {
  Approximator policy;
  Approximator critic;
};

inline Approximator make_lower_net(ApproximatorKind kind, const SubgameEncoder& enc,
                                   std::size_t agent, std::size_t outputs, std::size_t hidden,
                                   Rng& rng) {
  switch (kind) {
    case ApproximatorKind::tabular: return Approximator::tabular(enc.table_size(agent), outputs);
    case ApproximatorKind::linear: return Approximator::linear(enc.feature_size(agent), outputs);
    case ApproximatorKind::mlp:
      return Approximator::mlp(enc.feature_size(agent), hidden, outputs, rng);
  }
  throw ValidationError("approximator: unknown kind");
}

/// Per-agent clipped-surrogate and value updates on one episode. `rewards`
/// holds the merged (external + intrinsic) reward per step and agent.
/// Returns each agent's surrogate loss before the update.
inline std::vector<double> lower_policy_update(std::vector<LowerAgent>& agents,
                                               const SubgameEncoder& enc,
                                               const std::vector<LowerTransition>& episode,
                                               const std::vector<std::vector<double>>& rewards,
                                               const std::vector<std::size_t>& agent_order,
                                               const HpaConfig& cfg,
                                               std::vector<Optimizer>& policy_opts,
                                               std::vector<Optimizer>& critic_opts) {
  std::vector<double> losses(agents.size(), 0.0);
  if (episode.empty()) return losses;
  const std::size_t T = episode.size();
  const double w = 1.0 / static_cast<double>(T);
  for (std::size_t i : agent_order) {
    LowerAgent& ag = agents[i];
    std::vector<Input> inputs(T);
    std::vector<double> r(T), v(T + 1, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      inputs[t] = enc.encode(episode[t].observations[i]);
      r[t] = rewards[t][i];
      v[t] = ag.critic.forward(inputs[t])[0];
    }
    // v[t + 1] is the agent's value at its next observation; the episode
    // ends with a terminal step, so the bootstrap slot v[T] stays 0.
    const auto adv = gae_advantages(r, v, cfg.gamma, cfg.lambda);
    std::vector<LossTerm> pterms, vterms;
    for (std::size_t t = 0; t < T; ++t) {
      pterms.push_back(policy_surrogate_term(inputs[t], episode[t].action[i],
                                             episode[t].old_log_probs[i], adv[t], cfg.epsilon,
                                             cfg.eta, w));
      vterms.push_back(value_term(inputs[t], v[t], adv[t] + v[t], cfg.epsilon, w));
    }
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      auto g = gradient(ag.policy, pterms);
      if (e == 0) losses[i] = g.loss;
      policy_opts[i].step(ag.policy.params(), g.grad);
      auto gv = gradient(ag.critic, vterms);
      critic_opts[i].step(ag.critic.params(), gv.grad);
    }
    check_finite(ag.policy, "lower policy");
    check_finite(ag.critic, "lower critic");
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Model

inline std::vector<Ordering> option_set(const HpaConfig& cfg, const GroupScheme& scheme) {
  if (!cfg.fixed_ordering.empty()) {
    Ordering o = Ordering::parse(cfg.fixed_ordering);
    if (o.size() != scheme.num_groups())
      throw ValidationError("fixed_ordering: length " + std::to_string(o.size()) +
                            " does not match " + std::to_string(scheme.num_groups()) + " groups");
    return {o};
  }
  return enumerate_orderings(scheme);
}

inline std::size_t flat_joint(const JointAction& a, const std::vector<std::size_t>& actions) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < actions.size(); ++i) idx = idx * actions[i] + a[i];
  return idx;
}

struct HpaModel {
  HpaConfig config;
  EnvDescriptor env;
  GroupScheme scheme;
  SubgameEncoder encoder;
  UpperState upper;
  std::vector<LowerAgent> lower;

  static HpaModel create(const HpaConfig& cfg, const EnvDescriptor& env) {
    cfg.validate();
    HpaModel m;
    m.config = cfg;
    m.env = env;
    m.scheme = GroupScheme::parse(cfg.groups, env.agents());
    m.encoder = SubgameEncoder(env);
    const auto kind = parse_approximator_kind(cfg.approximator);
    Rng init = Rng::stream(cfg.seed, "init");
    m.upper = UpperState::create(option_set(cfg, m.scheme), env.num_states, env.joint_actions(),
                                 kind, cfg.hidden, init);
    for (std::size_t i = 0; i < env.agents(); ++i) {
      LowerAgent a;
      a.policy = make_lower_net(kind, m.encoder, i, env.actions[i], cfg.hidden, init);
      a.critic = make_lower_net(kind, m.encoder, i, 1, cfg.hidden, init);
      m.lower.push_back(std::move(a));
    }
    return m;
  }

  ActionDistribution lower_distribution(const SubgameState& s) const {
    return forward_policy(lower.at(s.agent).policy, encoder.encode(s));
  }

  std::vector<LowerPolicyFn> lower_policies() const {
    std::vector<LowerPolicyFn> out;
    for (std::size_t i = 0; i < lower.size(); ++i)
      out.push_back([this](const SubgameState& s) { return lower_distribution(s); });
    return out;
  }

  /// Exact distribution over flat joint actions for one step under an option.
  std::vector<double> joint_distribution(std::size_t state, std::size_t option) const {
    const auto seq = scheme.agent_sequence(upper.options.at(option));
    std::vector<double> probs(env.joint_actions(), 0.0);
    JointAction joint(env.agents(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> history;
    std::function<void(std::size_t, double)> rec = [&](std::size_t pos, double p) {
      if (pos == seq.size()) {
        probs[flat_joint(joint, env.actions)] += p;
        return;
      }
      const std::size_t agent = seq[pos];
      const auto d = lower_distribution(SubgameState{agent, state, history});
      for (std::size_t a = 0; a < d.probs.size(); ++a) {
        if (d.probs[a] == 0.0) continue;
        joint[agent] = a;
        history.emplace_back(agent, a);
        rec(pos + 1, p * d.probs[a]);
        history.pop_back();
      }
    };
    rec(0, 1.0);
    return probs;
  }

  JointDistFn joint_fn() const {
    return [this](std::size_t s, std::size_t o) { return joint_distribution(s, o); };
  }
};

// ---------------------------------------------------------------------------
// Training loop

struct WindowRecord {
  std::size_t state = 0;
  std::size_t option = 0;
  bool sampled = false;
  std::size_t length = 0;
  double window_return = 0.0;
  double advantage = 0.0;
  std::vector<double> intrinsic;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  std::vector<WindowRecord> windows;
};

struct MetricsRow {
  std::size_t episode = 0;
  std::uint64_t env_steps = 0;
  double mean_team_return = 0.0;
  double upper_entropy = 0.0;
  std::vector<double> option_frequency;
  double mean_advantage = 0.0;
  double loss_upper_policy = 0.0;
  double loss_critic = 0.0;
  double loss_termination = 0.0;
  std::vector<double> loss_lower;
};

inline std::string option_label(const Ordering& o) { return o.str("_"); }

inline void write_metrics_header(std::ostream& out, const HpaModel& m) {
  out << "episode,env_steps,mean_team_return,upper_entropy";
  for (const auto& o : m.upper.options) out << ",freq_" << option_label(o);
  out << ",mean_A_h,loss_upper_policy,loss_critic,loss_termination";
  for (std::size_t i = 1; i <= m.lower.size(); ++i) out << ",loss_lower_" << i;
  out << '\n';
}

inline void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.episode << ',' << r.env_steps << ',' << fmt_num(r.mean_team_return) << ','
      << fmt_num(r.upper_entropy);
  for (double f : r.option_frequency) out << ',' << fmt_num(f);
  out << ',' << fmt_num(r.mean_advantage) << ',' << fmt_num(r.loss_upper_policy) << ','
      << fmt_num(r.loss_critic) << ',' << fmt_num(r.loss_termination);
  for (double l : r.loss_lower) out << ',' << fmt_num(l);
  out << '\n';
}

class HpaTrainer {
 public:
  using Observer = std::function<void(const EpisodeRecord&)>;

  HpaTrainer(Env& env, const HpaConfig& cfg)
      : env_(env),
        model_(HpaModel::create(cfg, env.descriptor())),
        upper_rng_(Rng::stream(cfg.seed, "upper")),
        lower_rng_(Rng::stream(cfg.seed, "lower")) {
    const auto& c = model_.config;
    upper_policy_opt_ = Optimizer(c.optimizer_config(c.alpha_upper), model_.upper.policy.params().size());
    upper_critic_opt_ = Optimizer(c.optimizer_config(c.alpha_critic), model_.upper.critic.params().size());
    for (const auto& a : model_.lower) {
      lower_policy_opts_.emplace_back(c.optimizer_config(c.alpha_theta), a.policy.params().size());
      lower_critic_opts_.emplace_back(c.optimizer_config(c.alpha_critic), a.critic.params().size());
    }
  }

  const HpaModel& model() const { return model_; }
  HpaModel& model() { return model_; }
  std::uint64_t env_steps() const { return model_.upper.t; }

  /// Lower-only episode: options drawn uniformly per window, lower policies
  /// trained on external reward alone, upper level untouched.
  void pretrain_episode() {
    const HpaConfig& cfg = model_.config;
    UpperState& up = model_.upper;
    const auto policies = model_.lower_policies();
    env_.reset();
    std::vector<LowerTransition> steps;
    std::size_t first_option = 0;
    while (!env_.done()) {
      const std::size_t o = upper_rng_.below(up.num_options());
      if (steps.empty()) first_option = o;
      Window w = rollout_window(env_, model_.scheme, up.options[o], o, policies, cfg.k, lower_rng_);
      up.t += w.upper.length;
      for (auto& tr : w.lower) steps.push_back(std::move(tr));
    }
    std::vector<std::vector<double>> rewards;
    for (const auto& tr : steps) rewards.push_back(tr.rewards);
    lower_policy_update(model_.lower, model_.encoder, steps, rewards,
                        model_.scheme.agent_sequence(up.options[first_option]), cfg,
                        lower_policy_opts_, lower_critic_opts_);
  }

  /// Collects one episode, applies every update, and returns its metrics.
  MetricsRow run_episode(std::size_t episode, const Observer& observer = {}) {
    const HpaConfig& cfg = model_.config;
    UpperState& up = model_.upper;
    const JointDistFn joint = model_.joint_fn();
    const auto policies = model_.lower_policies();

    env_.reset();
    std::vector<LowerTransition> steps;
    std::vector<UpperTransition> windows;
    std::vector<OptionChoice> choices;
    std::optional<std::size_t> previous;
    double entropy_sum = 0.0;
    while (!env_.done()) {
      const std::size_t s = env_.state();
      entropy_sum += entropy(up.option_distribution(s));
      const OptionChoice c = select_option(up, s, previous, upper_rng_);
      Window w = rollout_window(env_, model_.scheme, up.options[c.option], c.option, policies,
                                cfg.k, lower_rng_);
      w.upper.first_lower = steps.size();
      for (auto& tr : w.lower) steps.push_back(std::move(tr));
      windows.push_back(w.upper);
      choices.push_back(c);
      previous = c.option;
      ++up.T;
      up.t += w.upper.length;
    }

    // Advantages and targets from the pre-update critic.
    EpisodeRecord record;
    record.episode = episode;
    std::vector<UpperSample> batch;
    std::vector<std::vector<double>> merged(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) merged[t] = steps[t].rewards;
    double adv_sum = 0.0;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const auto& ut = windows[w];
      const double a_h = upper_advantage(up, ut, cfg.gamma_u);
      if (!std::isfinite(a_h)) throw NumericalError("upper advantage: non-finite value");
      const auto ri = intrinsic_rewards(a_h, cfg.k, ut.length);
      for (std::size_t j = 0; j < ut.length; ++j)
        for (double& r : merged[ut.first_lower + j]) r += ri[j];
      UpperSample x;
      x.state = ut.state;
      x.option = ut.option_index;
      x.old_log_prob = choices[w].log_prob;
      x.advantage = a_h;
      x.v_old = up.value(ut.state);
      x.target = a_h + x.v_old;
      x.sampled = choices[w].sampled;
      batch.push_back(x);
      adv_sum += a_h;
      record.windows.push_back({ut.state, ut.option_index, choices[w].sampled, ut.length,
                                ut.window_return, a_h, ri});
    }

    // Value-based pieces: Q_U TD backups and termination steps.
    double term_loss = 0.0;
    std::size_t term_count = 0;
    for (const auto& ut : windows) {
      const auto& first = steps[ut.first_lower];
      td_update_qu(up, {ut.state, ut.option_index, flat_joint(first.action, model_.env.actions),
                        ut.window_return, ut.next_state, ut.done},
                   cfg.alpha, cfg.gamma_u, joint);
      if (!ut.done && up.num_options() > 1) {
        term_loss += termination_step(up, ut.next_state, ut.option_index, cfg.alpha_v, cfg.psi,
                                      joint).objective;
        ++term_count;
      }
    }
    check_finite(up.termination, "termination");

    const UpperLosses ul = upper_policy_update(up, batch, cfg, upper_policy_opt_, upper_critic_opt_);
    const auto order = model_.scheme.agent_sequence(up.options[windows.front().option_index]);
    const auto ll = lower_policy_update(model_.lower, model_.encoder, steps, merged, order, cfg,
                                        lower_policy_opts_, lower_critic_opts_);

    if (observer) observer(record);

    MetricsRow row;
    row.episode = episode;
    row.env_steps = up.t;
    double team = 0.0;
    for (const auto& tr : steps)
      for (double r : tr.rewards) team += r;
    row.mean_team_return = team / static_cast<double>(steps.size());
    row.upper_entropy = entropy_sum / static_cast<double>(windows.size());
    row.option_frequency.assign(up.num_options(), 0.0);
    for (const auto& ut : windows) row.option_frequency[ut.option_index] += 1.0;
    for (double& f : row.option_frequency) f /= static_cast<double>(windows.size());
    row.mean_advantage = adv_sum / static_cast<double>(windows.size());
    row.loss_upper_policy = ul.policy;
    row.loss_critic = ul.critic;
    row.loss_termination = term_count ? term_loss / static_cast<double>(term_count) : 0.0;
    row.loss_lower = ll;
    return row;
  }

 private:
  Env& env_;
  HpaModel model_;
  Rng upper_rng_, lower_rng_;
  Optimizer upper_policy_opt_, upper_critic_opt_;
  std::vector<Optimizer> lower_policy_opts_, lower_critic_opts_;
};

struct TrainResult {
  HpaModel model;
  std::vector<MetricsRow> metrics;
};

/// Runs config.episodes episodes, stopping early once `max_env_steps` (if
/// non-zero) would be exceeded by another episode.
inline TrainResult train(Env& env, const HpaConfig& cfg,
                         const HpaTrainer::Observer& observer = {},
                         std::uint64_t max_env_steps = 0) {
  HpaTrainer trainer(env, cfg);
  TrainResult out;
  for (std::size_t e = 0; e < cfg.pretrain_episodes; ++e) {
    if (max_env_steps && trainer.env_steps() + env.descriptor().horizon > max_env_steps) break;
    trainer.pretrain_episode();
  }
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    if (max_env_steps && trainer.env_steps() + env.descriptor().horizon > max_env_steps) break;
    out.metrics.push_back(trainer.run_episode(e, observer));
  }
  out.model = trainer.model();
  return out;
}

// ---------------------------------------------------------------------------
// Greedy evaluation

struct EvalReport {
  std::size_t episodes = 0;
  double mean_team_return = 0.0;               // per step
  std::vector<std::vector<std::size_t>> greedy_counts;  // [state][option]
  std::vector<std::vector<double>> option_probs;        // [state][option]
  std::size_t boundaries = 0;
  std::size_t matched = 0;  // boundaries where the option equals the oracle's
  std::vector<LowerTransition> trajectory;  // first episode
  std::vector<std::size_t> window_options;  // first episode

  double matched_fraction() const {
    return boundaries ? static_cast<double>(matched) / static_cast<double>(boundaries) : 0.0;
  }
};

inline void check_compatible(const HpaModel& m, const EnvDescriptor& d) {
  if (m.env.num_states != d.num_states || m.env.actions != d.actions)
    throw ValidationError("checkpoint/env mismatch: checkpoint expects " +
                          std::to_string(m.env.num_states) + " states and actions [" +
                          join_indices(m.env.actions, ",") + "], env '" + d.name + "' has " +
                          std::to_string(d.num_states) + " states and actions [" +
                          join_indices(d.actions, ",") + "]");
}

/// Greedy options and greedy lower actions. `oracle`, when given, maps a
/// state to its best option index.
inline EvalReport evaluate(const HpaModel& m, Env& env, std::size_t episodes,
                           const std::function<std::size_t(std::size_t)>& oracle = {}) {
  check_compatible(m, env.descriptor());
  EvalReport rep;
  rep.episodes = episodes;
  rep.greedy_counts.assign(m.upper.num_states, std::vector<std::size_t>(m.upper.num_options(), 0));
  for (std::size_t s = 0; s < m.upper.num_states; ++s)
    rep.option_probs.push_back(m.upper.option_distribution(s).probs);
  const auto policies = m.lower_policies();
  Rng unused(0);
  double team = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    env.reset();
    std::optional<std::size_t> previous;
    while (!env.done()) {
      const std::size_t s = env.state();
      const std::size_t o = select_option_greedy(m.upper, s, previous);
      ++rep.greedy_counts[s][o];
      ++rep.boundaries;
      if (oracle && oracle(s) == o) ++rep.matched;
      Window w = rollout_window(env, m.scheme, m.upper.options[o], o, policies, m.config.k,
                                unused, true);
      for (auto& tr : w.lower) {
        for (double r : tr.rewards) team += r;
        ++steps;
        if (e == 0) rep.trajectory.push_back(std::move(tr));
      }
      if (e == 0) rep.window_options.push_back(o);
      previous = o;
    }
  }
  rep.mean_team_return = steps ? team / static_cast<double>(steps) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint directory

inline std::vector<std::pair<std::string, const Approximator*>> components(const HpaModel& m) {
  std::vector<std::pair<std::string, const Approximator*>> out{
      {"upper_policy.ckpt", &m.upper.policy},
      {"upper_critic.ckpt", &m.upper.critic},
      {"termination.ckpt", &m.upper.termination},
      {"q_u.ckpt", &m.upper.q_u}};
  for (std::size_t i = 0; i < m.lower.size(); ++i) {
    out.emplace_back("lower_policy_" + std::to_string(i + 1) + ".ckpt", &m.lower[i].policy);
    out.emplace_back("lower_critic_" + std::to_string(i + 1) + ".ckpt", &m.lower[i].critic);
  }
  return out;
}

/// Writes one checkpoint file per component plus manifest.json; returns the
/// written file names.
inline std::vector<std::string> save_model(const std::filesystem::path& dir, const HpaModel& m) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = to_json(m.config);
  manifest["env"] = {{"name", m.env.name},
                     {"num_states", m.env.num_states},
                     {"actions", m.env.actions},
                     {"horizon", m.env.horizon},
                     {"normalizer", m.env.normalizer}};
  nlohmann::json opts = nlohmann::json::array();
  for (const auto& o : m.upper.options) opts.push_back(o.perm());
  manifest["options"] = opts;
  nlohmann::json comps = nlohmann::json::object();
  for (const auto& [name, net] : components(m)) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + (dir / name).string() + "'");
    write_checkpoint(out, *net, m.config.seed);
    if (!out) throw std::runtime_error("write failed for '" + (dir / name).string() + "'");
    comps[name] = to_string(net->kind());
    files.push_back(name);
  }
  manifest["components"] = comps;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + (dir / "manifest.json").string() + "'");
  out << manifest.dump(2) << '\n';
  files.push_back("manifest.json");
  return files;
}

inline HpaModel load_model(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file((dir / "manifest.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what());
  }
  EnvDescriptor d;
  HpaConfig cfg;
  try {
    cfg = config_from_json(manifest.at("config"));
    const auto& env = manifest.at("env");
    d.name = env.at("name").get<std::string>();
    d.num_states = env.at("num_states").get<std::size_t>();
    d.actions = env.at("actions").get<std::vector<std::size_t>>();
    d.horizon = env.at("horizon").get<std::size_t>();
    d.normalizer = env.at("normalizer").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint manifest: ") + e.what());
  }
  HpaModel m = HpaModel::create(cfg, d);
  auto load_into = [&](const std::string& name, Approximator& net) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw ValidationError("checkpoint: missing component '" + name + "'");
    Checkpoint ck = read_checkpoint(in);
    if (ck.net.kind() != net.kind() || ck.net.shapes() != net.shapes())
      throw ValidationError("checkpoint: shape mismatch in '" + name + "'");
    net = std::move(ck.net);
  };
  load_into("upper_policy.ckpt", m.upper.policy);
  load_into("upper_critic.ckpt", m.upper.critic);
  load_into("termination.ckpt", m.upper.termination);
  load_into("q_u.ckpt", m.upper.q_u);
  std::fill(m.upper.q_u_seen.begin(), m.upper.q_u_seen.end(), 1);
  for (std::size_t i = 0; i < m.lower.size(); ++i) {
    load_into("lower_policy_" + std::to_string(i + 1) + ".ckpt", m.lower[i].policy);
    load_into("lower_critic_" + std::to_string(i + 1) + ".ckpt", m.lower[i].critic);
  }
  return m;
}

}  // namespace hpa
