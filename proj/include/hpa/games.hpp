#pragma once

// Game data model: finite normal-form games, quadratic continuous games,
// agent groupings and execution orderings, plus the JSON game-file format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hpa/error.hpp"

namespace hpa {

using JointAction = std::vector<std::size_t>;

inline std::string join_indices(const std::vector<std::size_t>& v,
                                std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(v[i]);
  }
  return out;
}

// Parses "0,1,2" (commas and/or whitespace) into indices.
inline std::vector<std::size_t> parse_index_list(std::string_view text) {
  std::vector<std::size_t> out;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(token, &pos);
    } catch (const std::exception&) {
      throw ValidationError("index list: '" + token + "' is not an index");
    }
    if (pos != token.size() || token.front() == '-')
      throw ValidationError("index list: '" + token + "' is not an index");
    out.push_back(static_cast<std::size_t>(v));
    token.clear();
  };
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '\t') {
      flush();
    } else {
      token.push_back(c);
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Ordering

/// A priority permutation of groups: perm()[p] is the group acting at
/// position p. Doubles as an upper-level option.
class Ordering {
 public:
  Ordering() = default;

  explicit Ordering(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
    std::vector<bool> seen(perm_.size(), false);
    for (std::size_t v : perm_) {
      if (v >= perm_.size() || seen[v])
        throw ValidationError("ordering: [" + join_indices(perm_, ",") +
                              "] is not a permutation of 0.." +
                              std::to_string(perm_.size() - 1));
      seen[v] = true;
    }
  }

  static Ordering identity(std::size_t g) {
    std::vector<std::size_t> p(g);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return Ordering(std::move(p));
  }

  static Ordering parse(std::string_view text) {
    return Ordering(parse_index_list(text));
  }

  std::size_t size() const { return perm_.size(); }
  std::size_t operator[](std::size_t position) const { return perm_[position]; }
  const std::vector<std::size_t>& perm() const { return perm_; }

  /// position_of()[group] = position at which that group acts.
  std::vector<std::size_t> position_of() const {
    std::vector<std::size_t> pos(perm_.size());
    for (std::size_t p = 0; p < perm_.size(); ++p) pos[perm_[p]] = p;
    return pos;
  }

  std::string str(std::string_view sep = " ") const {
    return join_indices(perm_, sep);
  }

  friend bool operator==(const Ordering&, const Ordering&) = default;
  friend auto operator<=>(const Ordering& a, const Ordering& b) {
    return a.perm_ <=> b.perm_;
  }

 private:
  std::vector<std::size_t> perm_;
};

inline constexpr std::size_t kMaxOrderingGroups = 8;

/// All g! orderings in lexicographic order.
inline std::vector<Ordering> enumerate_orderings(std::size_t g) {
  if (g == 0) throw ValidationError("groups: need at least one group");
  if (g > kMaxOrderingGroups)
    throw ValidationError("groups: " + std::to_string(g) +
                          " groups exceeds the factorial guard of " +
                          std::to_string(kMaxOrderingGroups));
  std::vector<std::size_t> p(g);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::vector<Ordering> out;
  do {
    out.emplace_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

// ---------------------------------------------------------------------------
// GroupScheme

/// Partition of agents 0..n-1 into g non-empty blocks. Orderings permute
/// blocks; inside a block agents keep native index order.
class GroupScheme {
 public:
  GroupScheme() = default;

  GroupScheme(std::vector<std::vector<std::size_t>> groups, std::size_t agents)
      : groups_(std::move(groups)), agents_(agents) {
    if (groups_.empty()) throw ValidationError("groups: empty scheme");
    std::vector<int> owner(agents_, -1);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      auto& block = groups_[g];
      if (block.empty())
        throw ValidationError("groups[" + std::to_string(g) + "]: empty block");
      std::sort(block.begin(), block.end());
      for (std::size_t a : block) {
        if (a >= agents_)
          throw ValidationError("groups[" + std::to_string(g) + "]: agent " +
                                std::to_string(a) + " out of range");
        if (owner[a] >= 0)
          throw ValidationError("groups: agent " + std::to_string(a) +
                                " appears in more than one block");
        owner[a] = static_cast<int>(g);
      }
    }
    for (std::size_t a = 0; a < agents_; ++a)
      if (owner[a] < 0)
        throw ValidationError("groups: agent " + std::to_string(a) +
                              " is not covered");
    group_of_.assign(owner.begin(), owner.end());
  }

  static GroupScheme singletons(std::size_t agents) {
    std::vector<std::vector<std::size_t>> g(agents);
    for (std::size_t a = 0; a < agents; ++a) g[a] = {a};
    return GroupScheme(std::move(g), agents);
  }

  /// "GxS" layout: G consecutive blocks of S agents.
  static GroupScheme contiguous(std::size_t num_groups, std::size_t size) {
    std::vector<std::vector<std::size_t>> g(num_groups);
    for (std::size_t i = 0; i < num_groups; ++i)
      for (std::size_t j = 0; j < size; ++j) g[i].push_back(i * size + j);
    return GroupScheme(std::move(g), num_groups * size);
  }

  /// Accepts "" or "singletons", "GxS" (e.g. "3x2"), or explicit blocks
  /// "0,1;2,3".
  static GroupScheme parse(std::string_view spec, std::size_t agents) {
    if (spec.empty() || spec == "singletons") return singletons(agents);
    if (auto x = spec.find('x'); x != std::string_view::npos) {
      auto lhs = parse_index_list(spec.substr(0, x));
      auto rhs = parse_index_list(spec.substr(x + 1));
      if (lhs.size() != 1 || rhs.size() != 1)
        throw ValidationError("groups: malformed layout '" + std::string(spec) +
                              "'");
      if (lhs[0] * rhs[0] != agents)
        throw ValidationError("groups: layout '" + std::string(spec) +
                              "' does not cover " + std::to_string(agents) +
                              " agents");
      return contiguous(lhs[0], rhs[0]);
    }
    std::vector<std::vector<std::size_t>> blocks;
    std::size_t start = 0;
    while (start <= spec.size()) {
      auto end = spec.find(';', start);
      if (end == std::string_view::npos) end = spec.size();
      blocks.push_back(parse_index_list(spec.substr(start, end - start)));
      start = end + 1;
    }
    return GroupScheme(std::move(blocks), agents);
  }

  std::size_t num_groups() const { return groups_.size(); }
  std::size_t num_agents() const { return agents_; }
  const std::vector<std::size_t>& group(std::size_t g) const {
    return groups_[g];
  }
  const std::vector<std::vector<std::size_t>>& groups() const {
    return groups_;
  }
  std::size_t group_of(std::size_t agent) const { return group_of_[agent]; }

  std::string str() const {
    std::string out;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (g) out += ';';
      out += join_indices(groups_[g], ",");
    }
    return out;
  }

  /// Agents in acting order under the given ordering.
  std::vector<std::size_t> agent_sequence(const Ordering& ordering) const {
    if (ordering.size() != groups_.size())
      throw ValidationError("ordering: length " +
                            std::to_string(ordering.size()) +
                            " does not match " +
                            std::to_string(groups_.size()) + " groups");
    std::vector<std::size_t> seq;
    for (std::size_t p = 0; p < ordering.size(); ++p)
      for (std::size_t a : groups_[ordering[p]]) seq.push_back(a);
    return seq;
  }

  friend bool operator==(const GroupScheme& a, const GroupScheme& b) {
    return a.agents_ == b.agents_ && a.groups_ == b.groups_;
  }

 private:
  std::vector<std::vector<std::size_t>> groups_;
  std::size_t agents_ = 0;
  std::vector<std::size_t> group_of_;
};

inline std::vector<Ordering> enumerate_orderings(const GroupScheme& scheme) {
  return enumerate_orderings(scheme.num_groups());
}

// ---------------------------------------------------------------------------
// MatrixGame

/// Finite n-player normal-form game. Payoff tensors are stored row-major
/// (player 0's action is the most significant index). A shared game keeps a
/// single tensor that every player receives.
class MatrixGame {
 public:
  MatrixGame() = default;

  MatrixGame(std::string name, std::vector<std::size_t> actions,
             std::vector<std::vector<double>> payoffs, bool shared)
      : name_(std::move(name)),
        actions_(std::move(actions)),
        payoffs_(std::move(payoffs)),
        shared_(shared) {
    if (actions_.empty()) throw ValidationError("players: must be >= 1");
    for (std::size_t i = 0; i < actions_.size(); ++i)
      if (actions_[i] == 0)
        throw ValidationError("actions[" + std::to_string(i) +
                              "]: action count must be >= 1");
    strides_.assign(actions_.size(), 1);
    for (std::size_t i = actions_.size() - 1; i > 0; --i)
      strides_[i - 1] = strides_[i] * actions_[i];
    cells_ = strides_[0] * actions_[0];
    const std::size_t expected = shared_ ? 1 : actions_.size();
    if (payoffs_.size() != expected)
      throw ValidationError("payoffs: expected " + std::to_string(expected) +
                            " tensor(s), got " +
                            std::to_string(payoffs_.size()));
    for (std::size_t p = 0; p < payoffs_.size(); ++p) {
      if (payoffs_[p].size() != cells_)
        throw ValidationError("payoffs[" + std::to_string(p) +
                              "]: shape mismatch (" +
                              std::to_string(payoffs_[p].size()) +
                              " entries, expected " + std::to_string(cells_) +
                              ")");
      for (std::size_t c = 0; c < cells_; ++c)
        if (!std::isfinite(payoffs_[p][c]))
          throw ValidationError("payoffs[" + std::to_string(p) + "]: entry " +
                                std::to_string(c) + " is not finite");
    }
  }

  const std::string& name() const { return name_; }
  std::size_t players() const { return actions_.size(); }
  const std::vector<std::size_t>& actions() const { return actions_; }
  bool shared() const { return shared_; }
  std::size_t num_cells() const { return cells_; }

  /// Raw stored tensors (one when shared).
  const std::vector<std::vector<double>>& stored_payoffs() const {
    return payoffs_;
  }

  /// Per-player view of the payoff tensor; expands the shared shorthand.
  const std::vector<double>& tensor(std::size_t player) const {
    return payoffs_[shared_ ? 0 : player];
  }

  std::size_t flat_index(const JointAction& joint) const {
    if (joint.size() != actions_.size())
      throw ValidationError("joint_action: expected " +
                            std::to_string(actions_.size()) + " indices, got " +
                            std::to_string(joint.size()));
    std::size_t idx = 0;
    for (std::size_t i = 0; i < joint.size(); ++i) {
      if (joint[i] >= actions_[i])
        throw ValidationError("joint_action[" + std::to_string(i) + "]: index " +
                              std::to_string(joint[i]) + " out of range (" +
                              std::to_string(actions_[i]) + " actions)");
      idx += joint[i] * strides_[i];
    }
    return idx;
  }

  JointAction unflatten(std::size_t idx) const {
    JointAction joint(actions_.size());
    for (std::size_t i = 0; i < actions_.size(); ++i) {
      joint[i] = idx / strides_[i];
      idx %= strides_[i];
    }
    return joint;
  }

  double payoff(std::size_t player, const JointAction& joint) const {
    return tensor(player)[flat_index(joint)];
  }

  std::vector<double> payoff(const JointAction& joint) const {
    const std::size_t idx = flat_index(joint);
    std::vector<double> out(players());
    for (std::size_t p = 0; p < players(); ++p) out[p] = tensor(p)[idx];
    return out;
  }

  friend bool operator==(const MatrixGame&, const MatrixGame&) = default;

 private:
  std::string name_;
  std::vector<std::size_t> actions_;
  std::vector<std::vector<double>> payoffs_;
  bool shared_ = false;
  std::vector<std::size_t> strides_;
  std::size_t cells_ = 0;
};

inline std::vector<double> payoff(const MatrixGame& game,
                                  const JointAction& joint) {
  return game.payoff(joint);
}

/// Relabels players: new player j is old player perm[j].
inline MatrixGame relabel_players(const MatrixGame& game,
                                  const std::vector<std::size_t>& perm) {
  Ordering check(perm);
  (void)check;
  const std::size_t n = game.players();
  std::vector<std::size_t> actions(n);
  for (std::size_t j = 0; j < n; ++j) actions[j] = game.actions()[perm[j]];
  const std::size_t tensors = game.shared() ? 1 : n;
  std::vector<std::vector<double>> pay(tensors,
                                       std::vector<double>(game.num_cells()));
  MatrixGame shape("", actions, std::vector<std::vector<double>>(
                                    tensors, std::vector<double>(
                                                 game.num_cells(), 0.0)),
                   game.shared());
  for (std::size_t c = 0; c < game.num_cells(); ++c) {
    JointAction new_joint = shape.unflatten(c);
    JointAction old_joint(n);
    for (std::size_t j = 0; j < n; ++j) old_joint[perm[j]] = new_joint[j];
    for (std::size_t t = 0; t < tensors; ++t)
      pay[t][c] = game.payoff(game.shared() ? 0 : perm[t], old_joint);
  }
  return MatrixGame(game.name(), actions, std::move(pay), game.shared());
}

// ---------------------------------------------------------------------------
// QuadraticGame

/// Q_i(x) = x' A_i x + b_i' x + c_i with one scalar strategy per player.
struct QuadraticGame {
  std::string name;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::VectorXd> b;
  std::vector<double> c;

  std::size_t players() const { return A.size(); }

  double value(std::size_t i, const Eigen::VectorXd& x) const {
    return x.dot(A[i] * x) + b[i].dot(x) + c[i];
  }

  /// dQ_i/dx_j at x.
  double partial(std::size_t i, std::size_t j, const Eigen::VectorXd& x) const {
    return 2.0 * A[i].row(j).dot(x) + b[i](j);
  }

  void validate() const {
    const std::size_t n = A.size();
    if (n == 0) throw ValidationError("players: must be >= 1");
    if (b.size() != n)
      throw ValidationError("b: expected " + std::to_string(n) + " vectors");
    if (c.size() != n)
      throw ValidationError("c: expected " + std::to_string(n) + " values");
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tag = "[" + std::to_string(i) + "]";
      if (A[i].rows() != static_cast<Eigen::Index>(n) ||
          A[i].cols() != static_cast<Eigen::Index>(n))
        throw ValidationError("A" + tag + ": shape mismatch");
      if (b[i].size() != static_cast<Eigen::Index>(n))
        throw ValidationError("b" + tag + ": shape mismatch");
      if (!A[i].allFinite()) throw ValidationError("A" + tag + ": non-finite");
      if (!b[i].allFinite()) throw ValidationError("b" + tag + ": non-finite");
      if (!std::isfinite(c[i])) throw ValidationError("c" + tag + ": non-finite");
      if ((A[i] - A[i].transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ValidationError("A" + tag + ": not symmetric");
      if (!(A[i](i, i) < 0.0))
        throw ValidationError("A" + tag + ": non-concave in own strategy (A" +
                              tag + "[" + std::to_string(i) + "][" +
                              std::to_string(i) + "] must be < 0)");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON game files

using Game = std::variant<MatrixGame, QuadraticGame>;

namespace detail {

inline void flatten_tensor(const nlohmann::json& node,
                           const std::vector<std::size_t>& shape,
                           std::size_t depth, const std::string& path,
                           std::vector<double>& out) {
  if (depth == shape.size()) {
    if (!node.is_number())
      throw ValidationError(path + ": expected a number");
    out.push_back(node.get<double>());
    return;
  }
  if (!node.is_array() || node.size() != shape[depth])
    throw ValidationError(path + ": shape mismatch (expected " +
                          std::to_string(shape[depth]) + " entries at depth " +
                          std::to_string(depth) + ")");
  for (std::size_t i = 0; i < node.size(); ++i)
    flatten_tensor(node[i], shape, depth + 1,
                   path + "[" + std::to_string(i) + "]", out);
}

inline nlohmann::json nest_tensor(const std::vector<double>& flat,
                                  const std::vector<std::size_t>& shape,
                                  std::size_t depth, std::size_t& cursor) {
  if (depth == shape.size()) return flat[cursor++];
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < shape[depth]; ++i)
    arr.push_back(nest_tensor(flat, shape, depth + 1, cursor));
  return arr;
}

template <typename T>
T require(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string(key) + ": missing");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string(key) + ": wrong type");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const MatrixGame& g) {
  nlohmann::json j;
  j["name"] = g.name();
  j["players"] = g.players();
  j["actions"] = g.actions();
  j["shared"] = g.shared();
  nlohmann::json pay = nlohmann::json::array();
  for (const auto& t : g.stored_payoffs()) {
    std::size_t cursor = 0;
    pay.push_back(detail::nest_tensor(t, g.actions(), 0, cursor));
  }
  j["payoffs"] = pay;
  return j;
}

inline nlohmann::json to_json(const QuadraticGame& g) {
  nlohmann::json j;
  j["name"] = g.name;
  j["players"] = g.players();
  nlohmann::json A = nlohmann::json::array(), b = nlohmann::json::array();
  for (std::size_t i = 0; i < g.players(); ++i) {
    nlohmann::json m = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g.A[i].rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < g.A[i].cols(); ++c) row.push_back(g.A[i](r, c));
      m.push_back(row);
    }
    A.push_back(m);
    b.push_back(std::vector<double>(g.b[i].data(), g.b[i].data() + g.b[i].size()));
  }
  j["A"] = A;
  j["b"] = b;
  j["c"] = g.c;
  return j;
}

inline MatrixGame matrix_game_from_json(const nlohmann::json& j) {
  const auto name = j.value("name", std::string{});
  const auto players = detail::require<std::size_t>(j, "players");
  const auto actions = detail::require<std::vector<std::size_t>>(j, "actions");
  const bool shared = j.value("shared", false);
  if (actions.size() != players)
    throw ValidationError("actions: expected " + std::to_string(players) +
                          " entries, got " + std::to_string(actions.size()));
  if (!j.contains("payoffs") || !j["payoffs"].is_array())
    throw ValidationError("payoffs: missing or not a list");
  const auto& pj = j["payoffs"];
  const std::size_t expected = shared ? 1 : players;
  if (pj.size() != expected)
    throw ValidationError("payoffs: expected " + std::to_string(expected) +
                          " tensor(s), got " + std::to_string(pj.size()));
  std::vector<std::vector<double>> pay(expected);
  for (std::size_t p = 0; p < expected; ++p)
    detail::flatten_tensor(pj[p], actions, 0,
                           "payoffs[" + std::to_string(p) + "]", pay[p]);
  return MatrixGame(name, actions, std::move(pay), shared);
}

inline QuadraticGame quadratic_game_from_json(const nlohmann::json& j) {
  QuadraticGame g;
  g.name = j.value("name", std::string{});
  const auto n = detail::require<std::size_t>(j, "players");
  const auto A = detail::require<std::vector<std::vector<std::vector<double>>>>(j, "A");
  const auto b = detail::require<std::vector<std::vector<double>>>(j, "b");
  g.c = detail::require<std::vector<double>>(j, "c");
  if (A.size() != n)
    throw ValidationError("A: expected " + std::to_string(n) + " matrices");
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (A[i].size() != n)
      throw ValidationError("A[" + std::to_string(i) + "]: shape mismatch");
    Eigen::MatrixXd m(n, n);
    for (std::size_t r = 0; r < n; ++r) {
      if (A[i][r].size() != n)
        throw ValidationError("A[" + std::to_string(i) + "]: shape mismatch");
      for (std::size_t c = 0; c < n; ++c) m(r, c) = A[i][r][c];
    }
    g.A.push_back(m);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    Eigen::VectorXd v(b[i].size());
    for (std::size_t r = 0; r < b[i].size(); ++r) v(r) = b[i][r];
    g.b.push_back(v);
  }
  g.validate();
  return g;
}

inline Game parse_game(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("game file: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("game file: top level must be an object");
  if (j.contains("A")) return quadratic_game_from_json(j);
  return matrix_game_from_json(j);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("file: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Game load_game(const std::string& path) {
  return parse_game(read_text_file(path));
}

inline std::string dump_game(const Game& game) {
  return std::visit([](const auto& g) { return to_json(g).dump(2) + "\n"; },
                    game);
}

inline void save_game(const std::string& path, const Game& game) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << dump_game(game);
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Built-in games

inline std::vector<std::string> builtin_game_names() {
  return {"fig1_left", "fig1_right", "fig2"};
}

/// fig1_left: shared 3x3 coordination game; fig1_right: the 3x3 mixing
/// game; fig2: the 2x2 leader-follower bimatrix.
inline MatrixGame builtin_game(const std::string& name) {
  if (name == "fig1_left")
    return MatrixGame(name, {3, 3}, {{-10, 0, 10, 0, 2, 0, 8, 0, -10}}, true);
  if (name == "fig1_right")
    return MatrixGame(name, {3, 3},
                      {{0, -10, -8, -5, -5, -15, 5, -10, -10},
                       {5, -5, 4, -10, 0, -5, 0, -5, 5}},
                      false);
  if (name == "fig2")
    return MatrixGame(name, {2, 2}, {{40, 0, 80, 20}, {40, 0, 0, 20}}, false);
  throw ValidationError("game: unknown built-in '" + name + "'");
}

inline bool is_builtin_game(const std::string& name) {
  const auto names = builtin_game_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

/// Built-in name or path to a game file.
inline Game resolve_game(const std::string& name_or_path) {
  if (is_builtin_game(name_or_path)) return builtin_game(name_or_path);
  return load_game(name_or_path);
}

}  // namespace hpa
