#pragma once

// Pure-strategy Nash enumeration and N-level Stackelberg backward induction
// on finite games, with ordering scans and Pareto comparison.

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "hpa/format.hpp"
#include "hpa/games.hpp"

namespace hpa {

/// Joint actions where no player has a strictly improving unilateral
/// deviation, in row-major enumeration order.
inline std::vector<JointAction> pure_nash(const MatrixGame& game) {
  std::vector<JointAction> out;
  const std::size_t n = game.players();
  for (std::size_t cell = 0; cell < game.num_cells(); ++cell) {
    const JointAction joint = game.unflatten(cell);
    bool stable = true;
    for (std::size_t p = 0; p < n && stable; ++p) {
      const double current = game.payoff(p, joint);
      JointAction dev = joint;
      for (std::size_t a = 0; a < game.actions()[p]; ++a) {
        if (a == joint[p]) continue;
        dev[p] = a;
        if (game.payoff(p, dev) > current) {
          stable = false;
          break;
        }
      }
    }
    if (stable) out.push_back(joint);
  }
  return out;
}

/// Best-response table of one level: choice[prefix] where prefix is the
/// row-major index over the composite actions of all earlier levels.
struct ReactionTable {
  std::size_t level = 0;
  std::size_t group = 0;
  std::vector<std::size_t> prefix_radices;
  std::vector<std::size_t> choice;
};

struct StackelbergSolution {
  Ordering ordering;
  JointAction joint_action;
  std::vector<double> payoffs;
  std::size_t leader_choice = 0;
  // One table per non-first level, in level order.
  std::vector<ReactionTable> reactions;
};

namespace detail {

// Composite action space of one group: members' actions, row-major in
// native member order.
struct CompositeSpace {
  std::vector<std::size_t> members;
  std::vector<std::size_t> radices;
  std::size_t size = 1;

  void assign(std::size_t composite, JointAction& joint) const {
    for (std::size_t m = members.size(); m-- > 0;) {
      joint[members[m]] = composite % radices[m];
      composite /= radices[m];
    }
  }
};

class BackwardInduction {
 public:
  BackwardInduction(const MatrixGame& game, const Ordering& ordering,
                    const GroupScheme& scheme)
      : game_(game) {
    if (scheme.num_agents() != game.players())
      throw ValidationError("groups: scheme covers " +
                            std::to_string(scheme.num_agents()) +
                            " agents, game has " +
                            std::to_string(game.players()));
    if (ordering.size() != scheme.num_groups())
      throw ValidationError("ordering: length " +
                            std::to_string(ordering.size()) +
                            " does not match " +
                            std::to_string(scheme.num_groups()) + " groups");
    for (std::size_t l = 0; l < ordering.size(); ++l) {
      CompositeSpace space;
      space.members = scheme.group(ordering[l]);
      for (std::size_t a : space.members) {
        space.radices.push_back(game.actions()[a]);
        space.size *= game.actions()[a];
      }
      levels_.push_back(std::move(space));
    }
    tables_.resize(levels_.size());
    std::size_t prefixes = 1;
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      tables_[l].level = l;
      tables_[l].group = ordering[l];
      for (std::size_t q = 0; q < l; ++q)
        tables_[l].prefix_radices.push_back(levels_[q].size);
      tables_[l].choice.assign(prefixes, 0);
      prefixes *= levels_[l].size;
    }
  }

  StackelbergSolution run(const Ordering& ordering) {
    JointAction joint(game_.players(), 0);
    const JointAction outcome = solve(0, 0, joint);
    StackelbergSolution sol;
    sol.ordering = ordering;
    sol.joint_action = outcome;
    sol.payoffs = game_.payoff(outcome);
    sol.leader_choice = tables_[0].choice[0];
    sol.reactions.assign(tables_.begin() + 1, tables_.end());
    return sol;
  }

 private:
  // Returns the completed joint action reached from this node when every
  // remaining level plays its (tie-broken) best response.
  JointAction solve(std::size_t level, std::size_t prefix, JointAction& joint) {
    const CompositeSpace& space = levels_[level];
    const std::size_t objective = space.members.front();
    JointAction best_outcome;
    double best_value = 0.0;
    std::size_t best_choice = 0;
    for (std::size_t c = 0; c < space.size; ++c) {
      space.assign(c, joint);
      JointAction outcome =
          level + 1 < levels_.size()
              ? solve(level + 1, prefix * space.size + c, joint)
              : joint;
      const double value = game_.payoff(objective, outcome);
      if (c == 0 || value > best_value) {
        best_value = value;
        best_choice = c;
        best_outcome = std::move(outcome);
      }
    }
    tables_[level].choice[prefix] = best_choice;
    return best_outcome;
  }

  const MatrixGame& game_;
  std::vector<CompositeSpace> levels_;
  std::vector<ReactionTable> tables_;
};

}  // namespace detail

/// N-level Stackelberg equilibrium by backward induction. Each level is one
/// group acting as a composite player that maximizes the payoff of its
/// lowest-index member; ties go to the lowest composite index and earlier
/// levels anticipate that rule.
inline StackelbergSolution se_backward_induction(const MatrixGame& game,
                                                 const Ordering& ordering,
                                                 const GroupScheme& scheme) {
  detail::BackwardInduction solver(game, ordering, scheme);
  return solver.run(ordering);
}

inline StackelbergSolution se_backward_induction(const MatrixGame& game,
                                                 const Ordering& ordering) {
  return se_backward_induction(game, ordering,
                               GroupScheme::singletons(game.players()));
}

/// Replays the leader choice through the reaction tables.
inline JointAction replay_reactions(const StackelbergSolution& sol,
                                    const MatrixGame& game,
                                    const GroupScheme& scheme) {
  JointAction joint(game.players(), 0);
  std::vector<detail::CompositeSpace> levels;
  for (std::size_t l = 0; l < sol.ordering.size(); ++l) {
    detail::CompositeSpace space;
    space.members = scheme.group(sol.ordering[l]);
    for (std::size_t a : space.members) {
      space.radices.push_back(game.actions()[a]);
      space.size *= game.actions()[a];
    }
    levels.push_back(std::move(space));
  }
  std::size_t prefix = sol.leader_choice;
  levels[0].assign(sol.leader_choice, joint);
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const std::size_t c = sol.reactions[l - 1].choice.at(prefix);
    levels[l].assign(c, joint);
    prefix = prefix * levels[l].size + c;
  }
  return joint;
}

struct OrderScanReport {
  std::vector<StackelbergSolution> solutions;  // lexicographic ordering order
  std::vector<bool> is_pure_nash;              // per solution
  bool se_shift = false;       // some pair differs in joint action or payoffs
  bool payoff_shift = false;   // some pair differs in payoffs
  std::vector<JointAction> nash;
};

inline OrderScanReport order_scan(const MatrixGame& game,
                                  const GroupScheme& scheme) {
  OrderScanReport report;
  report.nash = pure_nash(game);
  for (const Ordering& ord : enumerate_orderings(scheme)) {
    report.solutions.push_back(se_backward_induction(game, ord, scheme));
    const auto& joint = report.solutions.back().joint_action;
    report.is_pure_nash.push_back(
        std::find(report.nash.begin(), report.nash.end(), joint) !=
        report.nash.end());
  }
  for (std::size_t i = 0; i < report.solutions.size(); ++i)
    for (std::size_t j = i + 1; j < report.solutions.size(); ++j) {
      const auto& a = report.solutions[i];
      const auto& b = report.solutions[j];
      if (a.payoffs != b.payoffs) report.payoff_shift = true;
      if (a.payoffs != b.payoffs || a.joint_action != b.joint_action)
        report.se_shift = true;
    }
  return report;
}

inline void write_order_scan_csv(std::ostream& out,
                                 const OrderScanReport& report,
                                 std::size_t players) {
  out << "ordering,joint_action";
  for (std::size_t p = 1; p <= players; ++p) out << ",payoff_" << p;
  out << ",welfare,is_pure_nash\n";
  for (std::size_t i = 0; i < report.solutions.size(); ++i) {
    const auto& s = report.solutions[i];
    double welfare = 0.0;
    for (double v : s.payoffs) welfare += v;
    out << s.ordering.str() << ',' << join_indices(s.joint_action);
    for (double v : s.payoffs) out << ',' << fmt_num(v);
    out << ',' << fmt_num(welfare) << ',' << (report.is_pure_nash[i] ? 1 : 0)
        << '\n';
  }
}

enum class Pareto { dominates, dominated, incomparable, equal };

inline const char* to_string(Pareto p) {
  switch (p) {
    case Pareto::dominates: return "dominates";
    case Pareto::dominated: return "dominated";
    case Pareto::incomparable: return "incomparable";
    case Pareto::equal: return "equal";
  }
  return "?";
}

inline Pareto pareto_compare(const std::vector<double>& x,
                             const std::vector<double>& y) {
  if (x.size() != y.size())
    throw ValidationError("pareto: length mismatch (" +
                          std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
  bool better = false, worse = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > y[i]) better = true;
    if (x[i] < y[i]) worse = true;
  }
  if (better && worse) return Pareto::incomparable;
  if (better) return Pareto::dominates;
  if (worse) return Pareto::dominated;
  return Pareto::equal;
}

}  // namespace hpa
