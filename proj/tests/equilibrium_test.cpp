#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "hpa/equilibrium.hpp"
#include "oracles.hpp"

namespace {

using hpa::GroupScheme;
using hpa::JointAction;
using hpa::MatrixGame;
using hpa::Ordering;

TEST(PureNash, Fig1Left) {
  auto ne = hpa::pure_nash(hpa::builtin_game("fig1_left"));
  EXPECT_EQ(ne, (std::vector<JointAction>{{0, 2}, {1, 1}, {2, 0}}));
}

TEST(PureNash, Fig1Right) {
  auto ne = hpa::pure_nash(hpa::builtin_game("fig1_right"));
  EXPECT_EQ(ne, (std::vector<JointAction>{{1, 1}}));
}

TEST(PureNash, StrictlyDominantCell) {
  MatrixGame g("dom", {2, 2, 2}, {{9, 1, 1, 1, 1, 1, 1, 1}}, true);
  auto ne = hpa::pure_nash(g);
  EXPECT_NE(std::find(ne.begin(), ne.end(), JointAction{0, 0, 0}), ne.end());
}

TEST(Stackelberg, Fig2LeaderZero) {
  auto s = hpa::se_backward_induction(hpa::builtin_game("fig2"), Ordering({0, 1}));
  EXPECT_EQ(s.joint_action, (JointAction{0, 0}));
  EXPECT_EQ(s.payoffs, (std::vector<double>{40, 40}));
}

TEST(Stackelberg, Fig2LeaderOne) {
  auto s = hpa::se_backward_induction(hpa::builtin_game("fig2"), Ordering({1, 0}));
  EXPECT_EQ(s.joint_action, (JointAction{1, 1}));
  EXPECT_EQ(s.payoffs, (std::vector<double>{20, 20}));
}

TEST(Stackelberg, Fig1Examples) {
  auto left = hpa::se_backward_induction(hpa::builtin_game("fig1_left"), Ordering({0, 1}));
  EXPECT_EQ(left.joint_action, (JointAction{0, 2}));
  EXPECT_EQ(left.payoffs, (std::vector<double>{10, 10}));
  auto right = hpa::se_backward_induction(hpa::builtin_game("fig1_right"), Ordering({0, 1}));
  EXPECT_EQ(right.joint_action, (JointAction{0, 0}));
  EXPECT_EQ(right.payoffs, (std::vector<double>{0, 5}));
}

TEST(Stackelberg, ReactionTablesOfFig2) {
  auto s = hpa::se_backward_induction(hpa::builtin_game("fig2"), Ordering({0, 1}));
  ASSERT_EQ(s.reactions.size(), 1u);
  EXPECT_EQ(s.reactions[0].choice, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.leader_choice, 0u);
}

TEST(Stackelberg, DimensionMismatch) {
  auto g = hpa::builtin_game("fig2");
  EXPECT_THROW(hpa::se_backward_induction(g, Ordering({0, 1, 2})), hpa::ValidationError);
  EXPECT_THROW(hpa::se_backward_induction(g, Ordering({0, 1}), GroupScheme::singletons(3)),
               hpa::ValidationError);
}

TEST(Stackelberg, GroupedLevelsActAsComposite) {
  // Two groups {0,1} and {2} on a shared game: the composite leader picks
  // the pair that maximizes the shared payoff given the follower reply.
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixGame g("grp", {2, 3, 2}, {std::vector<double>(12)}, true);
    std::vector<double> t(12);
    for (auto& v : t) v = static_cast<double>(static_cast<int>(rng() % 21) - 10);
    g = MatrixGame("grp", {2, 3, 2}, {t}, true);
    GroupScheme scheme({{0, 1}, {2}}, 3);
    const double best = *std::max_element(t.begin(), t.end());
    for (const auto& ord : hpa::enumerate_orderings(scheme)) {
      auto s = hpa::se_backward_induction(g, ord, scheme);
      EXPECT_EQ(s.payoffs[0], best);
      EXPECT_EQ(hpa::replay_reactions(s, g, scheme), s.joint_action);
    }
  }
}

TEST(Stackelberg, MatchesBottomUpOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = hpa::oracle::random_matrix_game(rng, 3, 4, false);
    for (const auto& ord : hpa::enumerate_orderings(g.players())) {
      auto s = hpa::se_backward_induction(g, ord);
      EXPECT_EQ(s.joint_action, hpa::oracle::stackelberg_bottom_up(g, ord.perm()));
      EXPECT_EQ(s.payoffs, g.payoff(s.joint_action));
      EXPECT_EQ(hpa::replay_reactions(s, g, GroupScheme::singletons(g.players())),
                s.joint_action);
    }
  }
}

TEST(Stackelberg, SharedPayoffReachesMaximumAndBeatsNash) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = hpa::oracle::random_matrix_game(rng, 3, 4, true);
    const auto& t = g.tensor(0);
    const double best = *std::max_element(t.begin(), t.end());
    auto ne = hpa::pure_nash(g);
    for (const auto& ord : hpa::enumerate_orderings(g.players())) {
      auto s = hpa::se_backward_induction(g, ord);
      EXPECT_EQ(s.payoffs[0], best);
      for (const auto& joint : ne) EXPECT_GE(s.payoffs[0], g.payoff(0, joint));
    }
  }
}

TEST(OrderScan, Fig2ShiftsEquilibrium) {
  auto g = hpa::builtin_game("fig2");
  auto rep = hpa::order_scan(g, GroupScheme::singletons(2));
  ASSERT_EQ(rep.solutions.size(), 2u);
  EXPECT_EQ(rep.solutions[0].payoffs, (std::vector<double>{40, 40}));
  EXPECT_EQ(rep.solutions[1].payoffs, (std::vector<double>{20, 20}));
  EXPECT_TRUE(rep.se_shift);
  EXPECT_TRUE(rep.payoff_shift);
  std::ostringstream csv;
  hpa::write_order_scan_csv(csv, rep, 2);
  EXPECT_EQ(csv.str(),
            "ordering,joint_action,payoff_1,payoff_2,welfare,is_pure_nash\n"
            "0 1,0 0,40,40,80,0\n"
            "1 0,1 1,20,20,40,1\n");
}

TEST(OrderScan, SharedGameHasNoPayoffShift) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = hpa::oracle::random_matrix_game(rng, 3, 3, true);
    auto rep = hpa::order_scan(g, GroupScheme::singletons(g.players()));
    EXPECT_FALSE(rep.payoff_shift);
  }
}

TEST(OrderScan, SinglePlayerIsArgmax) {
  MatrixGame g("solo", {4}, {{1, 7, 7, 2}}, false);
  auto rep = hpa::order_scan(g, GroupScheme::singletons(1));
  ASSERT_EQ(rep.solutions.size(), 1u);
  EXPECT_EQ(rep.solutions[0].joint_action, (JointAction{1}));
  EXPECT_FALSE(rep.se_shift);
}

TEST(Pareto, Cases) {
  EXPECT_EQ(hpa::pareto_compare({0, 5}, {-5, 0}), hpa::Pareto::dominates);
  EXPECT_EQ(hpa::pareto_compare({-5, 0}, {0, 5}), hpa::Pareto::dominated);
  EXPECT_EQ(hpa::pareto_compare({1, 1}, {1, 1}), hpa::Pareto::equal);
  EXPECT_EQ(hpa::pareto_compare({1, 0}, {0, 1}), hpa::Pareto::incomparable);
  EXPECT_THROW(hpa::pareto_compare({1}, {1, 2}), hpa::ValidationError);
}

}  // namespace
