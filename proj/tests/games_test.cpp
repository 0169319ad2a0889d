#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "hpa/games.hpp"

namespace {

using hpa::GroupScheme;
using hpa::MatrixGame;
using hpa::Ordering;

const std::string kData = HPA_DATA_DIR;

TEST(LoadGame, Fig2FileMatchesTable) {
  auto game = std::get<MatrixGame>(hpa::load_game(kData + "/games/fig2.json"));
  EXPECT_EQ(game.players(), 2u);
  EXPECT_EQ(game.payoff({0, 0}), (std::vector<double>{40, 40}));
  EXPECT_EQ(game.payoff({0, 1}), (std::vector<double>{0, 0}));
  EXPECT_EQ(game.payoff({1, 0}), (std::vector<double>{80, 0}));
  EXPECT_EQ(game.payoff({1, 1}), (std::vector<double>{20, 20}));
  EXPECT_EQ(game, hpa::builtin_game("fig2"));
}

TEST(LoadGame, FilesMatchBuiltins) {
  for (const auto& name : hpa::builtin_game_names()) {
    auto game =
        std::get<MatrixGame>(hpa::load_game(kData + "/games/" + name + ".json"));
    EXPECT_EQ(game, hpa::builtin_game(name)) << name;
  }
}

TEST(LoadGame, SharedSingleCell) {
  auto g = hpa::parse_game(
      R"({"name":"one","players":1,"actions":[1],"shared":true,"payoffs":[[0]]})");
  const auto& game = std::get<MatrixGame>(g);
  EXPECT_TRUE(game.shared());
  EXPECT_EQ(game.payoff({0}), (std::vector<double>{0}));
}

TEST(LoadGame, NonConcaveQuadraticRejected) {
  try {
    hpa::parse_game(R"({"name":"q","players":1,"A":[[[1]]],"b":[[0]],"c":[0]})");
    FAIL() << "expected a validation error";
  } catch (const hpa::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("non-concave"), std::string::npos);
  }
}

TEST(LoadGame, ErrorsNameTheField) {
  auto expect_field = [](const std::string& text, const std::string& field) {
    try {
      hpa::parse_game(text);
      ADD_FAILURE() << "no error for " << text;
    } catch (const hpa::ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field(
      R"({"players":2,"actions":[2,2],"payoffs":[[[1,2],[3,4]],[[1,2],[3]]]})",
      "payoffs[1]");
  expect_field(R"({"players":2,"actions":[2],"payoffs":[]})", "actions");
  expect_field(
      R"({"players":2,"A":[[[-1,1],[0,-1]],[[-1,0],[0,-1]]],"b":[[0,0],[0,0]],"c":[0,0]})",
      "A[0]");
  expect_field(R"({"players":1,"actions":[1],"shared":true,"payoffs":[["x"]]})",
               "payoffs[0]");
  EXPECT_THROW(hpa::parse_game("{not json"), hpa::ParseError);
}

TEST(LoadGame, BuiltinRoundTripIsBitIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "hpa_games_test";
  std::filesystem::create_directories(dir);
  for (const auto& name : hpa::builtin_game_names()) {
    const hpa::Game game = hpa::builtin_game(name);
    const auto path = (dir / (name + ".json")).string();
    hpa::save_game(path, game);
    const std::string first = hpa::read_text_file(path);
    hpa::save_game(path, hpa::load_game(path));
    EXPECT_EQ(hpa::read_text_file(path), first) << name;
    EXPECT_EQ(std::get<MatrixGame>(hpa::load_game(path)),
              std::get<MatrixGame>(game));
  }
}

TEST(EnumerateOrderings, ThreeGroups) {
  auto all = hpa::enumerate_orderings(3);
  ASSERT_EQ(all.size(), 6u);
  EXPECT_EQ(all.front(), Ordering({0, 1, 2}));
  EXPECT_EQ(all.back(), Ordering({2, 1, 0}));
}

TEST(EnumerateOrderings, SingleGroup) {
  auto all = hpa::enumerate_orderings(1);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0], Ordering({0}));
}

TEST(EnumerateOrderings, CountSortedDistinct) {
  std::size_t fact = 1;
  for (std::size_t g = 1; g <= 6; ++g) {
    fact *= g;
    auto all = hpa::enumerate_orderings(g);
    EXPECT_EQ(all.size(), fact);
    EXPECT_TRUE(std::is_sorted(all.begin(), all.end()));
    EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
  }
}

TEST(EnumerateOrderings, FactorialGuard) {
  EXPECT_EQ(hpa::enumerate_orderings(8).size(), 40320u);
  EXPECT_THROW(hpa::enumerate_orderings(9), hpa::ValidationError);
}

TEST(Ordering, RejectsNonPermutation) {
  EXPECT_THROW(Ordering({0, 0}), hpa::ValidationError);
  EXPECT_THROW(Ordering::parse("0,2"), hpa::ValidationError);
  EXPECT_EQ(Ordering::parse("1,0"), Ordering({1, 0}));
}

TEST(GroupScheme, ParsesLayouts) {
  auto s = GroupScheme::parse("3x2", 6);
  EXPECT_EQ(s.num_groups(), 3u);
  EXPECT_EQ(s.group(2), (std::vector<std::size_t>{4, 5}));
  auto t = GroupScheme::parse("2,0;1", 3);
  EXPECT_EQ(t.group(0), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(t.group_of(1), 1u);
  EXPECT_EQ(t.agent_sequence(Ordering({1, 0})),
            (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_THROW(GroupScheme::parse("0;0,1", 2), hpa::ValidationError);
  EXPECT_THROW(GroupScheme::parse("0", 2), hpa::ValidationError);
}

TEST(Payoff, TableLookups) {
  EXPECT_EQ(hpa::payoff(hpa::builtin_game("fig2"), {1, 0}),
            (std::vector<double>{80, 0}));
  EXPECT_EQ(hpa::payoff(hpa::builtin_game("fig1_left"), {1, 1}),
            (std::vector<double>{2, 2}));
  MatrixGame one("one", {1}, {{3.5}}, false);
  EXPECT_EQ(one.payoff({0}), (std::vector<double>{3.5}));
  EXPECT_THROW(hpa::builtin_game("fig2").payoff({2, 0}), hpa::ValidationError);
}

TEST(Payoff, RelabelingPlayersIsConsistent) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 3;
    std::vector<std::size_t> actions(n);
    for (auto& m : actions) m = 1 + rng() % 3;
    const bool shared = rng() % 2;
    std::size_t cells = 1;
    for (auto m : actions) cells *= m;
    std::vector<std::vector<double>> pay(shared ? 1 : n, std::vector<double>(cells));
    for (auto& t : pay)
      for (auto& v : t) v = static_cast<double>(static_cast<int>(rng() % 21) - 10);
    MatrixGame game("r", actions, pay, shared);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixGame relabeled = hpa::relabel_players(game, perm);
    for (std::size_t c = 0; c < game.num_cells(); ++c) {
      auto joint = game.unflatten(c);
      hpa::JointAction mapped(n);
      for (std::size_t j = 0; j < n; ++j) mapped[j] = joint[perm[j]];
      auto original = game.payoff(joint);
      auto permuted = relabeled.payoff(mapped);
      for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(permuted[j], original[perm[j]]);
    }
  }
}

}  // namespace
