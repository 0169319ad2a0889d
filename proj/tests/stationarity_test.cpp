#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <optional>
#include <random>

#include "hpa/stationarity.hpp"
#include "oracles.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using hpa::Ordering;
using hpa::QuadraticGame;

// Q_1 = -x1^2 + x2, Q_2 = -(x2 - x1)^2.
QuadraticGame coupled_game() {
  QuadraticGame g;
  g.name = "coupled";
  MatrixXd a1(2, 2), a2(2, 2);
  a1 << -1, 0, 0, 0;
  a2 << -1, 1, 1, -1;
  g.A = {a1, a2};
  VectorXd b1(2), b2(2);
  b1 << 0, 1;
  b2 << 0, 0;
  g.b = {b1, b2};
  g.c = {0, 0};
  return g;
}

// Nested search: each level maximizes its own payoff by three-point parabolic
// interpolation, re-solving every later level for each probe. Uses payoff
// values only, so it is independent of the affine substitution; a reduced
// objective is quadratic in the own variable, so the vertex is exact.
VectorXd nested_search(const QuadraticGame& g, const Ordering& ord, VectorXd x,
                       std::size_t level) {
  const std::size_t n = g.players();
  if (level == n) return x;
  const auto who = static_cast<Eigen::Index>(ord[level]);
  auto value = [&](double v) {
    VectorXd y = x;
    y(who) = v;
    return g.value(ord[level], nested_search(g, ord, y, level + 1));
  };
  const double fm = value(-1.0), f0 = value(0.0), fp = value(1.0);
  const double curvature = fm - 2 * f0 + fp;
  EXPECT_LT(curvature, 0.0);
  x(who) = 0.5 * (fm - fp) / curvature;
  return nested_search(g, ord, x, level + 1);
}

TEST(ContinuousSe, CoupledTwoPlayer) {
  auto [x, model] = hpa::continuous_se(coupled_game(), Ordering({0, 1}));
  EXPECT_NEAR(x(0), 0.5, 1e-12);
  EXPECT_NEAR(x(1), 0.5, 1e-12);
  EXPECT_NEAR(model.total(1, 0), 1.0, 1e-12);
}

TEST(ContinuousSe, CoupledMatchesGridSearch) {
  // Brute force at step 1e-3: follower grid best response per leader value.
  const auto g = coupled_game();
  double best_leader = 0, best_value = -INFINITY;
  for (int i = -1000; i <= 2000; ++i) {
    const double x1 = i * 1e-3;
    double br = 0, br_value = -INFINITY;
    for (int j = -1000; j <= 2000; ++j) {
      VectorXd x(2);
      x << x1, j * 1e-3;
      const double v = g.value(1, x);
      if (v > br_value) {
        br_value = v;
        br = x(1);
      }
    }
    VectorXd x(2);
    x << x1, br;
    const double v = g.value(0, x);
    if (v > best_value) {
      best_value = v;
      best_leader = x1;
    }
  }
  auto [x, model] = hpa::continuous_se(g, Ordering({0, 1}));
  EXPECT_NEAR(x(0), best_leader, 1e-3);
}

TEST(ContinuousSe, DecoupledIsTargetForEveryOrdering) {
  const std::vector<double> target{0.7, -1.2, 2.5};
  const auto g = hpa::oracle::decoupled_game(target);
  for (const auto& ord : hpa::enumerate_orderings(3)) {
    auto [x, model] = hpa::continuous_se(g, ord);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x(static_cast<Eigen::Index>(i)), target[i], 1e-12);
    for (const auto& row : model.beta)
      for (double v : row) EXPECT_EQ(v, 0.0);
  }
}

TEST(ContinuousSe, ThreePlayerMatchesNestedSearch) {
  std::mt19937_64 rng(9);
  int checked = 0;
  for (int trial = 0; trial < 6; ++trial) {
    const auto g = hpa::oracle::random_quadratic_game(rng, 3);
    for (const auto& ord : hpa::enumerate_orderings(3)) {
      std::pair<VectorXd, hpa::ReactionModel> se;
      try {
        se = hpa::continuous_se(g, ord);
      } catch (const hpa::ValidationError&) {
        continue;
      }
            const VectorXd ref = nested_search(g, ord, VectorXd::Zero(3), 0);
      EXPECT_LT((ref - se.first).cwiseAbs().maxCoeff(), 1e-3);
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(ContinuousSe, SubstitutionConcavityFailureNamesLevel) {
  // Follower reaction x2 = 2 x1 makes the leader's reduced objective convex.
  QuadraticGame g;
  MatrixXd a1(2, 2), a2(2, 2);
  a1 << -1, 0, 0, 1;
  a2 << 0, 1, 1, -0.5;
  g.A = {a1, a2};
  g.b = {VectorXd::Zero(2), VectorXd::Zero(2)};
  g.c = {0, 0};
  try {
    hpa::continuous_se(g, Ordering({0, 1}));
    FAIL();
  } catch (const hpa::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("level 0"), std::string::npos) << e.what();
  }
}

TEST(StationarityResidual, ZeroAtEquilibrium) {
  std::mt19937_64 rng(100);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 4;
    const auto g = hpa::oracle::random_quadratic_game(rng, n);
    for (const auto& ord : hpa::enumerate_orderings(n)) {
      try {
        auto [x, model] = hpa::continuous_se(g, ord);
        EXPECT_LT(hpa::stationarity_residual(g, model, x).cwiseAbs().maxCoeff(), 1e-9);
        ++checked;
      } catch (const hpa::ValidationError&) {
      }
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(StationarityResidual, DecoupledOffset) {
  const auto g = hpa::oracle::decoupled_game({1.0, -2.0});
  VectorXd x(2);
  x << 2.0, -1.0;
  const VectorXd F = hpa::stationarity_residual(g, Ordering({1, 0}), x);
  EXPECT_NEAR(F(0), -2.0, 1e-12);
  EXPECT_NEAR(F(1), -2.0, 1e-12);
}

TEST(StationarityResidual, MatchesFiniteDifferenceOfReducedObjective) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 3;
    const auto g = hpa::oracle::random_quadratic_game(rng, n);
    const auto ords = hpa::enumerate_orderings(n);
    const auto& ord = ords[rng() % ords.size()];
    hpa::ReactionModel model;
    try {
      model = hpa::reaction_model(g, ord);
    } catch (const hpa::ValidationError&) {
      continue;
    }
    VectorXd y(static_cast<Eigen::Index>(n));
    for (auto& v : y) v = u(rng);
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t i = ord[p];
      // Reduced objective of position p: positions <= p free, later ones react.
      auto reduced = [&](double v) {
        VectorXd z = y;
        z(static_cast<Eigen::Index>(i)) = v;
        return g.value(i, model.play(z, p + 1));
      };
      const double h = 1e-4;
      const double xi = y(static_cast<Eigen::Index>(i));
      const double fd = (reduced(xi + h) - reduced(xi - h)) / (2 * h);
      const VectorXd on_path = model.play(y, p + 1);
      const double F = hpa::stationarity_residual(g, model, on_path)(static_cast<Eigen::Index>(i));
      EXPECT_NEAR(F, fd, 1e-6);
    }
  }
}

TEST(ReactionModel, ChainRuleMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 3;
    const auto g = hpa::oracle::random_quadratic_game(rng, n);
    const Ordering ord = hpa::enumerate_orderings(n)[rng() % 2];
    hpa::ReactionModel model;
    try {
      model = hpa::reaction_model(g, ord);
    } catch (const hpa::ValidationError&) {
      continue;
    }
    VectorXd y(static_cast<Eigen::Index>(n));
    for (auto& v : y) v = u(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const auto who = static_cast<Eigen::Index>(ord[i]);
      const double h = 1e-5;
      VectorXd up = y, dn = y;
      up(who) += h;
      dn(who) -= h;
      const VectorXd fp = model.play(up, i + 1), fm = model.play(dn, i + 1);
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto jj = static_cast<Eigen::Index>(ord[j]);
        const double fd = (fp(jj) - fm(jj)) / (2 * h);
        EXPECT_NEAR(model.total(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)), fd, 1e-6);
      }
    }
  }
}

TEST(StackJointSystem, DecoupledRowsDuplicate) {
  const auto g = hpa::oracle::decoupled_game({1.0, -1.5});
  auto sys = hpa::stack_joint_system(g, Ordering({0, 1}), Ordering({1, 0}));
  ASSERT_EQ(sys.A.rows(), 4);
  EXPECT_TRUE(sys.A.topRows(2).isApprox(sys.A.bottomRows(2)));
  auto rep = hpa::rank_test(sys);
  EXPECT_EQ(rep.rank_A, 2u);
  EXPECT_EQ(rep.rank_Ab, 2u);
}

TEST(StackJointSystem, RowsMatchResidualsAtRandomPoints) {
  const auto g = coupled_game();
  const Ordering o1({0, 1}), o2({1, 0});
  auto sys = hpa::stack_joint_system(g, o1, o2);
  ASSERT_EQ(sys.A.rows(), 4);
  ASSERT_EQ(sys.A.cols(), 2);
  // Hand-assembled conditions: F1 = -2x1 + 1, F2 = 2x1 - 2x2 (leader 0);
  // F1' = -2x1, F2' = 2x1 - 2x2 (leader 1).
  MatrixXd A(4, 2);
  A << -2, 0, 2, -2, -2, 0, 2, -2;
  VectorXd b(4);
  b << -1, 0, 0, 0;
  EXPECT_TRUE(sys.A.isApprox(A));
  EXPECT_TRUE(sys.b.isApprox(b));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 0; k < 20; ++k) {
    VectorXd x(2);
    x << u(rng), u(rng);
    const VectorXd J = sys.residual(x);
    EXPECT_LT((J.head(2) - hpa::stationarity_residual(g, o1, x)).norm(), 1e-12);
    EXPECT_LT((J.tail(2) - hpa::stationarity_residual(g, o2, x)).norm(), 1e-12);
  }
}

TEST(StackJointSystem, Rejections) {
  const auto g = coupled_game();
  EXPECT_THROW(hpa::stack_joint_system(g, Ordering({0, 1}), Ordering({0, 1})),
               hpa::ValidationError);
  EXPECT_THROW(hpa::stack_joint_system(hpa::oracle::decoupled_game({1.0}), Ordering({0}), Ordering({0})),
               hpa::ValidationError);
}

TEST(RankTest, DecoupledSolvableAtTarget) {
  const std::vector<double> target{0.25, -3.0, 1.5};
  auto sys = hpa::stack_joint_system(hpa::oracle::decoupled_game(target), Ordering({0, 1, 2}),
                                     Ordering({2, 0, 1}));
  auto rep = hpa::rank_test(sys);
  EXPECT_EQ(rep.verdict, hpa::Verdict::solvable);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(rep.candidate(static_cast<Eigen::Index>(i)), target[i], 1e-9);
  EXPECT_LT(rep.residual, 1e-10);
}

TEST(RankTest, CoupledUnsolvable) {
  auto sys = hpa::stack_joint_system(coupled_game(), Ordering({0, 1}), Ordering({1, 0}));
  auto rep = hpa::rank_test(sys);
  EXPECT_EQ(rep.rank_A, 2u);
  EXPECT_EQ(rep.rank_Ab, 3u);
  EXPECT_EQ(rep.verdict, hpa::Verdict::unsolvable);
}

TEST(RankTest, HomogeneousAlwaysSolvable) {
  MatrixXd A(4, 2);
  A << 1, 2, 3, 4, 5, 6, 7, 9;
  auto rep = hpa::rank_test(hpa::make_linear_system(A, VectorXd::Zero(4)));
  EXPECT_EQ(rep.verdict, hpa::Verdict::solvable);
  EXPECT_LT(rep.candidate.norm(), 1e-12);
}

TEST(RankTest, RejectsNonlinear) {
  auto sys = hpa::make_nonlinear_system([](const VectorXd& x) { return x; }, 1);
  EXPECT_THROW(hpa::rank_test(sys), hpa::ValidationError);
}

TEST(LmMinimize, DecoupledConverges) {
  auto sys = hpa::stack_joint_system(hpa::oracle::decoupled_game({1.0, -1.5}), Ordering({0, 1}),
                                     Ordering({1, 0}));
  auto rep = hpa::lm_minimize(sys, VectorXd::Zero(2), 1e-8);
  EXPECT_EQ(rep.verdict, hpa::Verdict::solvable);
  EXPECT_LT(rep.residual, 1e-8);
  EXPECT_NEAR(rep.candidate(0), 1.0, 1e-6);
  EXPECT_NEAR(rep.candidate(1), -1.5, 1e-6);
}

TEST(LmMinimize, CoupledPlateausAboveBound) {
  const auto g = coupled_game();
  auto sys = hpa::stack_joint_system(g, Ordering({0, 1}), Ordering({1, 0}));
  // Lower bound on E: both per-ordering equilibria and a dense grid.
  double grid_min = INFINITY;
  for (int i = -300; i <= 300; ++i)
    for (int j = -300; j <= 300; ++j) {
      VectorXd x(2);
      x << i * 0.01, j * 0.01;
      grid_min = std::min(grid_min, sys.residual(x).squaredNorm());
    }
  const double at_se1 = sys.residual(hpa::continuous_se(g, Ordering({0, 1})).first).squaredNorm();
  const double at_se2 = sys.residual(hpa::continuous_se(g, Ordering({1, 0})).first).squaredNorm();
  EXPECT_GT(at_se1, 1e-4);
  EXPECT_GT(at_se2, 1e-4);
  auto rep = hpa::lm_minimize(sys, VectorXd::Zero(2), 1e-8);
  EXPECT_EQ(rep.verdict, hpa::Verdict::unsolvable);
  EXPECT_GT(rep.residual, 1e-4);
  EXPECT_LE(rep.residual, grid_min + 1e-12);
  EXPECT_NEAR(rep.residual, grid_min, 1e-3);
  for (std::size_t k = 1; k < rep.trace.size(); ++k) EXPECT_LE(rep.trace[k], rep.trace[k - 1]);
}

TEST(LmMinimize, StartAtCommonRoot) {
  MatrixXd A(4, 2);
  A << 1, 2, 3, 4, 5, 6, 7, 9;
  auto rep = hpa::lm_minimize(hpa::make_linear_system(A, VectorXd::Zero(4)), VectorXd::Zero(2), 1e-8);
  EXPECT_EQ(rep.iterations, 0u);
  EXPECT_EQ(rep.residual, 0.0);
  EXPECT_EQ(rep.verdict, hpa::Verdict::solvable);
}

TEST(LmMinimize, NonlinearModeUsesFiniteDifferences) {
  auto sys = hpa::make_nonlinear_system(
      [](const VectorXd& x) {
        VectorXd r(3);
        r << x(0) * x(0) - 4, x(0) * x(1) - 2, x(1) - 1;
        return r;
      },
      2);
  VectorXd x0(2);
  x0 << 1, 0;
  auto rep = hpa::lm_minimize(sys, x0, 1e-10);
  EXPECT_EQ(rep.verdict, hpa::Verdict::solvable);
  EXPECT_NEAR(rep.candidate(0), 2.0, 1e-5);
  EXPECT_NEAR(rep.candidate(1), 1.0, 1e-5);
}

TEST(LmMinimize, IterationCapReportsInsteadOfThrowing) {
  auto sys = hpa::stack_joint_system(hpa::oracle::decoupled_game({100.0, -50.0}), Ordering({0, 1}),
                                     Ordering({1, 0}));
  auto rep = hpa::lm_minimize(sys, VectorXd::Zero(2), 1e-8, 1);
  EXPECT_EQ(rep.iterations, 1u);
  EXPECT_TRUE(std::isfinite(rep.residual));
}

TEST(LmMinimize, NanResidualThrows) {
  auto sys = hpa::make_nonlinear_system(
      [](const VectorXd& x) {
        VectorXd r(1);
        r << std::sqrt(x(0));
        return r;
      },
      1);
  VectorXd x0(1);
  x0 << -1;
  EXPECT_THROW(hpa::lm_minimize(sys, x0, 1e-8), hpa::NumericalError);
}

TEST(Properties, DecouplingTheorem) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng() % 3;
    std::vector<double> target(n);
    for (auto& t : target) t = u(rng);
    const auto g = hpa::oracle::decoupled_game(target);
    const auto ords = hpa::enumerate_orderings(n);
    for (std::size_t a = 0; a < ords.size(); ++a)
      for (std::size_t b = a + 1; b < ords.size(); ++b) {
        auto sys = hpa::stack_joint_system(g, ords[a], ords[b]);
        auto rep = hpa::rank_test(sys);
        ASSERT_EQ(rep.verdict, hpa::Verdict::solvable);
        for (std::size_t i = 0; i < n; ++i)
          EXPECT_NEAR(rep.candidate(static_cast<Eigen::Index>(i)), target[i], 1e-9);
      }
  }
}

TEST(Properties, OrderShiftWitness) {
  std::mt19937_64 rng(31);
  int witnessed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 2;
    const auto g = hpa::oracle::random_quadratic_game(rng, n);
    const auto ords = hpa::enumerate_orderings(n);
    const auto& o1 = ords.front();
    const auto& o2 = ords.back();
    VectorXd x1, x2;
    try {
      x1 = hpa::continuous_se(g, o1).first;
      x2 = hpa::continuous_se(g, o2).first;
    } catch (const hpa::ValidationError&) {
      continue;
    }
    if ((x1 - x2).cwiseAbs().maxCoeff() <= 1e-6) continue;
    auto rep = hpa::lm_minimize(hpa::stack_joint_system(g, o1, o2),
                                VectorXd::Zero(static_cast<Eigen::Index>(n)), 1e-8);
    EXPECT_EQ(rep.verdict, hpa::Verdict::unsolvable) << "trial " << trial;
    ++witnessed;
  }
  EXPECT_GT(witnessed, 80);
}

}  // namespace
