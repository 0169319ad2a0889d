#pragma once

// First-order Stackelberg conditions for quadratic continuous games: affine
// reaction substitution, per-ordering stationarity residuals, the stacked
// two-ordering system and its solvability tests (rank and LM).

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "hpa/error.hpp"
#include "hpa/games.hpp"

namespace hpa {

/// Affine reactions along the equilibrium path, in position coordinates:
/// x[p] = alpha[p] + sum_{q<p} beta[p][q] * x[q], where x[p] is the strategy
/// of player ordering[p]. total(p, q) is the total derivative dx[p]/dx[q]
/// (unit diagonal, zero above it).
struct ReactionModel {
  Ordering ordering;
  std::vector<double> alpha;
  std::vector<std::vector<double>> beta;
  Eigen::MatrixXd total;
  std::vector<double> curvature;  // second derivative of each reduced objective

  std::size_t size() const { return alpha.size(); }

  /// Strategy (native indexing) obtained by playing reactions forward from
  /// the given leading position values: positions < `fixed` are taken from
  /// `native` and the rest follow their reaction functions.
  Eigen::VectorXd play(const Eigen::VectorXd& native, std::size_t fixed) const {
    const std::size_t n = size();
    std::vector<double> x(n);
    for (std::size_t p = 0; p < n; ++p) {
      if (p < fixed) {
        x[p] = native(static_cast<Eigen::Index>(ordering[p]));
        continue;
      }
      double v = alpha[p];
      for (std::size_t q = 0; q < p; ++q) v += beta[p][q] * x[q];
      x[p] = v;
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(n));
    for (std::size_t p = 0; p < n; ++p)
      out(static_cast<Eigen::Index>(ordering[p])) = x[p];
    return out;
  }
};

namespace detail {

inline void check_player_ordering(const QuadraticGame& game,
                                  const Ordering& ordering) {
  if (ordering.size() != game.players())
    throw ValidationError("ordering: length " + std::to_string(ordering.size()) +
                          " does not match " + std::to_string(game.players()) +
                          " players");
}

// Chain expansion dx[j]/dx[i] = sum_{k=i}^{j-1} beta[j][k] dx[k]/dx[i].
inline Eigen::MatrixXd chain_total_derivatives(
    const std::vector<std::vector<double>>& beta) {
  const auto n = static_cast<Eigen::Index>(beta.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index k = i; k < j; ++k) s += beta[j][k] * d(k, i);
      d(j, i) = s;
    }
  }
  return d;
}

}  // namespace detail

/// Continuous Stackelberg point under `ordering` (a permutation of players)
/// by backward affine substitution. Throws ValidationError naming the level
/// when a substituted objective is not strictly concave in its own variable.
inline std::pair<Eigen::VectorXd, ReactionModel> continuous_se(
    const QuadraticGame& game, const Ordering& ordering) {
  game.validate();
  detail::check_player_ordering(game, ordering);
  const std::size_t n = game.players();
  ReactionModel model;
  model.ordering = ordering;
  model.alpha.assign(n, 0.0);
  model.beta.assign(n, std::vector<double>(n, 0.0));
  model.curvature.assign(n, 0.0);

  for (std::size_t p = n; p-- > 0;) {
    // Every position as an affine function of y = x[0..p]:
    // x[s] = c(s) + G.row(s) * y.
    Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(p + 1));
    for (std::size_t q = 0; q <= p; ++q)
      G(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q)) = 1.0;
    for (std::size_t s = p + 1; s < n; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      c(si) = model.alpha[s];
      for (std::size_t q = 0; q < s; ++q) {
        c(si) += model.beta[s][q] * c(static_cast<Eigen::Index>(q));
        G.row(si) += model.beta[s][q] * G.row(static_cast<Eigen::Index>(q));
      }
    }
    // Permute rows into native player coordinates.
    Eigen::VectorXd cn(static_cast<Eigen::Index>(n));
    Eigen::MatrixXd Gn(static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(p + 1));
    for (std::size_t s = 0; s < n; ++s) {
      const auto dst = static_cast<Eigen::Index>(ordering[s]);
      cn(dst) = c(static_cast<Eigen::Index>(s));
      Gn.row(dst) = G.row(static_cast<Eigen::Index>(s));
    }
    const std::size_t player = ordering[p];
    const Eigen::MatrixXd& A = game.A[player];
    const Eigen::VectorXd gp = Gn.col(static_cast<Eigen::Index>(p));
    const double h = 2.0 * gp.dot(A * gp);
    model.curvature[p] = h;
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if (!(h < -1e-12 * scale))
      throw ValidationError("substitution concavity failure at level " +
                            std::to_string(p) + " (player " +
                            std::to_string(player) + ")");
    model.alpha[p] = -(2.0 * gp.dot(A * cn) + game.b[player].dot(gp)) / h;
    for (std::size_t q = 0; q < p; ++q)
      model.beta[p][q] =
          -2.0 * gp.dot(A * Gn.col(static_cast<Eigen::Index>(q))) / h;
  }
  model.total = detail::chain_total_derivatives(model.beta);
  for (std::size_t p = 0; p < n; ++p) {
    if (!std::isfinite(model.alpha[p]))
      throw NumericalError("continuous_se: non-finite reaction at level " +
                           std::to_string(p));
    for (std::size_t q = 0; q < p; ++q)
      if (!std::isfinite(model.beta[p][q]))
        throw NumericalError("continuous_se: non-finite reaction at level " +
                             std::to_string(p));
  }
  Eigen::VectorXd x = model.play(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)), 0);
  return {x, model};
}

inline ReactionModel reaction_model(const QuadraticGame& game,
                                    const Ordering& ordering) {
  return continuous_se(game, ordering).second;
}

/// F_i(x) = dQ_i/dx_i + sum over later movers j of dQ_i/dx_j * dx_j/dx_i,
/// indexed by native player.
inline Eigen::VectorXd stationarity_residual(const QuadraticGame& game,
                                             const ReactionModel& model,
                                             const Eigen::VectorXd& x) {
  const std::size_t n = game.players();
  Eigen::VectorXd F(static_cast<Eigen::Index>(n));
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t i = model.ordering[p];
    double v = game.partial(i, i, x);
    for (std::size_t s = p + 1; s < n; ++s)
      v += game.partial(i, model.ordering[s], x) *
           model.total(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p));
    F(static_cast<Eigen::Index>(i)) = v;
  }
  return F;
}

inline Eigen::VectorXd stationarity_residual(const QuadraticGame& game,
                                             const Ordering& ordering,
                                             const Eigen::VectorXd& x) {
  return stationarity_residual(game, reaction_model(game, ordering), x);
}

/// F(x) = K x + f for one ordering; rows by native player.
struct AffineConditions {
  Eigen::MatrixXd K;
  Eigen::VectorXd f;
};

inline AffineConditions stationarity_conditions(const QuadraticGame& game,
                                                const Ordering& ordering) {
  const ReactionModel model = reaction_model(game, ordering);
  const auto n = static_cast<Eigen::Index>(game.players());
  AffineConditions out{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  for (Eigen::Index p = 0; p < n; ++p) {
    const std::size_t i = ordering[static_cast<std::size_t>(p)];
    const auto ii = static_cast<Eigen::Index>(i);
    for (Eigen::Index s = p; s < n; ++s) {
      const auto j = static_cast<Eigen::Index>(ordering[static_cast<std::size_t>(s)]);
      const double w = model.total(s, p);
      out.K.row(ii) += 2.0 * w * game.A[i].row(j);
      out.f(ii) += w * game.b[i](j);
    }
  }
  return out;
}

enum class SystemMode { linear, nonlinear };

/// J(x) = (F(x); F'(x)). In linear mode J(x) = A x - b.
struct JointSystem {
  SystemMode mode = SystemMode::linear;
  std::size_t unknowns = 0;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual;
};

inline JointSystem make_linear_system(Eigen::MatrixXd A, Eigen::VectorXd b) {
  if (A.rows() != b.size())
    throw ValidationError("system: A has " + std::to_string(A.rows()) +
                          " rows but b has " + std::to_string(b.size()));
  JointSystem sys;
  sys.mode = SystemMode::linear;
  sys.unknowns = static_cast<std::size_t>(A.cols());
  sys.A = std::move(A);
  sys.b = std::move(b);
  sys.residual = [A = sys.A, b = sys.b](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(A * x - b);
  };
  return sys;
}

inline JointSystem make_nonlinear_system(
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual,
    std::size_t unknowns) {
  JointSystem sys;
  sys.mode = SystemMode::nonlinear;
  sys.unknowns = unknowns;
  sys.residual = std::move(residual);
  return sys;
}

/// Rows 0..n-1 hold the conditions under `first`, rows n..2n-1 those under
/// `second`; b collects the negated constant terms.
inline JointSystem stack_joint_system(const QuadraticGame& game,
                                      const Ordering& first,
                                      const Ordering& second) {
  if (game.players() < 2)
    throw ValidationError("ordering: a single player admits no second ordering");
  if (first == second)
    throw ValidationError("ordering: ord1 and ord2 are identical");
  const auto c1 = stationarity_conditions(game, first);
  const auto c2 = stationarity_conditions(game, second);
  const auto n = static_cast<Eigen::Index>(game.players());
  Eigen::MatrixXd A(2 * n, n);
  Eigen::VectorXd b(2 * n);
  A << c1.K, c2.K;
  b << -c1.f, -c2.f;
  return make_linear_system(std::move(A), std::move(b));
}

enum class Verdict { solvable, unsolvable };
enum class SolveMethod { rank, lm };

inline const char* to_string(Verdict v) {
  return v == Verdict::solvable ? "solvable" : "unsolvable";
}
inline const char* to_string(SolveMethod m) {
  return m == SolveMethod::rank ? "rank" : "lm";
}

struct SolvabilityReport {
  Verdict verdict = Verdict::unsolvable;
  SolveMethod method = SolveMethod::rank;
  std::size_t rank_A = 0;
  std::size_t rank_Ab = 0;
  double residual = 0.0;  // E(x) = ||J(x)||^2 at the candidate
  std::size_t iterations = 0;
  Eigen::VectorXd candidate;
  double tolerance = 0.0;
  std::vector<double> trace;  // E after each accepted step (lm), first = E(x0)
};

inline std::size_t numerical_rank(const Eigen::MatrixXd& M, double tol) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol * s(0)) ++r;
  return r;
}

inline constexpr double kDefaultRankTolerance = 1e-10;

/// Solvable iff rank(A) == rank([A|b]), ranks counted as singular values
/// above tol * sigma_max.
inline SolvabilityReport rank_test(const JointSystem& sys,
                                   double tol = kDefaultRankTolerance) {
  if (sys.mode != SystemMode::linear)
    throw ValidationError("rank_test: system is not linear");
  SolvabilityReport rep;
  rep.method = SolveMethod::rank;
  rep.tolerance = tol;
  Eigen::MatrixXd Ab(sys.A.rows(), sys.A.cols() + 1);
  Ab << sys.A, sys.b;
  rep.rank_A = numerical_rank(sys.A, tol);
  rep.rank_Ab = numerical_rank(Ab, tol);
  rep.verdict = rep.rank_A == rep.rank_Ab ? Verdict::solvable : Verdict::unsolvable;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys.A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(tol);
  rep.candidate = svd.solve(sys.b);
  rep.residual = (sys.A * rep.candidate - sys.b).squaredNorm();
  return rep;
}

struct LmOptions {
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 10.0;
  double fd_step = 1e-6;
};

inline constexpr std::size_t kDefaultLmIterations = 200;

namespace detail {

inline Eigen::VectorXd checked_residual(const JointSystem& sys,
                                        const Eigen::VectorXd& x) {
  Eigen::VectorXd r = sys.residual(x);
  if (!r.allFinite()) throw NumericalError("lm_minimize: NaN in residual");
  return r;
}

inline Eigen::MatrixXd system_jacobian(const JointSystem& sys,
                                       const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& r, double h) {
  if (sys.mode == SystemMode::linear) return sys.A;
  Eigen::MatrixXd J(r.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    xp(k) = x(k) + h;
    J.col(k) = (checked_residual(sys, xp) - r) / h;
    xp(k) = x(k);
  }
  return J;
}

}  // namespace detail

/// Levenberg-Marquardt minimization of E(x) = ||J(x)||^2. Each of the
/// `max_iter` iterations is one trial step; accepted steps never increase E.
/// Verdict is solvable iff the final E < eps.
inline SolvabilityReport lm_minimize(const JointSystem& sys,
                                     const Eigen::VectorXd& x0, double eps,
                                     std::size_t max_iter = kDefaultLmIterations,
                                     const LmOptions& opt = {}) {
  if (static_cast<std::size_t>(x0.size()) != sys.unknowns)
    throw ValidationError("lm_minimize: start point has " +
                          std::to_string(x0.size()) + " entries, expected " +
                          std::to_string(sys.unknowns));
  SolvabilityReport rep;
  rep.method = SolveMethod::lm;
  rep.tolerance = eps;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd r = detail::checked_residual(sys, x);
  double E = r.squaredNorm();
  rep.trace.push_back(E);
  double lambda = opt.initial_damping;
  const auto m = x.size();

  Eigen::MatrixXd J;
  bool need_jacobian = true;
  for (std::size_t it = 0; it < max_iter; ++it) {
    if (E == 0.0) break;
    if (need_jacobian) {
      J = detail::system_jacobian(sys, x, r, opt.fd_step);
      need_jacobian = false;
    }
    const Eigen::VectorXd g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <=
        std::numeric_limits<double>::epsilon() * std::max(1.0, std::sqrt(E)))
      break;
    const Eigen::MatrixXd H =
        J.transpose() * J + lambda * Eigen::MatrixXd::Identity(m, m);
    const Eigen::VectorXd step = H.ldlt().solve(-g);
    if (!step.allFinite()) throw NumericalError("lm_minimize: non-finite step");
    const Eigen::VectorXd x_new = x + step;
    const Eigen::VectorXd r_new = detail::checked_residual(sys, x_new);
    const double E_new = r_new.squaredNorm();
    if (E_new < E) {
      x = x_new;
      r = r_new;
      E = E_new;
      lambda /= opt.damping_down;
      need_jacobian = true;
      ++rep.iterations;
      rep.trace.push_back(E);
    } else {
      lambda *= opt.damping_up;
      if (lambda > 1e16) break;
    }
  }
  rep.candidate = x;
  rep.residual = E;
  rep.verdict = E < eps ? Verdict::solvable : Verdict::unsolvable;
  return rep;
}

}  // namespace hpa
