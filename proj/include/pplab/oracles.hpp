#pragma once

// Independent brute-force and numerical reference implementations used by the
// test suites. Nothing in the attack or learner headers includes this file.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <variant>
#include <vector>

#include "pplab/dataset.hpp"
#include "pplab/env.hpp"
#include "pplab/errors.hpp"
#include "pplab/rng.hpp"

namespace pplab::oracle {

struct OracleConfig {
  double fd_step = 1e-5;
  double bisect_tol = 1e-12;
  int pgd_steps = 2'000'000;
  double pgd_rate = 0.0;  ///< 0 selects 1/L from the problem data
  int mc_rollouts = 200'000;
  std::uint64_t rng_seed = 12345;
};

/// Central differences, one coordinate at a time.
inline Vec finite_diff_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  Vec y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y(i) = x(i) + h;
    double fp = f(y);
    y(i) = x(i) - h;
    double fm = f(y);
    y(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double bisect(const std::function<double(double)>& f, double lo, double hi, double tol) {
  double flo = f(lo);
  for (int it = 0; it < 400 && hi - lo > tol; ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double ratio(double x) { return x > 0 ? x * std::exp(-x) / (1.0 + std::exp(-x)) : x / (1.0 + std::exp(x)); }

/// Root of the derivative of x / (1 + e^x): 1 + e^x (1 - x) = 0.
inline double bisect_x_star(double tol = 1e-15) {
  return bisect([](double x) { return 1.0 + std::exp(x) * (1.0 - x); }, 1.0, 2.0, tol);
}

inline double bisect_xi_max() { return ratio(bisect_x_star()); }

/// Solve a = x / (1 + e^x) for x in (-50, x_star].
inline double bisect_xi_inverse(double a, double tol = 1e-12) {
  double xs = bisect_x_star();
  double cap = ratio(xs);
  if (a > cap + 1e-15) throw InfeasibleError("oracle: value above the maximum");
  if (a >= cap) return xs;
  return bisect([a](double x) { return ratio(x) - a; }, -50.0, xs, tol);
}

/// Bracketing solver for w e^w = x on the principal branch.
inline double bisect_lambert_w(double x, double tol = 1e-15) {
  double hi = std::max(1.0, std::log1p(std::max(x, 0.0)) + 1.0);
  return bisect([x](double w) { return w * std::exp(w) - x; }, -1.0, hi, tol);
}

// ---------------------------------------------------------------------------
// Convex projections, solved through their duals.
// ---------------------------------------------------------------------------

struct PolytopeSet {
  Mat M;
  double eps;
};
struct BallSet {
  Vec center;
  double eps;
};
using ConstraintSet = std::variant<PolytopeSet, BallSet>;

/**
 * @brief argmin |x - x0|^2 over the constraint set, by projected gradient
 * ascent on the nonnegative dual (accelerated for the polytope).
 */
inline Vec pgd_projection(const Vec& x0, const ConstraintSet& set, const OracleConfig& cfg = {}) {
  if (const auto* poly = std::get_if<PolytopeSet>(&set)) {
    const Mat& M = poly->M;
    Mat gram = M.transpose() * M;
    double L = Eigen::SelfAdjointEigenSolver<Mat>(gram).eigenvalues().maxCoeff();
    if (!(L > 0)) throw InfeasibleError("oracle: zero constraint matrix");
    double step = cfg.pgd_rate > 0 ? cfg.pgd_rate : 1.0 / L;
    Vec b = Vec::Constant(M.cols(), poly->eps) - M.transpose() * x0;
    Vec nu = Vec::Zero(M.cols()), y = nu, prev = nu;
    double t = 1.0;
    for (int it = 0; it < cfg.pgd_steps; ++it) {
      Vec grad = b - gram * y;  // gradient of the concave dual at y
      Vec next = (y + step * grad).cwiseMax(0.0);
      Vec g_at = b - gram * next;
      double stat = (next - (next + step * g_at).cwiseMax(0.0)).norm() / step;
      if (stat <= 1e-9) return x0 + M * next;
      double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      Vec cand = next + ((t - 1.0) / tn) * (next - prev);
      if ((next - prev).dot(g_at) < 0) {  // restart when momentum points downhill
        tn = 1.0;
        cand = next;
      }
      prev = next;
      y = cand;
      t = tn;
    }
    throw ConvergenceError("oracle: polytope projection did not converge", 0.0);
  }
  const auto& ball = std::get<BallSet>(set);
  double r2 = (x0 - ball.center).squaredNorm();
  if (r2 <= ball.eps) return x0;
  double mu = 0.0;
  for (int it = 0; it < cfg.pgd_steps; ++it) {
    // Step scaled by the local inverse curvature of the scalar dual.
    double step = cfg.pgd_rate > 0 ? cfg.pgd_rate : (1.0 + mu) * (1.0 + mu) * (1.0 + mu) / r2;
    double grad = 0.5 * (r2 / ((1.0 + mu) * (1.0 + mu)) - ball.eps);
    double next = std::max(0.0, mu + step * grad);
    bool done = std::abs(next - mu) <= 1e-12 * (1.0 + mu);
    mu = next;
    if (done) break;
  }
  return (x0 + mu * ball.center) / (1.0 + mu);
}

// ---------------------------------------------------------------------------
// Planning and evaluation references for tabular environments.
// ---------------------------------------------------------------------------

/// V^pi by repeated Bellman backups.
inline Vec iterative_policy_evaluation(const EnvSpec& env, const Mat& probs, const Vec& r, double tol = 1e-14) {
  Vec v = Vec::Zero(env.S);
  for (int it = 0; it < 10'000'000; ++it) {
    Vec nv(env.S);
    for (int s = 0; s < env.S; ++s) {
      double acc = 0.0;
      for (int a = 0; a < env.A; ++a) {
        int row = env.row(s, a);
        acc += probs(s, a) * (r(row) + env.gamma * env.P.row(row).dot(v));
      }
      nv(s) = acc;
    }
    double diff = (nv - v).lpNorm<Eigen::Infinity>();
    v = nv;
    if (diff <= tol * (1.0 + v.lpNorm<Eigen::Infinity>())) break;
  }
  return v;
}

/// V^pi(s) for a deterministic policy by a direct linear solve.
inline Vec deterministic_values(const EnvSpec& env, const std::vector<int>& act, const Vec& r) {
  Mat lhs = Mat::Identity(env.S, env.S);
  Vec rhs(env.S);
  for (int s = 0; s < env.S; ++s) {
    int row = env.row(s, act[static_cast<std::size_t>(s)]);
    lhs.row(s) -= env.gamma * env.P.row(row);
    rhs(s) = r(row);
  }
  return lhs.fullPivLu().solve(rhs);
}

/// Howard policy iteration with lowest-index tie-breaking.
inline std::vector<int> policy_iteration(const EnvSpec& env, const Vec& omega) {
  Vec r = env.phi * omega;
  std::vector<int> act(static_cast<std::size_t>(env.S), 0);
  for (int it = 0; it < 10'000; ++it) {
    Vec v = deterministic_values(env, act, r);
    std::vector<int> next(act.size());
    for (int s = 0; s < env.S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      std::vector<double> q(static_cast<std::size_t>(env.A));
      for (int a = 0; a < env.A; ++a) {
        int row = env.row(s, a);
        q[static_cast<std::size_t>(a)] = r(row) + env.gamma * env.P.row(row).dot(v);
        best = std::max(best, q[static_cast<std::size_t>(a)]);
      }
      double tie = 1e-9 * (1.0 + std::abs(best));
      int pick = 0;
      while (q[static_cast<std::size_t>(pick)] < best - tie) ++pick;
      // Keep the incumbent action on ties to guarantee termination.
      int cur = act[static_cast<std::size_t>(s)];
      next[static_cast<std::size_t>(s)] = q[static_cast<std::size_t>(cur)] >= best - tie ? cur : pick;
    }
    if (next == act) break;
    act = next;
  }
  // Canonical lowest-index choice at the fixed point.
  Vec v = deterministic_values(env, act, r);
  for (int s = 0; s < env.S; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> q(static_cast<std::size_t>(env.A));
    for (int a = 0; a < env.A; ++a) {
      int row = env.row(s, a);
      q[static_cast<std::size_t>(a)] = r(row) + env.gamma * env.P.row(row).dot(v);
      best = std::max(best, q[static_cast<std::size_t>(a)]);
    }
    double tie = 1e-9 * (1.0 + std::abs(best));
    int pick = 0;
    while (q[static_cast<std::size_t>(pick)] < best - tie) ++pick;
    act[static_cast<std::size_t>(s)] = pick;
  }
  return act;
}

struct EnumerationResult {
  bool passed = false;
  bool full_enumeration = false;
  double min_gap = std::numeric_limits<double>::infinity();
  std::int64_t policies_checked = 0;
};

/**
 * @brief Check V^{pi_t}(rho) >= V^pi(rho) + eps for every other deterministic
 * policy (all of them when S*A <= 12, otherwise only the neighbors).
 */
inline EnumerationResult exhaustive_policy_check(const EnvSpec& env, const Vec& omega, const std::vector<int>& target,
                                                 double eps, double tol = 1e-8) {
  EnumerationResult out;
  Vec r = env.phi * omega;
  double vt = env.rho.dot(deterministic_values(env, target, r));
  auto visit = [&](const std::vector<int>& act) {
    if (act == target) return;
    double gap = vt - env.rho.dot(deterministic_values(env, act, r));
    out.min_gap = std::min(out.min_gap, gap);
    ++out.policies_checked;
  };
  out.full_enumeration = env.S * env.A <= 12;
  if (out.full_enumeration) {
    std::vector<int> act(static_cast<std::size_t>(env.S), 0);
    while (true) {
      visit(act);
      int s = 0;
      while (s < env.S && ++act[static_cast<std::size_t>(s)] == env.A) act[static_cast<std::size_t>(s++)] = 0;
      if (s == env.S) break;
    }
  } else {
    for (int s = 0; s < env.S; ++s)
      for (int a = 0; a < env.A; ++a) {
        if (a == target[static_cast<std::size_t>(s)]) continue;
        std::vector<int> act = target;
        act[static_cast<std::size_t>(s)] = a;
        visit(act);
      }
  }
  out.passed = out.min_gap >= eps - tol;
  return out;
}

struct MonteCarloEstimate {
  Vec mean;
  Vec stderr_;
};

/// Empirical normalized occupancy: run for a Geometric(1 - gamma) number of steps, record the final pair.
inline MonteCarloEstimate montecarlo_occupancy(const EnvSpec& env, const Mat& probs, int rollouts,
                                               std::uint64_t seed) {
  Rng rng(seed);
  Vec counts = Vec::Zero(env.S * env.A);
  auto draw = [&](const Eigen::Ref<const Vec>& p) {
    double u = rng.uniform(), acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (u < (acc += p(i))) return static_cast<int>(i);
    return static_cast<int>(p.size() - 1);
  };
  for (int k = 0; k < rollouts; ++k) {
    int s = draw(env.rho);
    int a = draw(probs.row(s).transpose());
    while (rng.uniform() < env.gamma) {
      s = draw(env.P.row(env.row(s, a)).transpose());
      a = draw(probs.row(s).transpose());
    }
    counts(env.row(s, a)) += 1.0;
  }
  MonteCarloEstimate est;
  est.mean = counts / rollouts;
  est.stderr_ = (est.mean.array() * (1.0 - est.mean.array()) / rollouts).sqrt();
  return est;
}

/// Discounted feature sum from (s, a) by averaging truncated rollouts.
inline Vec montecarlo_feature_expectation(const EnvSpec& env, const Mat& probs, const Mat& feats, int s0, int a0,
                                          int rollouts, std::uint64_t seed, double trunc = 1e-10) {
  Rng rng(seed);
  auto draw = [&](const Eigen::Ref<const Vec>& p) {
    double u = rng.uniform(), acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (u < (acc += p(i))) return static_cast<int>(i);
    return static_cast<int>(p.size() - 1);
  };
  Vec total = Vec::Zero(feats.cols());
  for (int k = 0; k < rollouts; ++k) {
    int s = s0, a = a0;
    double disc = 1.0;
    while (disc > trunc) {
      total += disc * feats.row(env.row(s, a)).transpose();
      disc *= env.gamma;
      if (disc == 0.0) break;
      s = draw(env.P.row(env.row(s, a)).transpose());
      a = draw(probs.row(s).transpose());
    }
  }
  return total / rollouts;
}

/**
 * @brief Minimize a smooth strongly convex function by accelerated gradient
 * descent with step 1/L, stopping at gradient norm `tol`.
 */
inline Vec accelerated_gradient_descent(const std::function<Vec(const Vec&)>& grad, Vec x, double L, double mu,
                                        double tol, int max_steps = 5'000'000) {
  double q = mu / L;
  double momentum = (1.0 - std::sqrt(q)) / (1.0 + std::sqrt(q));
  Vec prev = x;
  for (int it = 0; it < max_steps; ++it) {
    Vec y = x + momentum * (x - prev);
    Vec next = y - grad(y) / L;
    prev = x;
    x = next;
    if (grad(x).norm() <= tol) return x;
  }
  throw ConvergenceError("oracle: gradient descent did not converge", grad(x).norm());
}

/// Independent regularized logistic fit: sum log(1 + exp(-o s u^T z)) + lambda/2 |u|^2, u = x - offset.
inline Vec logistic_fit_oracle(const PreferenceDataset& d, double scale, double lambda, const Vec& offset,
                               double tol = 1e-10) {
  double L = lambda;
  for (const auto& s : d) L += 0.25 * scale * scale * s.z.squaredNorm();
  auto grad = [&](const Vec& x) {
    Vec u = x - offset;
    Vec g = lambda * u;
    for (const auto& s : d) {
      double m = s.o * scale * u.dot(s.z);
      g -= s.o * scale * s.z / (1.0 + std::exp(m));
    }
    return g;
  };
  return accelerated_gradient_descent(grad, offset, L, lambda, tol);
}

}  // namespace pplab::oracle
