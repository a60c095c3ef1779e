#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pplab/dataset.hpp"
#include "pplab/errors.hpp"
#include "pplab/numeric.hpp"
#include "pplab/rng.hpp"

namespace pplab {

/**
 * @brief Tabular MDP (or contextual bandit) with linear reward and policy features.
 *
 * State-action pairs are flattened lexicographically: row s*A + a.
 * P is (S*A) x S with row s*A+a holding P(s, a, .).
 */
struct EnvSpec {
  int S = 0;
  int A = 0;
  Mat P;
  double gamma = 0.0;
  Vec rho;
  Mat phi;
  Mat psi;
  bool bandit = false;
  std::uint64_t seed = 0;

  int row(int s, int a) const noexcept { return s * A + a; }
  int d() const noexcept { return static_cast<int>(phi.cols()); }
  int d_prime() const noexcept { return static_cast<int>(psi.cols()); }
  const Mat& features(Space m) const noexcept { return m == Space::phi ? phi : psi; }

  friend bool operator==(const EnvSpec& a, const EnvSpec& b) {
    return a.S == b.S && a.A == b.A && a.gamma == b.gamma && a.bandit == b.bandit &&
           a.seed == b.seed && a.P == b.P && a.rho == b.rho && a.phi == b.phi && a.psi == b.psi;
  }
};

inline void validate(const EnvSpec& env) {
  if (env.S <= 0 || env.A <= 0) throw ValidationError("S and A must be positive");
  const int n = env.S * env.A;
  if (env.P.rows() != n || env.P.cols() != env.S) throw ValidationError("transition tensor has wrong shape");
  if (env.rho.size() != env.S) throw ValidationError("initial distribution has wrong length");
  if (env.phi.rows() != n) throw ValidationError("reward feature matrix has wrong row count");
  if (env.psi.rows() != n) throw ValidationError("policy feature matrix has wrong row count");
  if (!(env.gamma >= 0.0 && env.gamma < 1.0)) throw ValidationError("discount must lie in [0, 1)");
  if ((env.P.array() < 0).any() || (env.rho.array() < 0).any())
    throw ValidationError("negative probability");
  for (int r = 0; r < n; ++r)
    if (std::abs(env.P.row(r).sum() - 1.0) > 1e-12) throw ValidationError("transition row does not sum to 1");
  if (std::abs(env.rho.sum() - 1.0) > 1e-12) throw ValidationError("initial distribution does not sum to 1");
  for (const Mat* f : {&env.phi, &env.psi}) {
    if (!f->allFinite()) throw ValidationError("non-finite feature");
    for (int r = 0; r < n; ++r)
      if (f->row(r).norm() > 1.0 + 1e-12) throw ValidationError("feature row norm exceeds 1");
  }
  if (env.bandit) {
    if (env.gamma != 0.0) throw ValidationError("bandit environments require gamma = 0");
    for (int s = 0; s < env.S; ++s)
      for (int a = 1; a < env.A; ++a)
        if (env.P.row(env.row(s, a)) != env.P.row(env.row(s, 0)))
          throw ValidationError("bandit transitions must not depend on the action");
  }
}

/// Row-wise softmax of psi(s, .)^T theta.
inline Mat loglinear_probs(const EnvSpec& env, const Vec& theta) {
  if (theta.size() != env.d_prime()) throw ValidationError("policy parameter has wrong dimension");
  Vec logits = env.psi * theta;
  Mat probs(env.S, env.A);
  for (int s = 0; s < env.S; ++s) {
    double mx = logits.segment(s * env.A, env.A).maxCoeff();
    double z = 0.0;
    for (int a = 0; a < env.A; ++a) z += (probs(s, a) = std::exp(logits(env.row(s, a)) - mx));
    probs.row(s) /= z;
  }
  return probs;
}

class Policy {
 public:
  enum class Kind { deterministic, tabular, loglinear };

  static Policy deterministic(std::vector<int> actions, int A) {
    Policy p;
    p.kind_ = Kind::deterministic;
    p.probs_ = Mat::Zero(static_cast<Eigen::Index>(actions.size()), A);
    for (std::size_t s = 0; s < actions.size(); ++s) {
      if (actions[s] < 0 || actions[s] >= A) throw ValidationError("deterministic action out of range");
      p.probs_(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
    }
    p.actions_ = std::move(actions);
    return p;
  }

  static Policy tabular(Mat probs) {
    if ((probs.array() < 0).any()) throw ValidationError("negative policy probability");
    for (Eigen::Index s = 0; s < probs.rows(); ++s)
      if (std::abs(probs.row(s).sum() - 1.0) > 1e-9) throw ValidationError("policy row does not sum to 1");
    Policy p;
    p.kind_ = Kind::tabular;
    p.probs_ = std::move(probs);
    return p;
  }

  static Policy loglinear(const EnvSpec& env, Vec theta) {
    Policy p;
    p.kind_ = Kind::loglinear;
    p.probs_ = loglinear_probs(env, theta);
    p.theta_ = std::move(theta);
    return p;
  }

  Kind kind() const noexcept { return kind_; }
  bool is_deterministic() const noexcept { return kind_ == Kind::deterministic; }
  int S() const noexcept { return static_cast<int>(probs_.rows()); }
  int A() const noexcept { return static_cast<int>(probs_.cols()); }
  const Mat& probs() const noexcept { return probs_; }
  double operator()(int s, int a) const { return probs_(s, a); }

  const std::vector<int>& actions() const {
    if (kind_ != Kind::deterministic) throw ValidationError("policy is not deterministic");
    return actions_;
  }
  const Vec& theta() const {
    if (kind_ != Kind::loglinear) throw ValidationError("policy is not loglinear");
    return theta_;
  }

 private:
  Kind kind_ = Kind::tabular;
  Mat probs_;
  std::vector<int> actions_;
  Vec theta_;
};

namespace detail {

inline void check_policy(const EnvSpec& env, const Policy& pi) {
  if (pi.S() != env.S || pi.A() != env.A) throw ValidationError("policy shape does not match environment");
}

/// S x (S*A) matrix spreading state mass over actions.
inline Mat policy_map(const EnvSpec& env, const Policy& pi) {
  Mat m = Mat::Zero(env.S, env.S * env.A);
  for (int s = 0; s < env.S; ++s)
    for (int a = 0; a < env.A; ++a) m(s, env.row(s, a)) = pi(s, a);
  return m;
}

}  // namespace detail

/** @brief Normalized discounted state-action occupancy (first step at t = 0). */
inline Vec occupancy(const EnvSpec& env, const Policy& pi) {
  detail::check_policy(env, pi);
  Mat pi_map = detail::policy_map(env, pi);
  Mat p_pi = pi_map * env.P;
  Mat lhs = Mat::Identity(env.S, env.S) - env.gamma * p_pi.transpose();
  Vec x = lhs.partialPivLu().solve(env.rho);
  Vec occ(env.S * env.A);
  for (int s = 0; s < env.S; ++s)
    for (int a = 0; a < env.A; ++a) occ(env.row(s, a)) = std::max(0.0, x(s) * pi(s, a));
  double total = occ.sum();
  if (!(total > 0)) throw ValidationError("occupancy has no mass");
  return occ / total;
}

/// Expected discounted return from rho under reward phi^T omega.
inline double value(const EnvSpec& env, const Policy& pi, const Vec& omega) {
  if (omega.size() != env.d()) throw ValidationError("reward parameter has wrong dimension");
  return occupancy(env, pi).dot(env.phi * omega) / (1.0 - env.gamma);
}

/**
 * @brief Discounted feature sums from every (s, a) under pi, one row per pair.
 *
 * Row s*A+a is E[sum_t gamma^t f(s_t, a_t) | s_0 = s, a_0 = a].
 */
inline Mat feature_expectations(const EnvSpec& env, const Policy& pi, Space map) {
  detail::check_policy(env, pi);
  const int n = env.S * env.A;
  Mat lhs = Mat::Identity(n, n) - env.gamma * env.P * detail::policy_map(env, pi);
  return lhs.partialPivLu().solve(env.features(map));
}

inline Vec policy_feature_expectation(const EnvSpec& env, const Policy& pi, int s, int a, Space map) {
  if (s < 0 || s >= env.S || a < 0 || a >= env.A) throw ValidationError("state-action index out of range");
  return feature_expectations(env, pi, map).row(env.row(s, a)).transpose();
}

/// pi with its action at state s replaced by a.
inline Policy neighbor_policy(const Policy& pi, int s, int a) {
  std::vector<int> act = pi.actions();
  if (s < 0 || s >= pi.S() || a < 0 || a >= pi.A()) throw ValidationError("neighbor index out of range");
  if (act[s] == a) throw ValidationError("neighbor must change the action");
  act[s] = a;
  return Policy::deterministic(std::move(act), pi.A());
}

/// (s, a) pairs with a != pi(s), in lexicographic order.
inline std::vector<std::pair<int, int>> neighbor_pairs(const Policy& pi) {
  const auto& act = pi.actions();
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s < pi.S(); ++s)
    for (int a = 0; a < pi.A(); ++a)
      if (a != act[s]) out.emplace_back(s, a);
  return out;
}

/**
 * @brief d x S(A-1) matrix of occupancy-weighted reward-feature gaps between
 * pi and each neighbor. Column order follows neighbor_pairs().
 */
inline Mat build_M_matrix(const EnvSpec& env, const Policy& pi) {
  if (!pi.is_deterministic()) throw ValidationError("target policy must be deterministic");
  detail::check_policy(env, pi);
  auto pairs = neighbor_pairs(pi);
  Vec base = env.phi.transpose() * occupancy(env, pi);
  Mat m(env.d(), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    Policy nb = neighbor_policy(pi, pairs[j].first, pairs[j].second);
    m.col(static_cast<Eigen::Index>(j)) = base - env.phi.transpose() * occupancy(env, nb);
  }
  return m;
}

/// sum_s rho(s) sum_a |pi(a|s) - pi'(a|s)|
inline double policy_l1_distance(const Policy& p, const Policy& q, const Vec& rho) {
  if (p.S() != q.S() || p.A() != q.A() || rho.size() != p.S()) throw ValidationError("policy shapes differ");
  return rho.dot((p.probs() - q.probs()).cwiseAbs().rowwise().sum());
}

/// rho-weighted KL(p || q) in nats; +inf when p charges an action q excludes.
inline double kl_divergence(const Policy& p, const Policy& q, const Vec& rho) {
  if (p.S() != q.S() || p.A() != q.A() || rho.size() != p.S()) throw ValidationError("policy shapes differ");
  double total = 0.0;
  for (int s = 0; s < p.S(); ++s) {
    if (rho(s) <= 0) continue;
    double row = 0.0;
    for (int a = 0; a < p.A(); ++a) {
      double ps = p(s, a);
      if (ps <= 0) continue;
      double qs = q(s, a);
      if (qs <= 0) return std::numeric_limits<double>::infinity();
      row += ps * std::log(ps / qs);
    }
    total += rho(s) * row;
  }
  return std::max(total, 0.0);
}

/** @brief Draw a Bradley-Terry label for the pair (tau, tau') under reward omega. */
inline PreferenceSample bt_sample(const Vec& omega, const Vec& f_tau, const Vec& f_tau_prime, Rng& rng,
                                  Space space = Space::phi) {
  PreferenceSample s;
  s.z = f_tau - f_tau_prime;
  if (s.z.size() != omega.size()) throw ValidationError("feature/parameter dimension mismatch");
  s.o = rng.bernoulli(sigmoid(omega.dot(s.z))) ? 1 : -1;
  s.space = space;
  return s;
}

}  // namespace pplab
