#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pplab/dataset.hpp"
#include "pplab/env.hpp"
#include "pplab/errors.hpp"
#include "pplab/numeric.hpp"

namespace pplab {

using RewardParams = Vec;
using PolicyParams = Vec;

struct LearnerConfig {
  double lambda = 1.0;
  double beta = 1.0;
  double opt_tol = 1e-10;
  int max_iters = 500;

  void validate() const {
    if (!(lambda > 0)) throw ValidationError("lambda must be positive");
    if (!(beta >= 0)) throw ValidationError("beta must be nonnegative");
    if (!(opt_tol > 0)) throw ValidationError("opt_tol must be positive");
    if (max_iters <= 0) throw ValidationError("max_iters must be positive");
  }
};

/**
 * @brief Regularized logistic loss sum_i log(1 + exp(-o_i * scale * u^T z_i)) + lambda/2 |u|^2.
 *
 * Both victim losses reduce to this form: reward MLE with u = omega and
 * scale 1, DPO with u = theta - theta_mu and scale beta.
 */
class LogisticObjective {
 public:
  LogisticObjective(const PreferenceDataset& data, double scale, double lambda, Vec offset)
      : data_(data), scale_(scale), lambda_(lambda), offset_(std::move(offset)) {
    if (!data.empty() && data.dim() != offset_.size())
      throw ValidationError("dataset dimension does not match parameter dimension");
  }

  double value(const Vec& x) const {
    Vec u = x - offset_;
    double total = 0.0;
    for (const auto& s : data_) total += log1pexp(-s.o * scale_ * u.dot(s.z));
    return total + 0.5 * lambda_ * u.squaredNorm();
  }

  /// Data term only (no regularizer).
  Vec data_gradient(const Vec& x) const {
    Vec u = x - offset_;
    Vec g = Vec::Zero(u.size());
    for (const auto& s : data_) {
      double m = s.o * scale_ * u.dot(s.z);
      g -= (s.o * scale_ * sigmoid(-m)) * s.z;
    }
    return g;
  }

  Vec gradient(const Vec& x) const { return data_gradient(x) + lambda_ * (x - offset_); }

  Mat hessian(const Vec& x) const {
    Vec u = x - offset_;
    Mat h = lambda_ * Mat::Identity(u.size(), u.size());
    for (const auto& s : data_) {
      double m = scale_ * u.dot(s.z);
      double w = scale_ * scale_ * sigmoid(m) * sigmoid(-m);
      h.selfadjointView<Eigen::Lower>().rankUpdate(s.z, w);
    }
    return h.selfadjointView<Eigen::Lower>();
  }

 private:
  const PreferenceDataset& data_;
  double scale_;
  double lambda_;
  Vec offset_;
};

inline double rlhf_loss(const Vec& omega, const PreferenceDataset& d, double lambda) {
  return LogisticObjective(d, 1.0, lambda, Vec::Zero(omega.size())).value(omega);
}
inline Vec rlhf_gradient(const Vec& omega, const PreferenceDataset& d, double lambda) {
  return LogisticObjective(d, 1.0, lambda, Vec::Zero(omega.size())).gradient(omega);
}
inline Mat rlhf_hessian(const Vec& omega, const PreferenceDataset& d, double lambda) {
  return LogisticObjective(d, 1.0, lambda, Vec::Zero(omega.size())).hessian(omega);
}

inline double dpo_loss(const Vec& theta, const PreferenceDataset& d, double beta, double lambda, const Vec& theta_mu) {
  return LogisticObjective(d, beta, lambda, theta_mu).value(theta);
}
inline Vec dpo_gradient(const Vec& theta, const PreferenceDataset& d, double beta, double lambda,
                        const Vec& theta_mu) {
  return LogisticObjective(d, beta, lambda, theta_mu).gradient(theta);
}
inline Mat dpo_hessian(const Vec& theta, const PreferenceDataset& d, double beta, double lambda,
                       const Vec& theta_mu) {
  return LogisticObjective(d, beta, lambda, theta_mu).hessian(theta);
}

struct OptimResult {
  Vec x;
  int iterations = 0;
  double grad_norm = 0.0;
};

/**
 * @brief Damped Newton with Armijo backtracking; falls back to steepest
 * descent when the Hessian solve fails or yields a non-descent direction.
 */
template <class Objective>
OptimResult newton_minimize(const Objective& f, Vec x, double tol, int max_iters) {
  for (int it = 0; it < max_iters; ++it) {
    Vec g = f.gradient(x);
    double gn = g.norm();
    if (!std::isfinite(gn)) throw ConvergenceError("non-finite gradient", gn);
    if (gn <= tol) return {std::move(x), it, gn};

    Eigen::LLT<Mat> llt(f.hessian(x));
    Vec p;
    if (llt.info() == Eigen::Success) p = -llt.solve(g);
    if (p.size() == 0 || !p.allFinite() || g.dot(p) >= 0) p = -g;

    const double f0 = f.value(x);
    const double slope = g.dot(p);
    bool accepted = false;
    for (double t = 1.0; t > 1e-20; t *= 0.5) {
      Vec xn = x + t * p;
      double fn = f.value(xn);
      if (fn <= f0 + 1e-4 * t * slope) {
        x = std::move(xn);
        accepted = true;
        break;
      }
      // Below the resolution of the loss value, judge progress by the gradient.
      if (std::abs(t * slope) <= 1e-12 * (1.0 + std::abs(f0)) && f.gradient(xn).norm() < gn) {
        x = std::move(xn);
        accepted = true;
        break;
      }
    }
    if (!accepted) throw ConvergenceError("line search failed", gn);
  }
  double gn = f.gradient(x).norm();
  if (gn <= tol) return {std::move(x), max_iters, gn};
  throw ConvergenceError("max_iters exceeded (final gradient norm " + std::to_string(gn) + ")", gn);
}

/** @brief Regularized Bradley-Terry MLE; returns 0 for an empty dataset. */
inline RewardParams fit_reward_mle(const PreferenceDataset& d, int dim, const LearnerConfig& cfg) {
  cfg.validate();
  if (!d.empty() && d.dim() != dim) throw ValidationError("dataset dimension does not match reward dimension");
  LogisticObjective f(d, 1.0, cfg.lambda, Vec::Zero(dim));
  return newton_minimize(f, Vec::Zero(dim), cfg.opt_tol, cfg.max_iters).x;
}

/** @brief DPO with the proximal regularizer lambda/2 |theta - theta_mu|^2. */
inline PolicyParams fit_dpo(const PreferenceDataset& d, const Vec& theta_mu, const LearnerConfig& cfg) {
  cfg.validate();
  if (!(cfg.beta > 0)) throw ValidationError("DPO requires beta > 0");
  LogisticObjective f(d, cfg.beta, cfg.lambda, theta_mu);
  return newton_minimize(f, theta_mu, cfg.opt_tol, cfg.max_iters).x;
}

namespace detail {

/// Among near-maximal entries pick the lowest index.
inline int argmax_lowest(const Eigen::Ref<const Vec>& q) {
  double best = q.maxCoeff();
  double tie = 1e-9 * (1.0 + std::abs(best));
  for (Eigen::Index i = 0; i < q.size(); ++i)
    if (q(i) >= best - tie) return static_cast<int>(i);
  return 0;
}

inline Vec q_from_v(const EnvSpec& env, const Vec& r, const Vec& v) { return r + env.gamma * env.P * v; }

}  // namespace detail

/** @brief Greedy optimal policy for reward phi^T omega via value iteration. */
inline Policy solve_unregularized(const EnvSpec& env, const Vec& omega) {
  if (omega.size() != env.d()) throw ValidationError("reward parameter has wrong dimension");
  const Vec r = env.phi * omega;
  Vec v = Vec::Zero(env.S);
  for (int it = 0; it < 10'000'000; ++it) {
    Vec q = detail::q_from_v(env, r, v);
    Vec nv(env.S);
    for (int s = 0; s < env.S; ++s) nv(s) = q.segment(s * env.A, env.A).maxCoeff();
    double diff = (nv - v).lpNorm<Eigen::Infinity>();
    v = std::move(nv);
    if (diff <= 1e-12 || env.gamma == 0.0) break;
  }
  Vec q = detail::q_from_v(env, r, v);
  std::vector<int> act(env.S);
  for (int s = 0; s < env.S; ++s) act[s] = detail::argmax_lowest(q.segment(s * env.A, env.A));
  return Policy::deterministic(std::move(act), env.A);
}

/**
 * @brief KL-regularized optimal policy against reference mu via soft value
 * iteration: V(s) = beta log sum_a mu(a|s) exp(Q(s,a)/beta).
 */
inline Policy solve_regularized(const EnvSpec& env, const Vec& omega, double beta, const Policy& mu) {
  if (!(beta > 0)) throw ValidationError("regularized solve requires beta > 0");
  if (omega.size() != env.d()) throw ValidationError("reward parameter has wrong dimension");
  detail::check_policy(env, mu);
  const Vec r = env.phi * omega;
  const double ninf = -std::numeric_limits<double>::infinity();

  auto soft_max = [&](const Vec& q, int s) {
    double mx = ninf;
    for (int a = 0; a < env.A; ++a)
      if (mu(s, a) > 0) mx = std::max(mx, std::log(mu(s, a)) + q(env.row(s, a)) / beta);
    double z = 0.0;
    for (int a = 0; a < env.A; ++a)
      if (mu(s, a) > 0) z += std::exp(std::log(mu(s, a)) + q(env.row(s, a)) / beta - mx);
    return beta * (mx + std::log(z));
  };

  Vec v = Vec::Zero(env.S);
  for (int it = 0; it < 100'000; ++it) {
    Vec q = detail::q_from_v(env, r, v);
    Vec nv(env.S);
    for (int s = 0; s < env.S; ++s) nv(s) = soft_max(q, s);
    double diff = (nv - v).lpNorm<Eigen::Infinity>();
    v = std::move(nv);
    if (diff <= 1e-12 || env.gamma == 0.0) break;
  }
  Vec q = detail::q_from_v(env, r, v);
  Mat probs = Mat::Zero(env.S, env.A);
  for (int s = 0; s < env.S; ++s) {
    double vs = soft_max(q, s);
    for (int a = 0; a < env.A; ++a)
      if (mu(s, a) > 0) probs(s, a) = std::exp(std::log(mu(s, a)) + (q(env.row(s, a)) - vs) / beta);
    probs.row(s) /= probs.row(s).sum();
  }
  return Policy::tabular(std::move(probs));
}

/// V^pi - beta * discounted KL(pi || mu), both from rho.
inline double regularized_objective(const EnvSpec& env, const Policy& pi, const Vec& omega, double beta,
                                    const Policy& mu) {
  Vec r = env.phi * omega;
  for (int s = 0; s < env.S; ++s)
    for (int a = 0; a < env.A; ++a) {
      double p = pi(s, a);
      if (p <= 0) continue;
      if (mu(s, a) <= 0) return -std::numeric_limits<double>::infinity();
      r(env.row(s, a)) -= beta * std::log(p / mu(s, a));
    }
  return occupancy(env, pi).dot(r) / (1.0 - env.gamma);
}

}  // namespace pplab
