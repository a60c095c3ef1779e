#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "pplab/dataset.hpp"
#include "pplab/env.hpp"
#include "pplab/errors.hpp"
#include "pplab/kernels.hpp"
#include "pplab/learners.hpp"

namespace pplab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/** @brief Outcome of one poisoning attack, after retraining the victim. */
struct AttackReport {
  std::string mode;
  PreferenceDataset synthesized{Provenance::synthesized};
  std::int64_t merged_size = 0;
  Vec target_param;
  Vec retrained_param;
  double achieved_l1 = kNaN;
  double achieved_kl = kNaN;
  std::int64_t count_actual = 0;
  double bound_upper = kNaN;
  double bound_lower = kNaN;
  bool feasible = false;
  /// Extra per-attack quantities, keyed by name (ordered for stable output).
  std::map<std::string, double> diagnostics;
  /// Human-readable reasons for any failed check.
  std::vector<std::string> failures;

  void check(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

namespace detail {

inline double max_sample_norm(const PreferenceDataset& d) {
  double m = 0.0;
  for (const auto& s : d) m = std::max(m, s.z.norm());
  return m;
}

inline void finish(AttackReport& r, const TeachingSet& ts, const PreferenceDataset& clean) {
  r.synthesized = ts.materialize();
  r.count_actual = ts.count;
  r.merged_size = static_cast<std::int64_t>(clean.size()) + ts.count;
  r.feasible = r.failures.empty();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Unregularized RLHF
// ---------------------------------------------------------------------------

/// Sample-count upper bound for the unregularized attack.
inline double rlhf_unreg_upper_bound(double n_bar, double lambda, double eps_p, int S, int A, double sigma_min,
                                     double omega_bar_norm) {
  if (!(sigma_min > 0)) return std::numeric_limits<double>::infinity();
  double sa = static_cast<double>(S) * A;
  double inner = eps_p * eps_p * sa / (sigma_min * sigma_min) + omega_bar_norm * eps_p * std::sqrt(sa) / sigma_min;
  return std::ceil((2.0 * n_bar + lambda) / xi_max() * inner);
}

/**
 * @brief Poison a reward learner so that the greedy policy of the learned
 * reward is pi_t with margin eps_p against every neighbor.
 */
inline AttackReport attack_rlhf_unreg(const EnvSpec& env, const Policy& pi_t, const PreferenceDataset& clean,
                                      double eps_p, const LearnerConfig& cfg) {
  validate(env);
  cfg.validate();
  if (!pi_t.is_deterministic()) throw ValidationError("target policy must be deterministic");
  if (!(eps_p > 0)) throw ValidationError("epsilon' must be positive");
  if (!clean.empty() && clean.samples().front().space != Space::phi)
    throw ValidationError("reward learning needs phi-space data");

  AttackReport r;
  r.mode = "attack-rlhf-unreg";
  const Mat M = build_M_matrix(env, pi_t);
  const Vec omega_bar = fit_reward_mle(clean, env.d(), cfg);
  const Vec omega_t = project_polytope(omega_bar, M, eps_p);
  const TeachingSet ts = teach_logistic_augment(omega_t, clean, cfg.lambda);
  if (ts.count > 0 && !gamma_condition(env.gamma, omega_t.norm()))
    throw InfeasibleError("discount too small for the target reward norm: need gamma >= " +
                          std::to_string(1.0 - 2.0 * omega_t.norm() / (xi_max() + 1.0)));

  const PreferenceDataset merged = merge(clean, ts.materialize());
  const Vec omega_hat = fit_reward_mle(merged, env.d(), cfg);
  const Policy learned = solve_unregularized(env, omega_hat);
  const double margin = (M.transpose() * omega_hat).minCoeff() - eps_p;

  r.target_param = omega_t;
  r.retrained_param = omega_hat;
  r.achieved_l1 = policy_l1_distance(pi_t, learned, env.rho);
  r.achieved_kl = kl_divergence(pi_t, learned, env.rho);
  r.check(margin >= -1e-8, "retrained reward violates the neighbor margin");
  r.check(learned.actions() == pi_t.actions(), "retrained greedy policy differs from the target");

  const double sigma = min_nonzero_singular_value(M);
  r.bound_upper = rlhf_unreg_upper_bound(static_cast<double>(clean.size()), cfg.lambda, eps_p, env.S, env.A,
                                         sigma, omega_bar.norm());
  r.diagnostics = {
      {"sigma_min_M", sigma},
      {"margin_slack", margin},
      {"omega_bar_norm", omega_bar.norm()},
      {"omega_target_norm", omega_t.norm()},
      {"retrain_error", (omega_hat - omega_t).norm()},
      {"first_order_residual", rlhf_gradient(omega_t, merged, cfg.lambda).norm()},
      {"max_sample_norm", detail::max_sample_norm(ts.materialize())},
      {"feature_norm_cap", 2.0 / (1.0 - env.gamma)},
  };
  // With clean data the sample follows the loss gradient and may exceed the cap.
  r.diagnostics["feature_cap_ok"] = r.diagnostics["max_sample_norm"] <= r.diagnostics["feature_norm_cap"] ? 1.0 : 0.0;
  detail::finish(r, ts, clean);
  return r;
}

// ---------------------------------------------------------------------------
// Regularized RLHF
// ---------------------------------------------------------------------------

/**
 * @brief Minimum-norm omega whose KL-regularized optimal policy against mu is
 * pi_t exactly.
 *
 * Solves phi omega = beta log(pi_t / mu) up to reward shaping
 * h(s) - gamma E h(s'), which leaves the regularized optimum unchanged.
 * Throws InfeasibleError when no such omega exists in the span of phi.
 */
inline Vec regularized_reward_target(const EnvSpec& env, const Policy& pi_t, const Policy& mu, double beta) {
  std::vector<int> rows;
  for (int s = 0; s < env.S; ++s)
    if (env.gamma > 0 || env.rho(s) > 0)
      for (int a = 0; a < env.A; ++a) rows.push_back(env.row(s, a));
  const auto n = static_cast<Eigen::Index>(rows.size());
  Mat phi(n, env.d());
  Mat shaping = Mat::Zero(n, env.S);
  Vec b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int rr = rows[static_cast<std::size_t>(i)];
    int s = rr / env.A, a = rr % env.A;
    double p = pi_t(s, a), q = mu(s, a);
    if (p <= 0 || q <= 0) throw InfeasibleError("target and reference policies need full support");
    b(i) = beta * (std::log(p) - std::log(q));
    phi.row(i) = env.phi.row(rr);
    shaping(i, s) += 1.0;
    shaping.row(i) -= env.gamma * env.P.row(rr);
  }
  Mat proj = Mat::Identity(n, n) - shaping * pseudo_inverse(shaping);
  Mat qphi = proj * phi;
  Vec qb = proj * b;
  Vec omega = pseudo_inverse(qphi) * qb;
  double resid = (qphi * omega - qb).lpNorm<Eigen::Infinity>();
  if (resid > 1e-8)
    throw InfeasibleError("target log-ratio is not representable by the reward features (residual " +
                          std::to_string(resid) + ")");
  return omega;
}

/// Sample-count upper bound when the target is exactly reachable.
inline double rlhf_reg_upper_bound(double omega_norm, double n_bar, double lambda, double gamma) {
  double g2 = (1.0 - gamma) * (1.0 - gamma);
  return std::ceil((lambda * omega_norm * omega_norm + omega_norm * 2.0 * n_bar / g2) / xi_max());
}

/**
 * @brief Poison RLHF with a KL-regularized policy step so that the learned
 * policy is within KL eps_p of pi_t.
 */
inline AttackReport attack_rlhf_reg(const EnvSpec& env, const Policy& pi_t, const Policy& mu, double eps_p,
                                    double eps, const PreferenceDataset& clean, const LearnerConfig& cfg) {
  validate(env);
  cfg.validate();
  if (!(cfg.beta > 0)) throw ValidationError("regularized RLHF requires beta > 0");
  if (!(eps > 0) || !(eps_p > 0)) throw ValidationError("epsilon and epsilon' must be positive");
  if (eps_p > 2.0 * std::numbers::ln2 * eps) throw ValidationError("epsilon' exceeds 2 ln 2 * epsilon");
  if (!clean.empty() && clean.samples().front().space != Space::phi)
    throw ValidationError("reward learning needs phi-space data");

  AttackReport r;
  r.mode = "attack-rlhf-reg";
  const Vec omega_t = regularized_reward_target(env, pi_t, mu, cfg.beta);
  const TeachingSet ts = teach_logistic_augment(omega_t, clean, cfg.lambda);
  const PreferenceDataset merged = merge(clean, ts.materialize());
  const Vec omega_hat = fit_reward_mle(merged, env.d(), cfg);
  const Policy learned = solve_regularized(env, omega_hat, cfg.beta, mu);

  r.target_param = omega_t;
  r.retrained_param = omega_hat;
  r.achieved_kl = kl_divergence(pi_t, learned, env.rho);
  r.achieved_l1 = policy_l1_distance(pi_t, learned, env.rho);
  r.check(r.achieved_kl <= eps_p + 1e-8, "KL to target exceeds epsilon'");
  r.check(r.achieved_l1 <= eps, "l1 distance to target exceeds epsilon");
  r.bound_upper = rlhf_reg_upper_bound(omega_t.norm(), static_cast<double>(clean.size()), cfg.lambda, env.gamma);
  r.diagnostics = {
      {"omega_target_norm", omega_t.norm()},
      {"retrain_error", (omega_hat - omega_t).norm()},
      {"first_order_residual", rlhf_gradient(omega_t, merged, cfg.lambda).norm()},
      {"max_sample_norm", detail::max_sample_norm(ts.materialize())},
      {"feature_norm_cap", 2.0 / (1.0 - env.gamma)},
      {"kl_target_reference", kl_divergence(pi_t, mu, env.rho)},
  };
  detail::finish(r, ts, clean);
  return r;
}

// ---------------------------------------------------------------------------
// DPO
// ---------------------------------------------------------------------------

/// Matching upper and lower count when there is no clean data.
inline double dpo_empty_count(double lambda, double delta_norm, double eps_p) {
  double gap = delta_norm - std::sqrt(eps_p);
  if (gap <= 0) return 0.0;
  return 2.0 * std::ceil(lambda * gap * gap / (2.0 * xi_max()));
}

/// Upper bound with clean data; theta_bar is the clean-data optimum.
inline double dpo_upper_bound(double n_bar, double beta, double lambda, double eps_p, const Vec& theta_t,
                              const Vec& theta_mu, const Vec& theta_bar) {
  double dist = (theta_bar - theta_t).norm();
  if (dist == 0.0) return 0.0;
  double num = std::abs(dist * dist - eps_p * eps_p);
  double scale = 3.0 * theta_t.norm() + theta_mu.norm() + std::sqrt(eps_p);
  return 2.0 * std::ceil((n_bar * beta + lambda) * num / (2.0 * xi_max() * dist) * scale);
}

/// Lower bound on any attack reaching the eps_p ball; may be vacuous (<= 0).
inline double dpo_lower_bound(double n_bar, double lambda, double delta_norm, double eps_p) {
  return dpo_empty_count(lambda, delta_norm, eps_p) - n_bar;
}

/**
 * @brief Poison DPO so that the learned parameter lies in the sqrt(eps_p)
 * ball around theta_t.
 */
inline AttackReport attack_dpo(const EnvSpec& env, const Vec& theta_t, const Vec& theta_mu, double eps_p,
                               double eps, const PreferenceDataset& clean, const LearnerConfig& cfg) {
  validate(env);
  cfg.validate();
  if (!(cfg.beta > 0)) throw ValidationError("DPO requires beta > 0");
  if (!(eps_p > 0) || eps_p > eps / 2.0) throw ValidationError("epsilon' must lie in (0, epsilon/2]");
  if (theta_t.size() != env.d_prime() || theta_mu.size() != env.d_prime())
    throw ValidationError("policy parameter has wrong dimension");
  if (!clean.empty() && clean.samples().front().space != Space::psi)
    throw ValidationError("DPO needs psi-space data");

  AttackReport r;
  r.mode = "attack-dpo";
  const Vec theta_bar = fit_dpo(clean, theta_mu, cfg);
  const Vec theta_tilde = project_ball(theta_bar, theta_t, eps_p);
  const TeachingSet ts = teach_dpo(theta_tilde, theta_mu, clean, cfg.beta, cfg.lambda);
  const PreferenceDataset merged = merge(clean, ts.materialize());
  const Vec theta_hat = fit_dpo(merged, theta_mu, cfg);

  const double dist = (theta_hat - theta_t).norm();
  const double delta_norm = (theta_t - theta_mu).norm();
  const double n_bar = static_cast<double>(clean.size());
  const Policy learned = Policy::loglinear(env, theta_hat);
  const Policy target = Policy::loglinear(env, theta_t);

  r.target_param = theta_tilde;
  r.retrained_param = theta_hat;
  r.achieved_l1 = policy_l1_distance(target, learned, env.rho);
  r.achieved_kl = kl_divergence(target, learned, env.rho);
  r.check(dist <= std::sqrt(eps_p) + 1e-8, "retrained parameter leaves the epsilon' ball");
  r.check(r.achieved_l1 <= eps, "learned policy is not epsilon-close to the target");
  if (clean.empty()) {
    r.bound_upper = r.bound_lower = dpo_empty_count(cfg.lambda, delta_norm, eps_p);
  } else {
    r.bound_upper = dpo_upper_bound(n_bar, cfg.beta, cfg.lambda, eps_p, theta_t, theta_mu, theta_bar);
    r.bound_lower = dpo_lower_bound(n_bar, cfg.lambda, delta_norm, eps_p);
  }
  r.diagnostics = {
      {"param_distance", dist},
      {"radius", std::sqrt(eps_p)},
      {"delta_norm", delta_norm},
      {"theta_bar_distance", (theta_bar - theta_t).norm()},
      {"first_order_residual", dpo_gradient(theta_tilde, merged, cfg.beta, cfg.lambda, theta_mu).norm()},
      {"lower_bound_vacuous", r.bound_lower <= 0 ? 1.0 : 0.0},
      {"l1_squared_within_epsilon", r.achieved_l1 * r.achieved_l1 <= eps ? 1.0 : 0.0},
  };
  if (clean.empty() && delta_norm > std::sqrt(eps_p)) {
    // Line-segment point at distance sqrt(eps_p) from theta_t toward theta_mu.
    double alpha = delta_norm / std::sqrt(eps_p) - 1.0;
    Vec segment = (alpha * theta_t + theta_mu) / (1.0 + alpha);
    r.diagnostics["segment_point_gap"] = (segment - theta_tilde).norm();
    // Alternative closed-form point, with its induced count for comparison.
    Vec dir = theta_mu - 2.0 * theta_t;
    if (dir.norm() > 0) {
      Vec stated = theta_t + std::sqrt(eps_p) * dir / dir.norm();
      r.diagnostics["stated_point_count"] =
          2.0 * static_cast<double>(ceil_count(cfg.lambda * (stated - theta_mu).squaredNorm(), 2.0 * xi_max()));
    }
  }
  detail::finish(r, ts, clean);
  return r;
}

}  // namespace pplab
