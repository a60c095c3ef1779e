#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "pplab/attacks.hpp"
#include "pplab/env.hpp"
#include "pplab/kernels.hpp"
#include "pplab/learners.hpp"
#include "pplab/rng.hpp"

namespace pplab {

/**
 * @brief Minimum over sampled parameters of the smallest singular value of
 * the loglinear policy Jacobian, with columns rho(s) pi(a|s) (psi(s,a) - E_pi psi(s,.)).
 *
 * A finite sample only estimates the infimum; treat the value as a diagnostic.
 */
inline double estimate_eta_min(const EnvSpec& env, const Vec& center, double radius, int samples,
                               std::uint64_t seed) {
  Rng rng(seed);
  double best = std::numeric_limits<double>::infinity();
  const int dp = env.d_prime();
  for (int k = 0; k <= samples; ++k) {
    Vec theta = center;
    if (k > 0) {
      Vec u(dp);
      for (int i = 0; i < dp; ++i) u(i) = rng.normal();
      theta += radius * rng.uniform() * u / std::max(u.norm(), 1e-300);
    }
    Mat probs = loglinear_probs(env, theta);
    Mat jac(dp, env.S * env.A);
    for (int s = 0; s < env.S; ++s) {
      Vec mean = Vec::Zero(dp);
      for (int a = 0; a < env.A; ++a) mean += probs(s, a) * env.psi.row(env.row(s, a)).transpose();
      for (int a = 0; a < env.A; ++a)
        jac.col(env.row(s, a)) = env.rho(s) * probs(s, a) * (env.psi.row(env.row(s, a)).transpose() - mean);
    }
    best = std::min(best, min_singular_value(jac));
  }
  return best;
}

struct BoundsInput {
  const EnvSpec* env = nullptr;
  Vec theta_t;
  Vec theta_mu;
  Vec omega_t;
  PreferenceDataset clean_phi;
  PreferenceDataset clean_psi{Provenance::clean};
  double beta = 1.0;
  double lambda = 1.0;
  double eps = 0.1;
  double eps_p_reg = 0.0;
  double eps_p_dpo = 0.0;
  std::uint64_t seed = 0;
};

/** @brief Closed-form sample-complexity expressions evaluated on one instance. */
struct BoundsSheet {
  double n_hat_rlhf_upper = kNaN;
  double n_hat_rlhf_general = kNaN;
  double n_hat_dpo_upper = kNaN;
  double n_hat_dpo_lower = kNaN;
  double kappa1 = kNaN;

  bool rlhf_exact_branch = false;
  bool dpo_lower_vacuous = false;
  bool kappa1_vacuous = false;

  double omega_norm = kNaN;
  double delta_norm = kNaN;
  double gamma_feature_gap_norm = kNaN;
  double sigma_min_cov = kNaN;
  double eta_min = kNaN;
  double kl_target_reference = kNaN;
  double n_bar_phi = 0;
  double n_bar_psi = 0;
};

/// ((lambda / xi_max)(|delta| - sqrt(eps'))^2 - n_bar) / ceil(rlhf upper)
inline double kappa1_value(double lambda, double delta_norm, double eps_p, double n_bar, double rlhf_upper_ceil) {
  double gap = std::max(delta_norm - std::sqrt(eps_p), 0.0);
  if (!(rlhf_upper_ceil > 0)) return kNaN;
  return (lambda / xi_max() * gap * gap - n_bar) / rlhf_upper_ceil;
}

inline BoundsSheet evaluate_bounds(const BoundsInput& in) {
  if (in.env == nullptr) throw ValidationError("bounds need an environment");
  const EnvSpec& env = *in.env;
  BoundsSheet b;
  b.n_bar_phi = static_cast<double>(in.clean_phi.size());
  b.n_bar_psi = static_cast<double>(in.clean_psi.size());
  b.omega_norm = in.omega_t.norm();
  b.delta_norm = (in.theta_t - in.theta_mu).norm();

  const Policy target = Policy::loglinear(env, in.theta_t);
  const Policy mu = Policy::loglinear(env, in.theta_mu);
  b.kl_target_reference = kl_divergence(target, mu, env.rho);

  b.n_hat_rlhf_upper = rlhf_reg_upper_bound(b.omega_norm, b.n_bar_phi, in.lambda, env.gamma);

  const Policy reg = solve_regularized(env, in.omega_t, in.beta, mu);
  const Mat feat = feature_expectations(env, reg, Space::phi);
  Vec gamma_vec = Vec::Zero(env.d());
  for (int s = 0; s < env.S; ++s)
    for (int a = 0; a < env.A; ++a)
      gamma_vec += env.rho(s) * (target(s, a) - reg(s, a)) * feat.row(env.row(s, a)).transpose();
  b.gamma_feature_gap_norm = gamma_vec.norm();
  b.rlhf_exact_branch = b.gamma_feature_gap_norm <= 1e-12;

  if (!in.clean_phi.empty()) {
    Mat cov = Mat::Zero(env.d(), env.d());
    for (const auto& s : in.clean_phi) cov += s.z * s.z.transpose();
    cov /= b.n_bar_phi;
    b.sigma_min_cov = Eigen::SelfAdjointEigenSolver<Mat>(cov).eigenvalues().minCoeff();
    if (!b.rlhf_exact_branch && b.sigma_min_cov > 0) {
      double g1 = 1.0 - env.gamma;
      double kl_term = b.kl_target_reference - in.eps_p_reg;
      double sig = b.sigma_min_cov;
      b.n_hat_rlhf_general = in.beta * in.beta * kl_term * kl_term /
                                 (g1 * g1 * sig * sig * b.gamma_feature_gap_norm * b.gamma_feature_gap_norm) +
                             b.n_bar_phi / (g1 * g1 * g1 * g1 * sig * sig * sig * sig);
    }
  }

  if (in.clean_psi.empty()) {
    b.n_hat_dpo_upper = b.n_hat_dpo_lower = dpo_empty_count(in.lambda, b.delta_norm, in.eps_p_dpo);
  } else {
    LearnerConfig cfg{in.lambda, in.beta};
    Vec theta_bar = fit_dpo(in.clean_psi, in.theta_mu, cfg);
    b.n_hat_dpo_upper =
        dpo_upper_bound(b.n_bar_psi, in.beta, in.lambda, in.eps_p_dpo, in.theta_t, in.theta_mu, theta_bar);
    b.n_hat_dpo_lower = dpo_lower_bound(b.n_bar_psi, in.lambda, b.delta_norm, in.eps_p_dpo);
  }
  b.dpo_lower_vacuous = !(b.n_hat_dpo_lower > 0);

  b.kappa1 = kappa1_value(in.lambda, b.delta_norm, in.eps_p_dpo, b.n_bar_psi, b.n_hat_rlhf_upper);
  b.kappa1_vacuous = !(b.kappa1 > 0);
  b.eta_min = estimate_eta_min(env, in.theta_t, b.delta_norm + 1.0, 64, in.seed);
  return b;
}

struct CompareReport {
  AttackReport rlhf;
  AttackReport dpo;
  BoundsSheet sheet;
  /// DPO lower bound >= kappa1 * RLHF upper bound (only meaningful when kappa1 > 0).
  bool bound_inequality_holds = false;
};

/**
 * @brief Run the regularized RLHF and DPO attacks on one bandit instance and
 * relate their sample-complexity bounds.
 */
inline CompareReport compare_paradigms(const EnvSpec& env, const Vec& theta_t, const Vec& theta_mu,
                                       const PreferenceDataset& clean_phi, const PreferenceDataset& clean_psi,
                                       double eps, double eps_p_reg, double eps_p_dpo, const LearnerConfig& cfg,
                                       std::uint64_t seed = 0) {
  if (env.gamma != 0.0) throw ValidationError("comparison is defined on bandit instances");
  CompareReport out;
  const Policy target = Policy::loglinear(env, theta_t);
  const Policy mu = Policy::loglinear(env, theta_mu);
  out.rlhf = attack_rlhf_reg(env, target, mu, eps_p_reg, eps, clean_phi, cfg);
  out.dpo = attack_dpo(env, theta_t, theta_mu, eps_p_dpo, eps, clean_psi, cfg);

  BoundsInput in;
  in.env = &env;
  in.theta_t = theta_t;
  in.theta_mu = theta_mu;
  in.omega_t = out.rlhf.target_param;
  in.clean_phi = clean_phi;
  in.clean_psi = clean_psi;
  in.beta = cfg.beta;
  in.lambda = cfg.lambda;
  in.eps = eps;
  in.eps_p_reg = eps_p_reg;
  in.eps_p_dpo = eps_p_dpo;
  in.seed = seed;
  out.sheet = evaluate_bounds(in);

  const auto& s = out.sheet;
  if (s.kappa1_vacuous) {
    out.bound_inequality_holds = true;
  } else {
    double rhs = s.kappa1 * s.n_hat_rlhf_upper;
    out.bound_inequality_holds = s.n_hat_dpo_lower >= rhs - 1e-9 * std::max(1.0, std::abs(rhs));
  }
  return out;
}

struct ScaledReward {
  double c = 1.0;
  Vec omega;
  double l1 = kNaN;
};

/**
 * @brief Smallest power-of-two multiple c of omega_opt whose regularized
 * optimal policy is within l1 distance eps of the deterministic target.
 */
inline ScaledReward scale_for_regularized(const EnvSpec& env, const Policy& pi_t, const Vec& omega_opt,
                                          const Policy& mu, double beta, double eps) {
  if (!pi_t.is_deterministic()) throw ValidationError("target policy must be deterministic");
  for (double c = 1.0; c <= 0x1.0p60; c *= 2.0) {
    Vec omega = c * omega_opt;
    double l1 = policy_l1_distance(pi_t, solve_regularized(env, omega, beta, mu), env.rho);
    if (l1 <= eps) return {c, omega, l1};
  }
  throw InfeasibleError("no scaling of the reward makes the regularized policy eps-close");
}

}  // namespace pplab
