#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>

#include "pplab/dataset.hpp"
#include "pplab/errors.hpp"
#include "pplab/learners.hpp"
#include "pplab/numeric.hpp"

namespace pplab {

/** @brief Principal branch of Lambert W on [-1/e, inf), via Halley iteration. */
inline double lambert_w(double x) {
  constexpr double branch = -1.0 / std::numbers::e;
  if (std::isnan(x)) throw ValidationError("lambert_w of NaN");
  if (x < branch - 1e-15) throw ValidationError("lambert_w argument below -1/e");
  if (x <= branch) return -1.0;
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return x;

  double w;
  if (x < -0.25) {
    double p = std::sqrt(2.0 * (std::numbers::e * x + 1.0));
    w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
  } else if (x < 3.0) {
    w = std::log1p(x) * (1.0 - std::log1p(std::log1p(x)) / (2.0 + std::log1p(x)));
  } else {
    double l1 = std::log(x), l2 = std::log(l1);
    w = l1 - l2 + l2 / l1;
  }
  for (int it = 0; it < 100; ++it) {
    double ew = std::exp(w);
    double f = w * ew - x;
    double wp1 = w + 1.0;
    if (wp1 == 0.0) break;
    double denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
    double step = f / denom;
    w -= step;
    if (std::abs(step) <= 4e-16 * (1.0 + std::abs(w))) break;
  }
  return w;
}

/** @brief Maximum of x / (1 + e^x) and where it is attained. */
struct XiTable {
  double xi_max;
  double x_star;
};

inline const XiTable& xi_table() {
  static const XiTable t = [] {
    double w = lambert_w(1.0 / std::numbers::e);
    return XiTable{w, 1.0 + w};
  }();
  return t;
}

inline double xi_max() { return xi_table().xi_max; }
inline double x_star() { return xi_table().x_star; }

/// x / (1 + e^x)
inline double xi(double x) {
  if (x > 0) {
    double e = std::exp(-x);
    return x * e / (1.0 + e);
  }
  return x / (1.0 + std::exp(x));
}

/**
 * @brief Solution x <= x_star of a = x / (1 + e^x).
 *
 * Throws InfeasibleError for a above xi_max: no single sample can carry that
 * much teaching weight.
 */
inline double xi_inverse(double a) {
  const auto& t = xi_table();
  if (!std::isfinite(a)) throw ValidationError("xi_inverse of non-finite value");
  if (a > t.xi_max * (1.0 + 1e-15)) throw InfeasibleError("xi_inverse argument exceeds xi_max");
  if (a >= t.xi_max * (1.0 - 4e-16)) return t.x_star;
  if (a == 0.0) return 0.0;
  double x = a - lambert_w(-a * std::exp(a));
  if (x > t.x_star + 1e-9) throw InfeasibleError("xi_inverse left the principal branch");
  return std::min(x, t.x_star);
}

/// Number of identical samples needed to carry total weight |a| at per-sample cap `cap`.
inline std::int64_t ceil_count(double a, double cap) {
  double q = std::abs(a) / cap;
  if (!std::isfinite(q) || q > 9e15) throw InfeasibleError("sample count overflow");
  return static_cast<std::int64_t>(std::ceil(q));
}

/// Per-sample solution when |a| is split across ceil(|a| / xi_max) samples.
inline double xi1(double a) {
  if (a == 0.0) return 0.0;
  return xi_inverse(a / static_cast<double>(ceil_count(a, xi_max())));
}

/// Per-sample solution when |a| is split across two mirrored halves of ceil(|a| / (2 xi_max)) samples each.
inline double xi2(double a) {
  if (a == 0.0) return 0.0;
  return xi_inverse(a / (2.0 * static_cast<double>(ceil_count(a, 2.0 * xi_max()))));
}

/**
 * @brief `count` copies of one preference sample, or for DPO count/2 copies
 * of `sample` (o = +1) followed by count/2 copies of `mirrored` (o = -1).
 */
struct TeachingSet {
  std::int64_t count = 0;
  PreferenceSample sample;
  std::optional<PreferenceSample> mirrored;
  Vec target;

  PreferenceDataset materialize() const {
    PreferenceDataset d(Provenance::synthesized);
    if (count == 0) return d;
    if (mirrored) {
      d.append(sample, static_cast<std::size_t>(count / 2));
      d.append(*mirrored, static_cast<std::size_t>(count / 2));
    } else {
      d.append(sample, static_cast<std::size_t>(count));
    }
    return d;
  }
};

/** @brief Smallest set of identical samples whose regularized MLE is omega_t. */
inline TeachingSet teach_logistic(const Vec& omega_t, double lambda) {
  if (!(lambda > 0)) throw ValidationError("lambda must be positive");
  TeachingSet t;
  t.target = omega_t;
  t.sample.z = Vec::Zero(omega_t.size());
  double sq = omega_t.squaredNorm();
  if (sq == 0.0) return t;
  double g = lambda * sq;
  t.count = ceil_count(g, xi_max());
  t.sample.z = xi_inverse(g / static_cast<double>(t.count)) * omega_t / sq;
  t.sample.o = 1;
  return t;
}

/**
 * @brief Identical samples that, appended to `clean`, move the regularized
 * MLE to omega_t.
 *
 * The sample is parallel to the full loss gradient at omega_t, so the
 * stationarity condition holds exactly; with no clean data this is
 * teach_logistic.
 */
inline TeachingSet teach_logistic_augment(const Vec& omega_t, const PreferenceDataset& clean, double lambda) {
  if (!(lambda > 0)) throw ValidationError("lambda must be positive");
  if (!clean.empty() && clean.dim() != omega_t.size()) throw ValidationError("dataset dimension mismatch");
  TeachingSet t;
  t.target = omega_t;
  t.sample.z = Vec::Zero(omega_t.size());
  Vec grad = rlhf_gradient(omega_t, clean, lambda);
  double g = omega_t.dot(grad);
  if (std::abs(g) <= 1e-12) return t;
  t.count = ceil_count(g, xi_max());
  double x = xi_inverse(g / static_cast<double>(t.count));
  t.sample.z = (x / g) * grad;
  t.sample.o = 1;
  return t;
}

/**
 * @brief Even-sized mirrored set that, appended to `clean`, moves the DPO
 * optimum to theta_t.
 */
inline TeachingSet teach_dpo(const Vec& theta_t, const Vec& theta_mu, const PreferenceDataset& clean, double beta,
                             double lambda) {
  if (!(lambda > 0)) throw ValidationError("lambda must be positive");
  if (!(beta > 0)) throw ValidationError("beta must be positive");
  if (!clean.empty() && clean.dim() != theta_t.size()) throw ValidationError("dataset dimension mismatch");
  TeachingSet t;
  t.target = theta_t;
  t.sample = PreferenceSample{Vec::Zero(theta_t.size()), 1, Space::psi};
  Vec delta = theta_t - theta_mu;
  double dsq = delta.squaredNorm();
  if (dsq == 0.0) return t;
  Vec grad = dpo_gradient(theta_t, clean, beta, lambda, theta_mu);
  double g = grad.dot(delta);
  if (std::abs(g) <= 1e-12) return t;
  t.count = 2 * ceil_count(g, 2.0 * xi_max());
  double z = xi_inverse(g / static_cast<double>(t.count));
  Vec plus = z * delta / (beta * dsq);
  Vec minus = plus - (2.0 * z / (beta * g)) * grad;
  t.sample = PreferenceSample{plus, 1, Space::psi};
  t.mirrored = PreferenceSample{minus, -1, Space::psi};
  return t;
}

/**
 * @brief Closed-form projection of omega_bar toward {M^T omega >= eps}.
 *
 * A point already satisfying every constraint is returned unchanged.
 * Otherwise all constraints are made active:
 * omega_bar + M (M^T M)^+ (eps 1 - M^T omega_bar).
 */
inline Vec project_polytope(const Vec& omega_bar, const Mat& M, double eps) {
  if (!(eps > 0)) throw ValidationError("margin must be positive");
  if (M.rows() != omega_bar.size()) throw ValidationError("M has wrong row count");
  if (M.cols() == 0 || M.isZero(0.0)) throw InfeasibleError("M is zero; no reward separates the target");
  Vec slack = M.transpose() * omega_bar - Vec::Constant(M.cols(), eps);
  if (slack.minCoeff() >= 0.0) return omega_bar;
  Vec out = omega_bar - M * (pseudo_inverse(M.transpose() * M) * slack);
  Vec margin = M.transpose() * out;
  if ((margin.array() < eps - 1e-8).any())
    throw InfeasibleError("margin system M^T omega = eps is inconsistent");
  return out;
}

/// Euclidean projection onto {theta : |theta - center|^2 <= eps}.
inline Vec project_ball(const Vec& theta_bar, const Vec& center, double eps) {
  if (!(eps > 0)) throw ValidationError("radius must be positive");
  Vec diff = theta_bar - center;
  double dist = diff.norm();
  double r = std::sqrt(eps);
  if (dist <= r) return theta_bar;
  return center + r * diff / dist;
}

/// 1 - gamma <= 2 |omega_0| / (xi_max + 1)
inline bool gamma_condition(double gamma, double omega_norm) {
  return 1.0 - gamma <= 2.0 * omega_norm / (xi_max() + 1.0);
}

/// |z| <= 2 / (1 - gamma) and the discount condition for omega_0.
inline bool check_feature_feasibility(const PreferenceSample& s, double gamma, const Vec& omega0) {
  return s.z.norm() <= 2.0 / (1.0 - gamma) && gamma_condition(gamma, omega0.norm());
}

}  // namespace pplab
