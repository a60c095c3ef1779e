#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "pplab/dataset.hpp"
#include "pplab/env.hpp"
#include "pplab/rng.hpp"

namespace pplab {

/// Weight of the uniform component mixed into every transition row.
inline constexpr double kUniformMix = 0.05;

inline Vec random_simplex(Rng& rng, int n) {
  Vec p(n);
  for (int i = 0; i < n; ++i) p(i) = -std::log(1.0 - rng.uniform());
  return p / p.sum();
}

inline Vec random_gaussian(Rng& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

/// Random feature rows with norms uniform in [0.5, 1].
inline Mat random_features(Rng& rng, int rows, int cols) {
  Mat f(rows, cols);
  for (int r = 0; r < rows; ++r) {
    Vec v = random_gaussian(rng, cols);
    double n = v.norm();
    f.row(r) = (n > 0 ? v / n : v) * rng.uniform(0.5, 1.0);
  }
  return f;
}

struct EnvOptions {
  int S = 3;
  int A = 2;
  int d = 4;
  int d_prime = 4;
  double gamma = 0.9;
  bool psi_equals_phi = false;
  bool uniform_rho = false;
};

/**
 * @brief Random environment. gamma = 0 yields a contextual bandit whose
 * transitions ignore the action; otherwise rows are mixed with the uniform
 * distribution so every state stays reachable.
 */
inline EnvSpec generate_env(const EnvOptions& o, std::uint64_t seed) {
  if (o.S <= 0 || o.A <= 0 || o.d <= 0 || o.d_prime <= 0) throw ValidationError("sizes must be positive");
  if (o.psi_equals_phi && o.d != o.d_prime) throw ValidationError("psi = phi needs d = d'");
  Rng rng = Rng(seed).split(1);
  EnvSpec env;
  env.S = o.S;
  env.A = o.A;
  env.gamma = o.gamma;
  env.bandit = o.gamma == 0.0;
  env.seed = seed;
  env.rho = o.uniform_rho ? Vec::Constant(o.S, 1.0 / o.S) : Vec(0.5 * random_simplex(rng, o.S) +
                                                               Vec::Constant(o.S, 0.5 / o.S));
  env.rho /= env.rho.sum();
  env.P.resize(o.S * o.A, o.S);
  for (int s = 0; s < o.S; ++s)
    for (int a = 0; a < o.A; ++a) {
      Vec row = env.bandit ? env.rho : Vec((1.0 - kUniformMix) * random_simplex(rng, o.S) +
                                           Vec::Constant(o.S, kUniformMix / o.S));
      env.P.row(env.row(s, a)) = row.transpose() / row.sum();
    }
  if (env.bandit)
    for (int s = 0; s < o.S; ++s)
      for (int a = 1; a < o.A; ++a) env.P.row(env.row(s, a)) = env.P.row(env.row(s, 0));
  env.phi = random_features(rng, o.S * o.A, o.d);
  env.psi = o.psi_equals_phi ? env.phi : random_features(rng, o.S * o.A, o.d_prime);
  return env;
}

inline std::vector<int> random_actions(Rng& rng, int S, int A) {
  std::vector<int> act(S);
  for (auto& a : act) a = static_cast<int>(rng.index(static_cast<std::uint64_t>(A)));
  return act;
}

inline int sample_from(Rng& rng, const Eigen::Ref<const Vec>& p) {
  double u = rng.uniform(), acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size() - 1);
}

/// Default rollout length for clean-data trajectories in MDPs.
inline constexpr int kRolloutHorizon = 4;

/**
 * @brief Clean preference data: pairs of short uniform-action rollouts from a
 * shared start state, labelled by Bradley-Terry under omega_true.
 *
 * In a bandit each trajectory is a single (s, a); the two actions differ
 * whenever A > 1.
 */
inline PreferenceDataset generate_clean_data(const EnvSpec& env, const Vec& omega_true, int n_bar,
                                             std::uint64_t seed, Space space = Space::phi,
                                             int horizon = kRolloutHorizon) {
  if (n_bar < 0) throw ValidationError("n_bar must be nonnegative");
  const Mat& f = env.features(space);
  if (omega_true.size() != f.cols()) throw ValidationError("labelling parameter has wrong dimension");
  Rng rng = Rng(seed).split(2);
  PreferenceDataset out(Provenance::clean);
  const int steps = env.gamma == 0.0 ? 1 : horizon;
  for (int i = 0; i < n_bar; ++i) {
    int s0 = sample_from(rng, env.rho);
    Vec feats[2];
    int first_a = -1;
    for (int k = 0; k < 2; ++k) {
      feats[k] = Vec::Zero(f.cols());
      int s = s0;
      double disc = 1.0;
      for (int t = 0; t < steps; ++t) {
        int a;
        if (t == 0 && k == 1 && env.A > 1) {
          a = static_cast<int>(rng.index(static_cast<std::uint64_t>(env.A - 1)));
          if (a >= first_a) ++a;
        } else {
          a = static_cast<int>(rng.index(static_cast<std::uint64_t>(env.A)));
        }
        if (t == 0 && k == 0) first_a = a;
        feats[k] += disc * f.row(env.row(s, a)).transpose();
        disc *= env.gamma;
        s = sample_from(rng, env.P.row(env.row(s, a)).transpose());
      }
    }
    out.push_back(bt_sample(omega_true, feats[0], feats[1], rng, space));
  }
  return out;
}

}  // namespace pplab
