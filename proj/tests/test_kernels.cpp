#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pplab/generate.hpp"
#include "pplab/kernels.hpp"
#include "pplab/learners.hpp"
#include "pplab/oracles.hpp"

using namespace pplab;

namespace {

// Reference values computed at 40 digits with an arbitrary-precision library.
constexpr double kXiMaxRef = 0.278464542761073795;
constexpr double kXStarRef = 1.278464542761073795;
constexpr double kXiInvQuarterRef = 0.814526618196084790;
constexpr double kXi1PointNineRef = 0.660581486265898959;

}  // namespace

TEST(Constants, XiMaxFrozen) {
  EXPECT_NEAR(xi_max(), kXiMaxRef, 1e-15);
  EXPECT_NEAR(x_star(), kXStarRef, 1e-15);
  EXPECT_LT(xi_max(), 0.3);
}

TEST(Constants, XiMaxMatchesBisection) {
  EXPECT_NEAR(x_star(), oracle::bisect_x_star(), 1e-12);
  EXPECT_NEAR(xi_max(), oracle::bisect_xi_max(), 1e-12);
}

TEST(Constants, XiMaxIsTheMaximum) {
  for (double x = -5.0; x <= 10.0; x += 1e-3) EXPECT_LE(xi(x), xi_max() + 1e-16) << x;
  EXPECT_NEAR(xi(x_star()), xi_max(), 1e-16);
}

TEST(LambertW, KnownValues) {
  EXPECT_NEAR(lambert_w(std::numbers::e), 1.0, 1e-15);
  EXPECT_EQ(lambert_w(0.0), 0.0);
  EXPECT_NEAR(lambert_w(-1.0 / std::numbers::e), -1.0, 1e-12);
  EXPECT_NEAR(lambert_w(1.0 / std::numbers::e), kXiMaxRef, 1e-15);
}

TEST(LambertW, ResidualOnGrid) {
  for (int i = 0; i <= 2000; ++i) {
    double x = -1.0 / std::numbers::e + 1e-9 + i * 0.01;
    double w = lambert_w(x);
    EXPECT_LT(std::abs(w * std::exp(w) - x), 1e-13 * std::max(1.0, std::abs(x))) << x;
    EXPECT_GE(w, -1.0);
  }
}

TEST(LambertW, AgreesWithBisection) {
  for (double x : {-0.3, -0.1, 0.05, 0.5, 2.0, 7.0}) EXPECT_NEAR(lambert_w(x), oracle::bisect_lambert_w(x), 1e-12);
}

TEST(LambertW, RejectsBelowBranchPoint) { EXPECT_THROW(lambert_w(-0.5), ValidationError); }

TEST(XiInverse, FrozenValue) { EXPECT_NEAR(xi_inverse(0.25), kXiInvQuarterRef, 1e-14); }

TEST(XiInverse, EdgeCases) {
  EXPECT_EQ(xi_inverse(0.0), 0.0);
  EXPECT_DOUBLE_EQ(xi_inverse(xi_max()), x_star());
  EXPECT_THROW(xi_inverse(0.3), InfeasibleError);
  EXPECT_THROW(xi_inverse(std::nan("")), ValidationError);
}

TEST(XiInverse, NegativeArguments) {
  for (double a : {-0.01, -0.5, -3.0, -20.0}) {
    double x = xi_inverse(a);
    EXPECT_LT(x, 0.0);
    EXPECT_NEAR(xi(x), a, 1e-12 * (1 + std::abs(a)));
  }
}

TEST(XiInverse, RoundTripOnBranch) {
  for (int i = 0; i < 1000; ++i) {
    double x = -10.0 + (x_star() + 10.0) * i / 999.0;
    EXPECT_NEAR(xi_inverse(xi(x)), x, 1e-10) << x;
  }
}

TEST(XiInverse, AgreesWithBisection) {
  for (double a : {-2.0, -0.2, 0.01, 0.1, 0.2, 0.27}) EXPECT_NEAR(xi_inverse(a), oracle::bisect_xi_inverse(a), 1e-10);
}

TEST(XiInverse, MonotoneInArgument) {
  double prev = -1e300;
  for (double a = -1.0; a < xi_max(); a += 1e-3) {
    double x = xi_inverse(a);
    EXPECT_GT(x, prev);
    prev = x;
  }
}

TEST(Xi1, FrozenValueAndCount) {
  EXPECT_EQ(ceil_count(0.9, xi_max()), 4);
  EXPECT_NEAR(xi1(0.9), kXi1PointNineRef, 1e-14);
  EXPECT_EQ(xi1(0.0), 0.0);
}

TEST(Xi1, SplitsWeightEvenly) {
  for (double a : {0.05, 0.2784, 0.5, 3.0, 17.3}) {
    auto n = ceil_count(a, xi_max());
    EXPECT_NEAR(n * xi(xi1(a)), a, 1e-12 * (1 + a));
  }
}

TEST(Xi2, MirroredHalvesCarryTheWeight) {
  for (double a : {0.05, 0.4, 1.0, 6.0}) {
    auto half = ceil_count(a, 2.0 * xi_max());
    EXPECT_NEAR(2.0 * half * xi(xi2(a)), a, 1e-12 * (1 + a));
  }
  EXPECT_EQ(xi2(0.0), 0.0);
}

TEST(CeilCount, ExactMultiplesAndOverflow) {
  EXPECT_EQ(ceil_count(2.0 * xi_max(), xi_max()), 2);
  EXPECT_EQ(ceil_count(-0.9, xi_max()), 4);
  EXPECT_EQ(ceil_count(0.0, xi_max()), 0);
  EXPECT_THROW(ceil_count(1e300, xi_max()), InfeasibleError);
}

TEST(TeachLogistic, ZeroTargetNeedsNothing) {
  auto t = teach_logistic(Vec::Zero(3), 1.0);
  EXPECT_EQ(t.count, 0);
  EXPECT_TRUE(t.materialize().empty());
}

TEST(TeachLogistic, UnitTargetUsesFourSamples) {
  Vec w = Vec::Zero(2);
  w(0) = 1.0;
  auto t = teach_logistic(w, 1.0);
  EXPECT_EQ(t.count, 4);
  LearnerConfig cfg;
  EXPECT_NEAR((fit_reward_mle(t.materialize(), 2, cfg) - w).norm(), 0.0, 1e-8);
}

TEST(TeachLogistic, ExactnessOverRandomTargets) {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    int d = 1 + static_cast<int>(rng.index(6));
    double lambda = std::pow(10.0, rng.uniform(-1.0, 1.0));
    Vec w = random_gaussian(rng, d, rng.uniform(0.1, 3.0));
    auto t = teach_logistic(w, lambda);
    EXPECT_EQ(t.count, static_cast<std::int64_t>(std::ceil(lambda * w.squaredNorm() / kXiMaxRef)));
    LearnerConfig cfg{lambda};
    Vec fit = fit_reward_mle(t.materialize(), d, cfg);
    EXPECT_LE((fit - w).norm(), 1e-8 * (1 + w.norm()));
  }
}

TEST(TeachLogistic, MinimalityNoSmallerSetReachesTarget) {
  // With n identical samples the stationarity weight n * xi(x) is capped by n * xi_max.
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Vec w = random_gaussian(rng, 3);
    double lambda = 1.0;
    auto t = teach_logistic(w, lambda);
    if (t.count <= 1) continue;
    EXPECT_GT(lambda * w.squaredNorm(), (t.count - 1) * xi_max());
  }
}

TEST(TeachLogisticAugment, ReachesTargetFromCleanData) {
  Rng rng(31);
  EnvOptions o;
  o.gamma = 0.0;
  auto env = generate_env(o, 5);
  for (int trial = 0; trial < 10; ++trial) {
    auto clean = generate_clean_data(env, random_gaussian(rng, 4), 15, 100 + trial);
    Vec target = random_gaussian(rng, 4, 2.0);
    auto t = teach_logistic_augment(target, clean, 1.0);
    Vec fit = fit_reward_mle(merge(clean, t.materialize()), 4, LearnerConfig{});
    EXPECT_LE((fit - target).norm(), 1e-7 * (1 + target.norm()));
  }
}

TEST(TeachLogisticAugment, EmptyDataMatchesPlainTeaching) {
  Vec w(3);
  w << 0.3, -1.2, 0.8;
  auto a = teach_logistic_augment(w, PreferenceDataset{}, 2.0);
  auto b = teach_logistic(w, 2.0);
  EXPECT_EQ(a.count, b.count);
  EXPECT_NEAR((a.sample.z - b.sample.z).norm(), 0.0, 1e-14);
}

TEST(TeachDpo, EqualParametersNeedNothing) {
  Vec t = Vec::Ones(3);
  EXPECT_EQ(teach_dpo(t, t, PreferenceDataset{}, 1.0, 1.0).count, 0);
}

TEST(TeachDpo, EvenCountAndExactFit) {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    Vec mu = random_gaussian(rng, 4), target = random_gaussian(rng, 4);
    double beta = rng.uniform(0.2, 2.0), lambda = rng.uniform(0.2, 3.0);
    auto t = teach_dpo(target, mu, PreferenceDataset{}, beta, lambda);
    EXPECT_EQ(t.count % 2, 0);
    LearnerConfig cfg{lambda, beta};
    Vec fit = fit_dpo(t.materialize(), mu, cfg);
    EXPECT_LE((fit - target).norm(), 1e-8 * (1 + target.norm()));
  }
}

TEST(ProjectPolytope, FeasiblePointUnchanged) {
  Mat M = Mat::Identity(2, 2);
  Vec w(2);
  w << 1.0, 2.0;
  EXPECT_EQ(project_polytope(w, M, 0.5), w);
}

TEST(ProjectPolytope, ActivatesEveryConstraint) {
  Mat M = Mat::Identity(3, 3);
  Vec w = Vec::Zero(3);
  Vec p = project_polytope(w, M, 0.2);
  EXPECT_NEAR((p - Vec::Constant(3, 0.2)).norm(), 0.0, 1e-14);
}

TEST(ProjectPolytope, AgreesWithDualOracleWhenAllConstraintsBind) {
  Rng rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    Mat M(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = rng.normal();
    // Start from a point that violates every constraint.
    Vec w = -M * Vec::Ones(3);
    Vec p = project_polytope(w, M, 0.1);
    Vec q = oracle::pgd_projection(w, oracle::PolytopeSet{M, 0.1});
    if (((M.transpose() * q).array() > 0.1 + 1e-6).any()) continue;  // oracle found a looser optimum
    EXPECT_NEAR((p - q).norm(), 0.0, 1e-6);
  }
}

TEST(ProjectPolytope, Errors) {
  EXPECT_THROW(project_polytope(Vec::Zero(2), Mat::Zero(2, 1), 0.1), InfeasibleError);
  EXPECT_THROW(project_polytope(Vec::Zero(2), Mat::Identity(2, 2), 0.0), ValidationError);
  Mat M(1, 2);
  M << 1.0, -1.0;
  EXPECT_THROW(project_polytope(Vec::Zero(1), M, 0.1), InfeasibleError);
}

TEST(ProjectBall, InsideAndOutside) {
  Vec c = Vec::Zero(2);
  Vec in(2), out(2);
  in << 0.1, 0.1;
  out << 3.0, 4.0;
  EXPECT_EQ(project_ball(in, c, 0.25), in);
  Vec p = project_ball(out, c, 0.25);
  EXPECT_NEAR(p.norm(), 0.5, 1e-15);
  EXPECT_NEAR((p - oracle::pgd_projection(out, oracle::BallSet{c, 0.25})).norm(), 0.0, 1e-9);
}

TEST(GammaCondition, Threshold) {
  double w = (xi_max() + 1.0) * 0.05;
  EXPECT_TRUE(gamma_condition(0.9, w + 1e-12));
  EXPECT_FALSE(gamma_condition(0.9, w * 0.99));
  PreferenceSample s{Vec::Constant(2, 1.0), 1, Space::phi};
  EXPECT_TRUE(check_feature_feasibility(s, 0.9, Vec::Constant(2, 1.0)));
  s.z = Vec::Constant(2, 100.0);
  EXPECT_FALSE(check_feature_feasibility(s, 0.9, Vec::Constant(2, 1.0)));
}
