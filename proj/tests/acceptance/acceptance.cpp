// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "pplab/harness.hpp"

using namespace pplab;
namespace fs = std::filesystem;

namespace {

// Independent reference for the per-sample cap: bisection on the derivative.
const double kXiMaxRef = oracle::bisect_xi_max();
const double kRegEpsFactor = 0.99 / (2.0 * std::numbers::ln2);

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> body;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome teaching_exactness() {
  Outcome o;
  const int ds[] = {2, 4, 8};
  const double lambdas[] = {0.1, 1.0, 10.0};
  Rng rng(101);
  double worst = 0.0;
  int count_mismatch = 0;
  for (int i = 0; i < 50; ++i) {
    int d = ds[i % 3];
    double lambda = lambdas[(i / 3) % 3];
    Vec w = random_gaussian(rng, d, rng.uniform(0.2, 3.0));
    TeachingSet ts = teach_logistic(w, lambda);
    Vec fit = fit_reward_mle(ts.materialize(), d, LearnerConfig{lambda});
    worst = std::max(worst, (fit - w).norm() / (1.0 + w.norm()));
    auto expect = static_cast<std::int64_t>(std::ceil(lambda * w.squaredNorm() / kXiMaxRef));
    count_mismatch += ts.count != expect;
  }
  o.pass = worst <= 1e-6 && count_mismatch == 0;
  o.detail = "50 targets, max relative error " + fmt("%.2e", worst) + ", count mismatches " +
             std::to_string(count_mismatch);
  return o;
}

Outcome unregularized_attack() {
  Outcome o;
  LearnerConfig cfg;
  static constexpr int shapes[][2] = {{2, 2}, {3, 2}, {4, 2}, {2, 3}, {3, 3}};
  int failures = 0, checked = 0;
  double worst_slack = 1e300;
  for (int i = 0; i < 30; ++i) {
    std::uint64_t seed = 5000 + static_cast<std::uint64_t>(i);
    Rng rng(seed);
    int S = shapes[i % 5][0], A = shapes[i % 5][1], k = S * (A - 1);
    int d = k + static_cast<int>(rng.index(static_cast<std::uint64_t>(6 - k + 1)));
    int n_bar = i % 2 ? 20 : 0;
    double gamma = i % 3 == 0 ? 0.0 : 0.9;
    UnregInstance in = make_unreg_instance(seed, S, A, d, gamma, n_bar, 0.1, cfg);
    AttackReport r = attack_rlhf_unreg(in.env, in.target, in.clean, in.eps_p, cfg);
    Mat M = build_M_matrix(in.env, in.target);
    double slack = (M.transpose() * r.retrained_param).minCoeff() - in.eps_p;
    worst_slack = std::min(worst_slack, slack);
    bool ok = r.feasible && solve_unregularized(in.env, r.retrained_param).actions() == in.target.actions() &&
              slack >= -1e-8 &&
              oracle::exhaustive_policy_check(in.env, r.retrained_param, in.target.actions(), in.eps_p).passed &&
              static_cast<double>(r.count_actual) <= std::ceil(r.bound_upper);
    failures += !ok;
    ++checked;
  }
  o.pass = failures == 0;
  o.detail = std::to_string(checked) + " instances, failures " + std::to_string(failures) + ", min margin slack " +
             fmt("%.2e", worst_slack);
  return o;
}

Outcome regularized_attack() {
  Outcome o;
  int failures = 0;
  double worst_kl = 0.0, worst_l1 = 0.0;
  const double eps = 0.1, eps_p = eps * kRegEpsFactor;
  for (int i = 0; i < 30; ++i) {
    int n_bar = i % 2 ? 20 : 0;
    int S = 2 + i % 3, A = 2 + (i / 3) % 2;
    LoglinearInstance in = make_bandit_instance(7000 + static_cast<std::uint64_t>(i), S, A, 4, n_bar, 0);
    LearnerConfig cfg{0.5 + 0.5 * (i % 3), 0.5 + 0.5 * (i % 2)};
    AttackReport r = attack_rlhf_reg(in.env, Policy::loglinear(in.env, in.theta_t),
                                     Policy::loglinear(in.env, in.theta_mu), eps_p, eps, in.clean_phi, cfg);
    worst_kl = std::max(worst_kl, r.achieved_kl);
    worst_l1 = std::max(worst_l1, r.achieved_l1);
    bool ok = r.achieved_kl <= eps_p + 1e-8 && r.achieved_l1 <= eps;
    if (n_bar == 0)
      ok = ok && r.count_actual ==
                     static_cast<std::int64_t>(std::ceil(cfg.lambda * r.target_param.squaredNorm() / kXiMaxRef));
    failures += !ok;
  }
  o.pass = failures == 0;
  o.detail = "30 bandits, failures " + std::to_string(failures) + ", max KL " + fmt("%.2e", worst_kl) +
             ", max l1 " + fmt("%.2e", worst_l1);
  return o;
}

Outcome dpo_empty() {
  Outcome o;
  int failures = 0, tested = 0;
  double worst = -1e300;
  Rng rng(303);
  while (tested < 30) {
    int S = 2 + static_cast<int>(rng.index(3)), A = 2 + static_cast<int>(rng.index(2));
    EnvSpec env = generate_env(EnvOptions{S, A, 4, 4, 0.0, true, false}, rng());
    Vec t = random_gaussian(rng, 4), mu = random_gaussian(rng, 4);
    double eps_p = rng.uniform(0.005, 0.05);
    double dn = (t - mu).norm();
    if (dn <= std::sqrt(eps_p)) continue;
    ++tested;
    double lambda = rng.uniform(0.5, 2.0);
    AttackReport r = attack_dpo(env, t, mu, eps_p, 0.1, PreferenceDataset{}, LearnerConfig{lambda, 1.0});
    double gap = dn - std::sqrt(eps_p);
    double expect = 2.0 * std::ceil(lambda / (2.0 * kXiMaxRef) * gap * gap);
    double dist = (r.retrained_param - t).norm();
    worst = std::max(worst, dist - std::sqrt(eps_p));
    auto n = static_cast<double>(r.count_actual);
    bool ok = r.bound_lower == expect && r.bound_upper == expect && n >= r.bound_lower && n <= r.bound_upper &&
              dist <= std::sqrt(eps_p) + 1e-8;
    failures += !ok;
  }
  o.pass = failures == 0;
  o.detail = "30 draws, failures " + std::to_string(failures) + ", max (|theta_hat - theta_t| - radius) " +
             fmt("%.2e", worst);
  return o;
}

Outcome dpo_augment() {
  Outcome o;
  int failures = 0, nonvacuous = 0;
  double worst_foc = 0.0;
  const double eps = 0.1;
  for (int i = 0; i < 30; ++i) {
    int n_bar = i % 2 ? 5 : 20;
    LoglinearInstance in = make_bandit_instance(9000 + static_cast<std::uint64_t>(i), 2 + i % 3, 2 + (i / 3) % 2, 4,
                                                0, n_bar, 1.0 + (i % 4));
    double eps_p = 0.5 * eps * (0.2 + 0.8 * (i % 5) / 4.0);
    LearnerConfig cfg{0.5 + 0.5 * (i % 3), 0.5 + 0.5 * (i % 2)};
    AttackReport r = attack_dpo(in.env, in.theta_t, in.theta_mu, eps_p, eps, in.clean_psi, cfg);
    double foc = r.diagnostics.at("first_order_residual");
    worst_foc = std::max(worst_foc, foc);
    auto n = static_cast<double>(r.count_actual);
    bool ok = (r.retrained_param - in.theta_t).norm() <= std::sqrt(eps_p) + 1e-8 && foc < 1e-9 &&
              n <= std::ceil(r.bound_upper);
    if (r.bound_lower > 0) {
      ++nonvacuous;
      ok = ok && n >= r.bound_lower;
    }
    failures += !ok;
  }
  o.pass = failures == 0;
  o.detail = "30 instances, failures " + std::to_string(failures) + ", non-vacuous lower bounds " +
             std::to_string(nonvacuous) + ", max first-order residual " + fmt("%.2e", worst_foc);
  return o;
}

Outcome kernel_numerics() {
  Outcome o;
  double rt = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double x = -10.0 + (x_star() + 10.0) * i / 999.0;
    rt = std::max(rt, std::abs(xi_inverse(xi(x)) - x));
  }
  double wres = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    double x = -1.0 / std::numbers::e + 1e-9 + i * 0.02;
    double w = lambert_w(x);
    wres = std::max(wres, std::abs(w * std::exp(w) - x) / std::max(1.0, std::abs(x)));
  }
  double xi_gap = std::abs(xi_max() - kXiMaxRef);
  Rng rng(606);
  double grad_rel = 0.0;
  for (int i = 0; i < 100; ++i) {
    int d = 2 + static_cast<int>(rng.index(5));
    PreferenceDataset data, psi_data;
    for (int k = 0; k < 8; ++k) {
      Vec z = random_gaussian(rng, d, 0.6);
      int lab = rng.bernoulli(0.5) ? 1 : -1;
      data.push_back(PreferenceSample{z, lab, Space::phi});
      psi_data.push_back(PreferenceSample{z, lab, Space::psi});
    }
    Vec x = random_gaussian(rng, d), mu = random_gaussian(rng, d);
    double lambda = rng.uniform(0.1, 3.0), beta = rng.uniform(0.2, 2.0);
    auto rel = [](const Vec& a, const Vec& b) { return (a - b).norm() / std::max(1e-12, b.norm()); };
    Vec fd_r = oracle::finite_diff_gradient([&](const Vec& v) { return rlhf_loss(v, data, lambda); }, x);
    Vec fd_d = oracle::finite_diff_gradient([&](const Vec& v) { return dpo_loss(v, psi_data, beta, lambda, mu); }, x);
    grad_rel = std::max({grad_rel, rel(rlhf_gradient(x, data, lambda), fd_r),
                         rel(dpo_gradient(x, psi_data, beta, lambda, mu), fd_d)});
  }
  o.pass = rt < 1e-10 && wres < 1e-13 && xi_max() < 0.3 && xi_gap < 1e-12 && grad_rel <= 1e-6;
  o.detail = "round trip " + fmt("%.2e", rt) + ", W residual " + fmt("%.2e", wres) + ", xi_max gap " +
             fmt("%.2e", xi_gap) + ", gradient rel err " + fmt("%.2e", grad_rel);
  return o;
}

Outcome divergence_inequalities() {
  Outcome o;
  Rng rng(707);
  int pinsker_fail = 0, lipschitz_fail = 0;
  double worst_p = 0.0, worst_l = 0.0;
  for (int i = 0; i < 1000; ++i) {
    int S = 1 + static_cast<int>(rng.index(4)), A = 2 + static_cast<int>(rng.index(4));
    Mat p(S, A), q(S, A);
    for (int s = 0; s < S; ++s) {
      p.row(s) = random_simplex(rng, A).transpose();
      q.row(s) = random_simplex(rng, A).transpose();
    }
    Vec rho = random_simplex(rng, S);
    double l1 = policy_l1_distance(Policy::tabular(p), Policy::tabular(q), rho);
    double kl_bits = kl_divergence(Policy::tabular(p), Policy::tabular(q), rho) / std::numbers::ln2;
    double rhs = 2.0 * std::numbers::ln2 * kl_bits;
    worst_p = std::max(worst_p, l1 * l1 / rhs);
    pinsker_fail += l1 * l1 > rhs * (1.0 + 1e-12);
  }
  for (int i = 0; i < 1000; ++i) {
    int S = 1 + static_cast<int>(rng.index(4)), A = 2 + static_cast<int>(rng.index(4));
    int dp = 1 + static_cast<int>(rng.index(6));
    EnvSpec env = generate_env(EnvOptions{S, A, dp, dp, 0.0, false, false}, rng());
    Vec a = random_gaussian(rng, dp, 2.0), b = random_gaussian(rng, dp, 2.0);
    double l1 = policy_l1_distance(Policy::loglinear(env, a), Policy::loglinear(env, b), env.rho);
    double rhs = 2.0 * (a - b).norm();
    worst_l = std::max(worst_l, l1 / rhs);
    lipschitz_fail += l1 > rhs;
  }
  o.pass = pinsker_fail == 0 && lipschitz_fail == 0;
  o.detail = "Pinsker (KL in bits) worst ratio " + fmt("%.3f", worst_p) + ", Lipschitz worst ratio " +
             fmt("%.3f", worst_l) + ", failures " + std::to_string(pinsker_fail + lipschitz_fail);
  return o;
}

Outcome comparison() {
  Outcome o;
  int nonfinite = 0, violated = 0, vacuous = 0;
  const double eps = 0.1;
  for (int i = 0; i < 20; ++i) {
    int n_phi = i % 2 ? 20 : 0, n_psi = i % 4 >= 2 ? 5 : 0;
    LoglinearInstance in = make_bandit_instance(11000 + static_cast<std::uint64_t>(i), 2 + i % 3, 2 + (i / 3) % 2, 4,
                                                n_phi, n_psi, 1.0 + 0.5 * (i % 3));
    CompareReport c = compare_paradigms(in.env, in.theta_t, in.theta_mu, in.clean_phi, in.clean_psi, eps,
                                        eps * kRegEpsFactor, eps / 2, LearnerConfig{}, 11000 + i);
    if (c.sheet.kappa1_vacuous) {
      ++vacuous;
      // NaN is only legitimate when the RLHF expression is zero.
      if (std::isnan(c.sheet.kappa1) && c.sheet.n_hat_rlhf_upper > 0) ++nonfinite;
    } else {
      if (!std::isfinite(c.sheet.kappa1)) ++nonfinite;
      if (!c.bound_inequality_holds) ++violated;
    }
  }
  o.pass = nonfinite == 0 && violated == 0;
  o.detail = "20 bandits, vacuous (flagged) " + std::to_string(vacuous) + ", violations " + std::to_string(violated) +
             ", non-finite " + std::to_string(nonfinite);
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  Outcome o;
  fs::path root = fs::temp_directory_path() / ("pplab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::string> runs = {
      "--mode gen-env --S 3 --A 2 --d 4 --seed 7",
      "--mode attack-rlhf-unreg --seed 11 --trials 4 --nbar 20",
      "--mode attack-rlhf-reg --seed 12 --trials 4 --nbar 10",
      "--mode attack-dpo --seed 13 --trials 4 --nbar 5",
      "--mode compare --seed 14 --trials 4 --nbar 10",
      "--mode sweep --sweep-attack attack-dpo --seed 15 --trials 3",
      "--mode verify --seed 16 --trials 5",
  };
  int mismatched = 0, files = 0, bad_exit = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    fs::path a = root / (std::to_string(i) + "a"), b = root / (std::to_string(i) + "b");
    for (const fs::path& dir : {a, b}) {
      std::string cmd = std::string(PPLAB_CLI_PATH) + " " + runs[i] + " --out " + dir.string() + " 2>/dev/null";
      int rc = std::system(cmd.c_str());
      if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) ++bad_exit;
    }
    for (const auto& entry : fs::directory_iterator(a)) {
      ++files;
      fs::path other = b / entry.path().filename();
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) ++mismatched;
    }
  }
  fs::remove_all(root);
  o.pass = mismatched == 0 && bad_exit == 0 && files > 0;
  o.detail = std::to_string(runs.size()) + " runs, " + std::to_string(files) + " files compared, mismatches " +
             std::to_string(mismatched) + ", nonzero exits " + std::to_string(bad_exit);
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "teaching-set exactness", 10, teaching_exactness},
      {2, "unregularized RLHF attack", 60, unregularized_attack},
      {3, "regularized RLHF attack", 60, regularized_attack},
      {4, "DPO attack without clean data", 30, dpo_empty},
      {5, "DPO augmentation attack", 60, dpo_augment},
      {6, "kernel numerics", 1e300, kernel_numerics},
      {7, "divergence inequalities", 1e300, divergence_inequalities},
      {8, "paradigm comparison", 1e300, comparison},
      {9, "determinism", 1e300, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool in_time = secs < c.budget_s;
    bool pass = o.pass && in_time;
    failed += !pass;
    std::string budget = c.budget_s < 1e299 ? " (limit " + fmt("%.0f", c.budget_s) + " s)" : "";
    std::printf("%s criterion %d: %s: %s; %.3f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs, (in_time ? budget : budget + " TIME EXCEEDED").c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
