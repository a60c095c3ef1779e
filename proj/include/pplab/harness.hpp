#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "pplab/attacks.hpp"
#include "pplab/bounds.hpp"
#include "pplab/generate.hpp"
#include "pplab/io.hpp"
#include "pplab/oracles.hpp"

namespace pplab {

/// Process exit statuses.
enum ExitCode : int { kOk = 0, kValidation = 1, kInfeasible = 2, kVerification = 3 };

struct ExperimentConfig {
  std::string mode;
  std::string env_path;
  std::string data_path;
  std::string out_path;
  int S = 3;
  int A = 2;
  int d = 4;
  int d_prime = 4;
  std::optional<double> gamma;
  double beta = 1.0;
  double lambda = 1.0;
  double epsilon = 0.1;
  std::optional<double> epsilon_prime;
  int n_bar = 0;
  std::optional<std::uint64_t> seed;
  int trials = 1;
  /// gen-data only: which feature map the clean pairs use.
  std::string space = "phi";
  /// sweep only.
  std::string sweep_attack = "attack-dpo";
  std::vector<double> eps_grid;
  bool timing = false;
};

inline const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> m = {"gen-env", "gen-data", "attack-rlhf-unreg", "attack-rlhf-reg",
                                             "attack-dpo", "compare", "sweep", "verify"};
  return m;
}

inline bool is_attack_mode(const std::string& m) {
  return m == "attack-rlhf-unreg" || m == "attack-rlhf-reg" || m == "attack-dpo";
}

/// Discount used for generated environments when none is given.
inline double default_gamma(const std::string& mode, const std::string& sweep_attack) {
  const std::string& m = mode == "sweep" ? sweep_attack : mode;
  return m == "attack-rlhf-unreg" || m == "gen-env" || m == "gen-data" ? 0.9 : 0.0;
}

inline double default_epsilon_prime(const std::string& mode, double eps) {
  if (mode == "attack-rlhf-reg") return eps / (2.0 * std::numbers::ln2) * 0.99;
  if (mode == "attack-dpo") return eps / 2.0;
  return eps;
}

inline void validate(const ExperimentConfig& c) {
  const auto& modes = known_modes();
  if (std::find(modes.begin(), modes.end(), c.mode) == modes.end())
    throw ValidationError("unknown mode '" + c.mode + "'");
  if (c.out_path.empty()) throw ValidationError("--out is required");
  if (c.S <= 0 || c.A <= 0 || c.d <= 0 || c.d_prime <= 0) throw ValidationError("sizes must be positive");
  if (c.gamma && !(*c.gamma >= 0 && *c.gamma < 1)) throw ValidationError("--gamma must lie in [0, 1)");
  if (!(c.lambda > 0)) throw ValidationError("--lambda must be positive");
  if (!(c.beta > 0)) throw ValidationError("--beta must be positive");
  if (!(c.epsilon > 0)) throw ValidationError("--epsilon must be positive");
  if (c.epsilon_prime && !(*c.epsilon_prime > 0)) throw ValidationError("--epsilon-prime must be positive");
  if (c.n_bar < 0) throw ValidationError("--nbar must be nonnegative");
  if (c.trials <= 0) throw ValidationError("--trials must be positive");
  if (c.space != "phi" && c.space != "psi") throw ValidationError("--space must be phi or psi");
  bool generates = c.mode == "gen-env" || c.mode == "gen-data" || c.env_path.empty() || c.mode == "verify";
  if (generates && !c.seed) throw ValidationError("--seed is required when generating instances");
  if (c.mode == "gen-data" && c.env_path.empty()) throw ValidationError("gen-data needs --env");
  if (c.mode == "sweep") {
    if (!is_attack_mode(c.sweep_attack)) throw ValidationError("--sweep-attack must name an attack mode");
    for (double e : c.eps_grid)
      if (!(e > 0)) throw ValidationError("--eps-grid entries must be positive");
  }
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

/// git blob id: SHA-1 of "blob <size>\0" followed by the content.
inline std::string git_blob_hash(const std::string& content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data += content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("PPLAB_THREADS")) {
    int v = std::atoi(cap);
    if (v > 0) n = std::min(n, static_cast<unsigned>(v));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/**
 * @brief Evaluate fn(0..n-1) on a pool; results are returned in index order.
 * An exception from any job is rethrown after the pool drains (lowest index first).
 */
template <class Result>
std::vector<Result> parallel_map(std::size_t n, const std::function<Result(std::size_t)>& fn) {
  std::vector<Result> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  unsigned workers = worker_count(n);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Instance builders shared by the CLI and the test matrices
// ---------------------------------------------------------------------------

/// Stream of randomness for one trial of one run.
inline Rng trial_rng(std::uint64_t seed, std::size_t trial, std::uint64_t purpose) {
  return Rng(seed).split(1000003ULL * (trial + 1) + purpose);
}

struct UnregInstance {
  EnvSpec env;
  Policy target;
  PreferenceDataset clean;
  double eps_p = 0.1;
};

/**
 * @brief Smallest eps_p = eps_base * 2^k (k >= 0) for which the discount
 * condition holds at the projected target reward.
 */
inline double feasible_margin(const EnvSpec& env, const Policy& target, const PreferenceDataset& clean,
                              double eps_base, const LearnerConfig& cfg) {
  Mat M = build_M_matrix(env, target);
  Vec omega_bar = fit_reward_mle(clean, env.d(), cfg);
  double eps = eps_base;
  for (int k = 0; k < 60; ++k, eps *= 2.0) {
    Vec omega_t = project_polytope(omega_bar, M, eps);
    if (gamma_condition(env.gamma, omega_t.norm())) return eps;
  }
  throw InfeasibleError("no margin satisfies the discount condition");
}

/**
 * @brief Random unregularized-RLHF instance with d >= S(A-1), so the margin
 * system is consistent, and a margin that satisfies the discount condition.
 */
inline UnregInstance make_unreg_instance(std::uint64_t seed, int S, int A, int d, double gamma, int n_bar,
                                         double eps_base, const LearnerConfig& cfg) {
  EnvOptions o{S, A, d, d, gamma, false, false};
  Rng rng = Rng(seed).split(7);
  UnregInstance in{generate_env(o, seed), Policy::deterministic(random_actions(rng, S, A), A), {}, eps_base};
  in.clean = generate_clean_data(in.env, random_gaussian(rng, d), n_bar, mix64(seed + 11));
  in.eps_p = feasible_margin(in.env, in.target, in.clean, eps_base, cfg);
  return in;
}

struct LoglinearInstance {
  EnvSpec env;
  Vec theta_t;
  Vec theta_mu;
  PreferenceDataset clean_phi;
  PreferenceDataset clean_psi;
};

/// Random bandit with psi = phi and loglinear target/reference parameters.
inline LoglinearInstance make_bandit_instance(std::uint64_t seed, int S, int A, int d, int n_bar_phi, int n_bar_psi,
                                              double theta_scale = 1.0) {
  EnvOptions o{S, A, d, d, 0.0, true, false};
  Rng rng = Rng(seed).split(9);
  LoglinearInstance in;
  in.env = generate_env(o, seed);
  in.theta_t = random_gaussian(rng, d, theta_scale);
  in.theta_mu = random_gaussian(rng, d, theta_scale);
  Vec omega_true = random_gaussian(rng, d);
  in.clean_phi = generate_clean_data(in.env, omega_true, n_bar_phi, mix64(seed + 21), Space::phi);
  in.clean_psi = generate_clean_data(in.env, omega_true, n_bar_psi, mix64(seed + 22), Space::psi);
  return in;
}

// ---------------------------------------------------------------------------
// run()
// ---------------------------------------------------------------------------

namespace detail {

struct TrialResult {
  io::json record;
  std::vector<io::CsvRow> rows;
  int status = kOk;
};

inline io::CsvRow csv_row(const ExperimentConfig& c, const EnvSpec& env, std::size_t trial, const AttackReport& r,
                          double eps_p, std::int64_t n_bar, double kappa1 = kNaN) {
  io::CsvRow row;
  row.trial = static_cast<int>(trial);
  row.mode = r.mode;
  row.S = env.S;
  row.A = env.A;
  row.d = env.d();
  row.d_prime = env.d_prime();
  row.gamma = env.gamma;
  row.beta = c.beta;
  row.lambda = c.lambda;
  row.epsilon = c.epsilon;
  row.epsilon_prime = eps_p;
  row.n_bar = n_bar;
  row.count_actual = r.count_actual;
  row.bound_upper = r.bound_upper;
  row.bound_lower = r.bound_lower;
  row.achieved_l1 = r.achieved_l1;
  row.achieved_kl = r.achieved_kl;
  row.kappa1 = kappa1;
  return row;
}

inline io::json error_record(std::size_t trial, const std::string& kind, const std::string& what) {
  return io::json{{"trial", trial}, {"error", kind}, {"message", what}};
}

/// Runs `body`, converting infeasibility into a recorded trial outcome.
inline TrialResult guarded(std::size_t trial, const std::function<TrialResult()>& body) {
  try {
    return body();
  } catch (const InfeasibleError& e) {
    return {error_record(trial, "infeasible", e.what()), {}, kInfeasible};
  } catch (const VerificationError& e) {
    return {error_record(trial, "verification", e.what()), {}, kVerification};
  } catch (const ConvergenceError& e) {
    return {error_record(trial, "verification", e.what()), {}, kVerification};
  }
}

struct Setup {
  const ExperimentConfig& cfg;
  std::optional<EnvSpec> env;
  std::optional<PreferenceDataset> data;
  LearnerConfig learner;
};

inline EnvSpec trial_env(const Setup& st, std::size_t trial, bool psi_equals_phi) {
  if (st.env) return *st.env;
  const auto& c = st.cfg;
  EnvOptions o{c.S, c.A, c.d, psi_equals_phi ? c.d : c.d_prime,
               c.gamma.value_or(default_gamma(c.mode, c.sweep_attack)), psi_equals_phi, false};
  return generate_env(o, mix64(*c.seed ^ (0x9e37ULL * (trial + 1))));
}

inline PreferenceDataset trial_data(const Setup& st, const EnvSpec& env, std::size_t trial, Space space) {
  if (st.data) return *st.data;
  Rng rng = trial_rng(*st.cfg.seed, trial, 3);
  Vec omega_true = random_gaussian(rng, static_cast<int>(env.features(space).cols()));
  return generate_clean_data(env, omega_true, st.cfg.n_bar, mix64(*st.cfg.seed + 31 * (trial + 1)), space);
}

inline std::uint64_t target_seed(const Setup& st, std::size_t trial) { return st.cfg.seed.value_or(0) + trial; }

inline AttackReport run_attack(const Setup& st, const std::string& mode, const EnvSpec& env,
                               const PreferenceDataset& clean, std::size_t trial, double eps_p) {
  Rng rng = trial_rng(target_seed(st, trial), trial, 5);
  if (mode == "attack-rlhf-unreg") {
    Policy target = Policy::deterministic(random_actions(rng, env.S, env.A), env.A);
    return attack_rlhf_unreg(env, target, clean, eps_p, st.learner);
  }
  Vec theta_t = random_gaussian(rng, env.d_prime());
  Vec theta_mu = random_gaussian(rng, env.d_prime());
  if (mode == "attack-rlhf-reg")
    return attack_rlhf_reg(env, Policy::loglinear(env, theta_t), Policy::loglinear(env, theta_mu), eps_p,
                           st.cfg.epsilon, clean, st.learner);
  return attack_dpo(env, theta_t, theta_mu, eps_p, st.cfg.epsilon, clean, st.learner);
}

inline Space attack_space(const std::string& mode) { return mode == "attack-dpo" ? Space::psi : Space::phi; }

inline TrialResult attack_trial(const Setup& st, std::size_t trial) {
  const auto& c = st.cfg;
  EnvSpec env = trial_env(st, trial, c.mode == "attack-rlhf-reg");
  PreferenceDataset clean = trial_data(st, env, trial, attack_space(c.mode));
  double eps_p = c.epsilon_prime.value_or(default_epsilon_prime(c.mode, c.epsilon));
  AttackReport r = run_attack(st, c.mode, env, clean, trial, eps_p);
  io::json rec = io::report_to_json(r);
  rec["trial"] = trial;
  rec["epsilon_prime"] = eps_p;
  return {rec, {csv_row(c, env, trial, r, eps_p, static_cast<std::int64_t>(clean.size()))},
          r.feasible ? kOk : kVerification};
}

inline std::vector<double> sweep_grid(const ExperimentConfig& c) {
  if (!c.eps_grid.empty()) return c.eps_grid;
  std::vector<double> g;
  for (double f : {0.05, 0.1, 0.2, 0.3, 0.5}) g.push_back(f * c.epsilon);
  return g;
}

inline TrialResult sweep_trial(const Setup& st, std::size_t trial) {
  const auto& c = st.cfg;
  const std::string& mode = c.sweep_attack;
  EnvSpec env = trial_env(st, trial, mode == "attack-rlhf-reg");
  PreferenceDataset clean = trial_data(st, env, trial, attack_space(mode));
  TrialResult out;
  out.record = io::json::array();
  for (double eps_p : sweep_grid(c)) {
    AttackReport r = run_attack(st, mode, env, clean, trial, eps_p);
    out.rows.push_back(csv_row(c, env, trial, r, eps_p, static_cast<std::int64_t>(clean.size())));
    out.record.push_back(io::json{{"trial", trial}, {"epsilon_prime", eps_p}, {"count_actual", r.count_actual},
                                  {"feasible", r.feasible}});
    if (!r.feasible) out.status = kVerification;
  }
  return out;
}

inline io::json sheet_to_json(const BoundsSheet& s) {
  using io::num;
  return io::json{{"n_hat_rlhf_upper", num(s.n_hat_rlhf_upper)},
                  {"n_hat_rlhf_general", num(s.n_hat_rlhf_general)},
                  {"n_hat_dpo_upper", num(s.n_hat_dpo_upper)},
                  {"n_hat_dpo_lower", num(s.n_hat_dpo_lower)},
                  {"kappa1", num(s.kappa1)},
                  {"rlhf_exact_branch", s.rlhf_exact_branch},
                  {"dpo_lower_vacuous", s.dpo_lower_vacuous},
                  {"kappa1_vacuous", s.kappa1_vacuous},
                  {"omega_norm", num(s.omega_norm)},
                  {"delta_norm", num(s.delta_norm)},
                  {"gamma_feature_gap_norm", num(s.gamma_feature_gap_norm)},
                  {"sigma_min_cov", num(s.sigma_min_cov)},
                  {"eta_min", num(s.eta_min)},
                  {"kl_target_reference", num(s.kl_target_reference)},
                  {"n_bar_phi", s.n_bar_phi},
                  {"n_bar_psi", s.n_bar_psi}};
}

inline TrialResult compare_trial(const Setup& st, std::size_t trial) {
  const auto& c = st.cfg;
  EnvSpec env = trial_env(st, trial, true);
  PreferenceDataset clean_phi = trial_data(st, env, trial, Space::phi);
  PreferenceDataset clean_psi = st.data ? *st.data : trial_data(st, env, trial, Space::psi);
  if (st.data) {
    // A supplied dataset is read in both spaces; this needs psi = phi.
    if (env.phi != env.psi) throw ValidationError("compare with --data needs psi = phi");
    PreferenceDataset as_psi(Provenance::clean);
    for (auto s : *st.data) {
      s.space = Space::psi;
      as_psi.push_back(s);
    }
    clean_psi = as_psi;
  }
  Rng rng = trial_rng(target_seed(st, trial), trial, 5);
  Vec theta_t = random_gaussian(rng, env.d_prime());
  Vec theta_mu = random_gaussian(rng, env.d_prime());
  double eps_reg = default_epsilon_prime("attack-rlhf-reg", c.epsilon);
  double eps_dpo = c.epsilon_prime.value_or(default_epsilon_prime("attack-dpo", c.epsilon));
  CompareReport cr = compare_paradigms(env, theta_t, theta_mu, clean_phi, clean_psi, c.epsilon, eps_reg, eps_dpo,
                                       st.learner, target_seed(st, trial));
  io::json rec{{"trial", trial},
               {"rlhf", io::report_to_json(cr.rlhf)},
               {"dpo", io::report_to_json(cr.dpo)},
               {"bounds", sheet_to_json(cr.sheet)},
               {"bound_inequality_holds", cr.bound_inequality_holds}};
  TrialResult out{rec, {}, kOk};
  out.rows.push_back(csv_row(c, env, trial, cr.rlhf, eps_reg, static_cast<std::int64_t>(clean_phi.size()),
                             cr.sheet.kappa1));
  out.rows.push_back(csv_row(c, env, trial, cr.dpo, eps_dpo, static_cast<std::int64_t>(clean_psi.size()),
                             cr.sheet.kappa1));
  if (!cr.rlhf.feasible || !cr.dpo.feasible || !cr.bound_inequality_holds) out.status = kVerification;
  return out;
}

/**
 * @brief One row of the default verification matrix: every attack on small
 * generated instances, checked against the brute-force references.
 */
inline TrialResult verify_trial(const Setup& st, std::size_t trial) {
  const auto& c = st.cfg;
  const std::uint64_t seed = mix64(*c.seed + 977 * (trial + 1));
  static constexpr int shapes[][2] = {{2, 2}, {3, 2}, {4, 2}, {2, 3}, {3, 3}};
  const auto& shape = shapes[trial % 5];
  const int S = shape[0], A = shape[1], k = S * (A - 1);
  const int n_bar = trial % 2 ? 20 : 0;
  TrialResult out;
  out.record = io::json::array();

  auto note = [&](const std::string& mode, const AttackReport& r, const EnvSpec& env, double eps_p,
                  std::size_t n, bool extra_ok) {
    io::CsvRow row = csv_row(c, env, trial, r, eps_p, static_cast<std::int64_t>(n));
    bool ok = r.feasible && extra_ok && r.count_actual <= r.bound_upper;
    if (mode == "attack-dpo" && r.bound_lower > 0) ok = ok && r.count_actual >= r.bound_lower;
    out.rows.push_back(row);
    out.record.push_back(io::json{{"trial", trial}, {"mode", mode}, {"passed", ok}, {"failures", r.failures}});
    if (!ok) out.status = kVerification;
  };

  {
    LearnerConfig lc = st.learner;
    UnregInstance in = make_unreg_instance(seed, S, A, k, trial % 3 == 0 ? 0.0 : 0.9, n_bar, c.epsilon, lc);
    AttackReport r = attack_rlhf_unreg(in.env, in.target, in.clean, in.eps_p, lc);
    auto chk = oracle::exhaustive_policy_check(in.env, r.retrained_param, in.target.actions(), in.eps_p);
    note("attack-rlhf-unreg", r, in.env, in.eps_p, in.clean.size(), chk.passed);
  }
  {
    LoglinearInstance in = make_bandit_instance(seed + 1, S, A, 4, n_bar, n_bar == 0 ? 0 : 5 + 15 * (trial % 4 == 1));
    double eps_reg = default_epsilon_prime("attack-rlhf-reg", c.epsilon);
    AttackReport r = attack_rlhf_reg(in.env, Policy::loglinear(in.env, in.theta_t),
                                     Policy::loglinear(in.env, in.theta_mu), eps_reg, c.epsilon, in.clean_phi,
                                     st.learner);
    note("attack-rlhf-reg", r, in.env, eps_reg, in.clean_phi.size(), true);
    double eps_dpo = default_epsilon_prime("attack-dpo", c.epsilon);
    AttackReport rd = attack_dpo(in.env, in.theta_t, in.theta_mu, eps_dpo, c.epsilon, in.clean_psi, st.learner);
    note("attack-dpo", rd, in.env, eps_dpo, in.clean_psi.size(),
         rd.diagnostics.at("first_order_residual") < 1e-9);
  }
  return out;
}

inline io::json config_echo(const ExperimentConfig& c) {
  io::json grid = io::json::array();
  for (double e : c.eps_grid) grid.push_back(e);
  return io::json{{"mode", c.mode},
                  {"env", c.env_path},
                  {"data", c.data_path},
                  {"S", c.S},
                  {"A", c.A},
                  {"d", c.d},
                  {"d_prime", c.d_prime},
                  {"gamma", c.gamma ? io::json(*c.gamma) : io::json(nullptr)},
                  {"beta", c.beta},
                  {"lambda", c.lambda},
                  {"epsilon", c.epsilon},
                  {"epsilon_prime", c.epsilon_prime ? io::json(*c.epsilon_prime) : io::json(nullptr)},
                  {"n_bar", c.n_bar},
                  {"seed", c.seed ? io::json(*c.seed) : io::json(nullptr)},
                  {"trials", c.trials},
                  {"space", c.space},
                  {"sweep_attack", c.sweep_attack},
                  {"eps_grid", grid},
                  {"timing", c.timing}};
}

}  // namespace detail

/**
 * @brief Execute one CLI invocation. Artifacts go to the directory
 * `cfg.out_path`; the return value is the process exit code.
 */
inline int run(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  namespace fs = std::filesystem;
  try {
    validate(cfg);
    fs::create_directories(cfg.out_path);
    const fs::path out(cfg.out_path);

    detail::Setup st{cfg, std::nullopt, std::nullopt, LearnerConfig{cfg.lambda, cfg.beta}};
    io::json inputs = io::json::object();
    if (!cfg.env_path.empty()) {
      std::string text = io::read_file(cfg.env_path);
      inputs["env"] = git_blob_hash(text);
      st.env = io::load_env(cfg.env_path);
    }
    if (!cfg.data_path.empty()) {
      std::string text = io::read_file(cfg.data_path);
      inputs["data"] = git_blob_hash(text);
      st.data = io::dataset_from_jsonl(text);
    }

    std::vector<std::pair<std::string, std::string>> files;
    int status = kOk;

    if (cfg.mode == "gen-env") {
      EnvOptions o{cfg.S, cfg.A, cfg.d, cfg.d_prime, cfg.gamma.value_or(0.9), false, false};
      files.emplace_back("env.json", io::env_to_json(generate_env(o, *cfg.seed)).dump(2) + "\n");
    } else if (cfg.mode == "gen-data") {
      Space space = space_from_string(cfg.space);
      Rng rng = Rng(*cfg.seed).split(3);
      Vec omega_true = random_gaussian(rng, static_cast<int>(st.env->features(space).cols()));
      files.emplace_back("data.jsonl",
                         io::dataset_to_jsonl(generate_clean_data(*st.env, omega_true, cfg.n_bar, *cfg.seed, space)));
    } else {
      std::function<detail::TrialResult(std::size_t)> body;
      std::string record_name = "reports.json";
      std::string csv_name = "bounds.csv";
      if (is_attack_mode(cfg.mode)) {
        body = [&](std::size_t t) { return detail::attack_trial(st, t); };
      } else if (cfg.mode == "sweep") {
        body = [&](std::size_t t) { return detail::sweep_trial(st, t); };
        record_name = "sweep.json";
        csv_name = "sweep.csv";
      } else if (cfg.mode == "compare") {
        body = [&](std::size_t t) { return detail::compare_trial(st, t); };
        record_name = "compare.json";
      } else {
        body = [&](std::size_t t) { return detail::verify_trial(st, t); };
        record_name = "verify.json";
        csv_name = "verify.csv";
      }
      auto results = parallel_map<detail::TrialResult>(static_cast<std::size_t>(cfg.trials), [&](std::size_t t) {
        auto start = std::chrono::steady_clock::now();
        detail::TrialResult r = detail::guarded(t, [&] { return body(t); });
        if (cfg.timing) {
          double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
          for (auto& row : r.rows) row.wall_ms = ms;
        }
        return r;
      });
      io::json records = io::json::array();
      std::string csv = io::csv_header();
      for (const auto& r : results) {
        records.push_back(r.record);
        for (const auto& row : r.rows) csv += io::csv_line(row);
        status = std::max(status, r.status);
      }
      files.emplace_back(record_name, records.dump(2) + "\n");
      files.emplace_back(csv_name, csv);
    }

    io::json outputs = io::json::object();
    for (const auto& [name, content] : files) {
      io::write_file((out / name).string(), content);
      outputs[name] = git_blob_hash(content);
    }
    io::json manifest{{"tool", "pplab"}, {"config", detail::config_echo(cfg)}, {"inputs", inputs},
                      {"outputs", outputs}, {"exit_code", status}};
    io::write_file((out / "manifest.json").string(), manifest.dump(2) + "\n");
    if (status == kVerification) log << "pplab: VERIFICATION FAILURE: a guarantee did not hold; see outputs\n";
    else if (status == kInfeasible) log << "pplab: at least one attack was infeasible; see outputs\n";
    return status;
  } catch (const ValidationError& e) {
    log << "pplab: invalid input: " << e.what() << "\n";
    return kValidation;
  } catch (const InfeasibleError& e) {
    log << "pplab: infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const VerificationError& e) {
    log << "pplab: VERIFICATION FAILURE: " << e.what() << "\n";
    return kVerification;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "pplab: invalid input: " << e.what() << "\n";
    return kValidation;
  }
}

}  // namespace pplab
