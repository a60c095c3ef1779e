#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "pplab/harness.hpp"

namespace {

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw pplab::ValidationError("bad --eps-grid entry '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  pplab::ExperimentConfig cfg;
  std::string grid;
  double gamma = 0, eps_p = 0;
  std::uint64_t seed = 0;

  CLI::App app{"Preference-data poisoning attacks on RLHF and DPO learners"};
  app.add_option("--mode", cfg.mode, "gen-env | gen-data | attack-rlhf-unreg | attack-rlhf-reg | attack-dpo | "
                                     "compare | sweep | verify")
      ->required();
  app.add_option("--env", cfg.env_path, "environment JSON");
  app.add_option("--data", cfg.data_path, "clean preference data (JSONL)");
  app.add_option("--out", cfg.out_path, "output directory")->required();
  app.add_option("--S", cfg.S, "states when generating");
  app.add_option("--A", cfg.A, "actions when generating");
  app.add_option("--d", cfg.d, "reward feature dimension");
  app.add_option("--d-prime,--dprime", cfg.d_prime, "policy feature dimension");
  auto* g = app.add_option("--gamma", gamma, "discount in [0, 1)");
  app.add_option("--beta", cfg.beta, "KL weight");
  app.add_option("--lambda", cfg.lambda, "ridge weight");
  app.add_option("--epsilon", cfg.epsilon, "l1 closeness budget");
  auto* ep = app.add_option("--epsilon-prime", eps_p, "parameter/KL budget");
  app.add_option("--nbar", cfg.n_bar, "clean pairs to generate per trial");
  auto* sd = app.add_option("--seed", seed, "master seed");
  app.add_option("--trials", cfg.trials, "independent trials");
  app.add_option("--space", cfg.space, "gen-data feature map: phi | psi");
  app.add_option("--sweep-attack", cfg.sweep_attack, "attack swept in sweep mode");
  app.add_option("--eps-grid", grid, "comma-separated epsilon' values for sweep");
  app.add_flag("--timing", cfg.timing, "fill the wall_ms column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return pplab::kValidation;
  }
  try {
    if (g->count()) cfg.gamma = gamma;
    if (ep->count()) cfg.epsilon_prime = eps_p;
    if (sd->count()) cfg.seed = seed;
    cfg.eps_grid = parse_grid(grid);
  } catch (const pplab::ValidationError& e) {
    std::cerr << "pplab: invalid input: " << e.what() << "\n";
    return pplab::kValidation;
  }
  return pplab::run(cfg);
}
