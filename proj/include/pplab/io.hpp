#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pplab/attacks.hpp"
#include "pplab/dataset.hpp"
#include "pplab/env.hpp"
#include "pplab/errors.hpp"

namespace pplab::io {

using json = nlohmann::json;

// Non-finite doubles travel as the strings "nan", "inf", "-inf".
inline json num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

inline double num(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  throw ValidationError("expected a number, got " + j.dump());
}

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

inline Vec vec_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(j[i]);
  return v;
}

inline json rows_to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec_to_json(m.row(r).transpose()));
  return a;
}

inline Mat rows_from_json(const json& j, Eigen::Index rows) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw ValidationError("feature matrix has wrong row count");
  Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Vec v = vec_from_json(j[static_cast<std::size_t>(r)]);
    if (v.size() != cols) throw ValidationError("ragged feature matrix");
    m.row(r) = v.transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Environment: {S, A, gamma, bandit, seed, rho, P[s][a][s'], phi, psi}
// ---------------------------------------------------------------------------

inline json env_to_json(const EnvSpec& env) {
  json p = json::array();
  for (int s = 0; s < env.S; ++s) {
    json row = json::array();
    for (int a = 0; a < env.A; ++a) row.push_back(vec_to_json(env.P.row(env.row(s, a)).transpose()));
    p.push_back(row);
  }
  return json{{"S", env.S},
              {"A", env.A},
              {"gamma", env.gamma},
              {"bandit", env.bandit},
              {"seed", env.seed},
              {"rho", vec_to_json(env.rho)},
              {"P", p},
              {"phi", rows_to_json(env.phi)},
              {"psi", rows_to_json(env.psi)}};
}

inline EnvSpec env_from_json(const json& j) {
  try {
    EnvSpec env;
    env.S = j.at("S").get<int>();
    env.A = j.at("A").get<int>();
    env.gamma = num(j.at("gamma"));
    env.bandit = j.value("bandit", false);
    env.seed = j.value("seed", std::uint64_t{0});
    env.rho = vec_from_json(j.at("rho"));
    const json& p = j.at("P");
    if (!p.is_array() || static_cast<int>(p.size()) != env.S) throw ValidationError("P must be S x A x S");
    env.P.resize(env.S * env.A, env.S);
    for (int s = 0; s < env.S; ++s) {
      if (static_cast<int>(p[s].size()) != env.A) throw ValidationError("P must be S x A x S");
      for (int a = 0; a < env.A; ++a) {
        Vec row = vec_from_json(p[s][a]);
        if (row.size() != env.S) throw ValidationError("P must be S x A x S");
        env.P.row(env.row(s, a)) = row.transpose();
      }
    }
    env.phi = rows_from_json(j.at("phi"), env.S * env.A);
    env.psi = rows_from_json(j.at("psi"), env.S * env.A);
    validate(env);
    return env;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed environment: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets as JSON Lines: {"z": [...], "o": 1, "space": "phi"}
// ---------------------------------------------------------------------------

inline json sample_to_json(const PreferenceSample& s) {
  return json{{"z", vec_to_json(s.z)}, {"o", s.o}, {"space", std::string(to_string(s.space))}};
}

inline PreferenceSample sample_from_json(const json& j) {
  try {
    PreferenceSample s;
    s.z = vec_from_json(j.at("z"));
    s.o = j.at("o").get<int>();
    s.space = space_from_string(j.value("space", std::string("phi")));
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed preference sample: ") + e.what());
  }
}

inline std::string dataset_to_jsonl(const PreferenceDataset& d) {
  std::string out;
  for (const auto& s : d) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline PreferenceDataset dataset_from_jsonl(const std::string& text, Provenance p = Provenance::clean) {
  PreferenceDataset d(p);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed JSON line: ") + e.what());
    }
    d.push_back(sample_from_json(j));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Attack reports
// ---------------------------------------------------------------------------

inline json report_to_json(const AttackReport& r) {
  json diag = json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = num(v);
  json synth = json::array();
  for (const auto& s : r.synthesized) synth.push_back(sample_to_json(s));
  return json{{"mode", r.mode},
              {"feasible", r.feasible},
              {"count_actual", r.count_actual},
              {"merged_size", r.merged_size},
              {"bound_upper", num(r.bound_upper)},
              {"bound_lower", num(r.bound_lower)},
              {"achieved_l1", num(r.achieved_l1)},
              {"achieved_kl", num(r.achieved_kl)},
              {"target_param", vec_to_json(r.target_param)},
              {"retrained_param", vec_to_json(r.retrained_param)},
              {"failures", r.failures},
              {"diagnostics", diag},
              {"synthesized", synth}};
}

inline AttackReport report_from_json(const json& j) {
  try {
    AttackReport r;
    r.mode = j.at("mode").get<std::string>();
    r.feasible = j.at("feasible").get<bool>();
    r.count_actual = j.at("count_actual").get<std::int64_t>();
    r.merged_size = j.at("merged_size").get<std::int64_t>();
    r.bound_upper = num(j.at("bound_upper"));
    r.bound_lower = num(j.at("bound_lower"));
    r.achieved_l1 = num(j.at("achieved_l1"));
    r.achieved_kl = num(j.at("achieved_kl"));
    r.target_param = vec_from_json(j.at("target_param"));
    r.retrained_param = vec_from_json(j.at("retrained_param"));
    r.failures = j.at("failures").get<std::vector<std::string>>();
    for (const auto& [k, v] : j.at("diagnostics").items()) r.diagnostics[k] = num(v);
    for (const auto& s : j.at("synthesized")) r.synthesized.push_back(sample_from_json(s));
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Bounds sheet CSV
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "trial", "mode", "S", "A", "d", "d_prime", "gamma", "beta", "lambda", "epsilon", "epsilon_prime",
      "n_bar", "count_actual", "bound_upper", "bound_lower", "achieved_l1", "achieved_kl", "kappa1", "wall_ms"};
  return cols;
}

struct CsvRow {
  int trial = 0;
  std::string mode;
  int S = 0, A = 0, d = 0, d_prime = 0;
  double gamma = 0, beta = 0, lambda = 0, epsilon = 0, epsilon_prime = 0;
  std::int64_t n_bar = 0, count_actual = 0;
  double bound_upper = kNaN, bound_lower = kNaN, achieved_l1 = kNaN, achieved_kl = kNaN, kappa1 = kNaN;
  /// Empty unless timing was requested, so default outputs stay reproducible.
  std::optional<double> wall_ms;

  friend bool operator==(const CsvRow&, const CsvRow&) = default;
};

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string csv_header() {
  std::string h;
  for (const auto& c : csv_columns()) h += (h.empty() ? "" : ",") + c;
  return h + "\n";
}

inline std::string csv_line(const CsvRow& r) {
  std::ostringstream o;
  o << r.trial << ',' << r.mode << ',' << r.S << ',' << r.A << ',' << r.d << ',' << r.d_prime << ','
    << fmt(r.gamma) << ',' << fmt(r.beta) << ',' << fmt(r.lambda) << ',' << fmt(r.epsilon) << ','
    << fmt(r.epsilon_prime) << ',' << r.n_bar << ',' << r.count_actual << ',' << fmt(r.bound_upper) << ','
    << fmt(r.bound_lower) << ',' << fmt(r.achieved_l1) << ',' << fmt(r.achieved_kl) << ',' << fmt(r.kappa1)
    << ',' << (r.wall_ms ? fmt(*r.wall_ms) : std::string()) << '\n';
  return o.str();
}

inline double parse_num(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw ValidationError("bad CSV number '" + s + "'");
  return v;
}

inline std::vector<CsvRow> csv_parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + "\n" != csv_header()) throw ValidationError("unexpected CSV header");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != csv_columns().size()) throw ValidationError("CSV row has wrong field count");
    try {
      CsvRow r;
      r.trial = std::stoi(f[0]);
      r.mode = f[1];
      r.S = std::stoi(f[2]);
      r.A = std::stoi(f[3]);
      r.d = std::stoi(f[4]);
      r.d_prime = std::stoi(f[5]);
      r.gamma = parse_num(f[6]);
      r.beta = parse_num(f[7]);
      r.lambda = parse_num(f[8]);
      r.epsilon = parse_num(f[9]);
      r.epsilon_prime = parse_num(f[10]);
      r.n_bar = std::stoll(f[11]);
      r.count_actual = std::stoll(f[12]);
      r.bound_upper = parse_num(f[13]);
      r.bound_lower = parse_num(f[14]);
      r.achieved_l1 = parse_num(f[15]);
      r.achieved_kl = parse_num(f[16]);
      r.kappa1 = parse_num(f[17]);
      if (!f[18].empty()) r.wall_ms = parse_num(f[18]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ValidationError("bad CSV row: " + line);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

inline EnvSpec load_env(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
  return env_from_json(j);
}

inline PreferenceDataset load_dataset(const std::string& path) { return dataset_from_jsonl(read_file(path)); }

}  // namespace pplab::io
