#pragma once

// Configuration, CSV ingestion and result emission for the command-line tool.

#include "edpm/copula.hpp"
#include "edpm/data.hpp"
#include "edpm/gcomp.hpp"
#include "edpm/gibbs.hpp"
#include "edpm/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace edpm {

inline constexpr const char* kVersion = "1.0.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AppConfig {
  EdpmConfig chain;
  std::size_t mc_draws = 500;
  double eps_tol = 1e-8;
  std::vector<std::string> rho_specs{"fixed:0"};
  /// Names of binary covariate columns; unset means auto-detect from the data.
  std::optional<std::vector<std::string>> binary_columns;
  std::size_t truth_mc_n = 1000000;

  AppConfig() {
    chain.burn_in = 5000;
    chain.keep = 500;
    chain.thin = 10;
  }
};

inline nlohmann::json to_json(const AppConfig& c) {
  nlohmann::json j;
  j["chain"] = {{"alpha_theta", c.chain.alpha_theta}, {"alpha_omega", c.chain.alpha_omega},
                {"neal_m_aux", c.chain.neal_m_aux},   {"burn_in", c.chain.burn_in},
                {"keep", c.chain.keep},               {"thin", c.chain.thin},
                {"init_clusters", c.chain.init_clusters}};
  const PriorConfig& p = c.chain.priors;
  j["priors"] = {{"coef_var", p.coef_var},         {"reg_shape", p.reg_shape},       {"reg_rate", p.reg_rate},
                 {"binary_a", p.binary.a},         {"binary_b", p.binary.b},         {"cont_mean", p.cont_mean},
                 {"cont_precision", p.cont_precision}, {"cont_shape", p.cont_shape}, {"cont_rate", p.cont_rate}};
  j["gcomp"] = {{"mc_draws", c.mc_draws}, {"eps_tol", c.eps_tol}, {"rho", c.rho_specs}};
  j["schema"] = {{"binary", c.binary_columns ? nlohmann::json(*c.binary_columns) : nlohmann::json(nullptr)}};
  j["simulation"] = {{"truth_mc_n", c.truth_mc_n}};
  return j;
}

namespace detail {
template <class T>
void read_key(const nlohmann::json& obj, const char* section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}
inline void reject_unknown(const nlohmann::json& obj, const char* section, std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(std::string("unknown config key '") + section + "." + it.key() + "'");
  }
}
}  // namespace detail

/// Overlays a JSON document onto the defaults; unknown keys are rejected.
inline AppConfig config_from_json(const nlohmann::json& j) {
  AppConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j, "", {"chain", "priors", "gcomp", "schema", "simulation"});
  const auto section = [&](const char* name) -> const nlohmann::json* {
    if (!j.contains(name)) return nullptr;
    if (!j.at(name).is_object()) throw ConfigError(std::string(name) + " must be an object");
    return &j.at(name);
  };
  if (const auto* s = section("chain")) {
    detail::reject_unknown(*s, "chain", {"alpha_theta", "alpha_omega", "neal_m_aux", "burn_in", "keep", "thin", "init_clusters"});
    detail::read_key(*s, "chain", "alpha_theta", c.chain.alpha_theta);
    detail::read_key(*s, "chain", "alpha_omega", c.chain.alpha_omega);
    detail::read_key(*s, "chain", "neal_m_aux", c.chain.neal_m_aux);
    detail::read_key(*s, "chain", "burn_in", c.chain.burn_in);
    detail::read_key(*s, "chain", "keep", c.chain.keep);
    detail::read_key(*s, "chain", "thin", c.chain.thin);
    detail::read_key(*s, "chain", "init_clusters", c.chain.init_clusters);
  }
  if (const auto* s = section("priors")) {
    PriorConfig& p = c.chain.priors;
    detail::reject_unknown(*s, "priors", {"coef_var", "reg_shape", "reg_rate", "binary_a", "binary_b", "cont_mean",
                                          "cont_precision", "cont_shape", "cont_rate"});
    detail::read_key(*s, "priors", "coef_var", p.coef_var);
    detail::read_key(*s, "priors", "reg_shape", p.reg_shape);
    detail::read_key(*s, "priors", "reg_rate", p.reg_rate);
    detail::read_key(*s, "priors", "binary_a", p.binary.a);
    detail::read_key(*s, "priors", "binary_b", p.binary.b);
    detail::read_key(*s, "priors", "cont_mean", p.cont_mean);
    detail::read_key(*s, "priors", "cont_precision", p.cont_precision);
    detail::read_key(*s, "priors", "cont_shape", p.cont_shape);
    detail::read_key(*s, "priors", "cont_rate", p.cont_rate);
  }
  if (const auto* s = section("gcomp")) {
    detail::reject_unknown(*s, "gcomp", {"mc_draws", "eps_tol", "rho"});
    detail::read_key(*s, "gcomp", "mc_draws", c.mc_draws);
    detail::read_key(*s, "gcomp", "eps_tol", c.eps_tol);
    detail::read_key(*s, "gcomp", "rho", c.rho_specs);
  }
  if (const auto* s = section("schema")) {
    detail::reject_unknown(*s, "schema", {"binary"});
    if (s->contains("binary") && !s->at("binary").is_null()) {
      std::vector<std::string> b;
      detail::read_key(*s, "schema", "binary", b);
      c.binary_columns = b;
    }
  }
  if (const auto* s = section("simulation")) {
    detail::reject_unknown(*s, "simulation", {"truth_mc_n"});
    detail::read_key(*s, "simulation", "truth_mc_n", c.truth_mc_n);
  }

  const PriorConfig& p = c.chain.priors;
  if (!(p.coef_var > 0 && p.reg_shape > 0 && p.reg_rate > 0 && p.binary.a > 0 && p.binary.b > 0 &&
        p.cont_precision > 0 && p.cont_shape > 0 && p.cont_rate > 0))
    throw ConfigError("priors: scale, shape, rate and precision parameters must be positive");
  try {
    c.chain.validate();
    for (const auto& r : c.rho_specs) SensitivitySpec::parse(r);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.rho_specs.empty()) throw ConfigError("gcomp.rho: need at least one rho spec");
  if (c.mc_draws < 1) throw ConfigError("gcomp.mc_draws must be >= 1");
  if (!(c.eps_tol > 0.0)) throw ConfigError("gcomp.eps_tol must be positive");
  if (c.truth_mc_n < 1) throw ConfigError("simulation.truth_mc_n must be >= 1");
  return c;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a, used to fingerprint configurations in run manifests.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << x;
  return os.str();
}

/// Six significant digits, as used in every emitted table.
inline std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}
inline double round6(double x) { return std::isfinite(x) ? std::stod(fmt6(x)) : x; }

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw DataError("CSV input is empty");
  return t;
}

/// Parsed analysis input: records plus covariate names and types.
struct AnalysisData {
  std::vector<ObservedRecord> records;
  std::vector<std::string> c_names;
  std::vector<bool> c_binary;
};

/// Columns y, m, v, z are required; every other column is a baseline covariate
/// in file order. Empty cells (or NA) are missing; z may not be missing.
inline AnalysisData parse_analysis_csv(const CsvTable& t, const std::optional<std::vector<std::string>>& binary) {
  AnalysisData a;
  int iy = -1, im = -1, iv = -1, iz = -1;
  std::vector<std::size_t> c_cols;
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    const std::string& h = t.header[k];
    if (h == "y") iy = static_cast<int>(k);
    else if (h == "m") im = static_cast<int>(k);
    else if (h == "v") iv = static_cast<int>(k);
    else if (h == "z") iz = static_cast<int>(k);
    else {
      c_cols.push_back(k);
      a.c_names.push_back(h);
    }
  }
  if (iy < 0 || im < 0 || iv < 0 || iz < 0) throw DataError("CSV header must contain columns y, m, v and z");
  if (binary)
    for (const auto& b : *binary)
      if (std::find(a.c_names.begin(), a.c_names.end(), b) == a.c_names.end())
        throw ConfigError("schema.binary names unknown column '" + b + "'");

  const auto cell = [&](std::size_t r, std::size_t k) -> std::optional<double> {
    const std::string& s = t.rows[r][k];
    if (s.empty() || s == "NA" || s == "na" || s == "NaN") return std::nullopt;
    try {
      std::size_t used = 0;
      const double x = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(x)) throw std::invalid_argument(s);
      return x;
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(t.line_numbers[r]) + ": column '" + t.header[k] +
                      "' is not a number: '" + s + "'");
    }
  };

  a.records.resize(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ObservedRecord& rec = a.records[r];
    rec.y = cell(r, static_cast<std::size_t>(iy));
    rec.m = cell(r, static_cast<std::size_t>(im));
    rec.v = cell(r, static_cast<std::size_t>(iv));
    const auto z = cell(r, static_cast<std::size_t>(iz));
    if (!z || (*z != 0.0 && *z != 1.0))
      throw DataError("line " + std::to_string(t.line_numbers[r]) + ": z must be 0 or 1");
    rec.z = static_cast<int>(*z);
    for (std::size_t k : c_cols) rec.c.push_back(cell(r, k));
  }

  a.c_binary.assign(c_cols.size(), false);
  for (std::size_t j = 0; j < c_cols.size(); ++j) {
    if (binary) {
      a.c_binary[j] = std::find(binary->begin(), binary->end(), a.c_names[j]) != binary->end();
    } else {
      bool all01 = true, any = false;
      for (const auto& rec : a.records)
        if (rec.c[j]) {
          any = true;
          all01 = all01 && (*rec.c[j] == 0.0 || *rec.c[j] == 1.0);
        }
      a.c_binary[j] = any && all01;
    }
  }
  return a;
}

inline void write_records_csv(std::ostream& out, const std::vector<ObservedRecord>& recs) {
  out << "y,m,v,z";
  const std::size_t p = recs.empty() ? 0 : recs.front().c.size();
  for (std::size_t j = 0; j < p; ++j) out << ",c" << j + 1;
  out << '\n';
  out << std::setprecision(17);
  const auto put = [&](const std::optional<double>& x) {
    if (x) out << *x;
  };
  for (const auto& r : recs) {
    put(r.y);
    out << ',';
    put(r.m);
    out << ',';
    put(r.v);
    out << ',' << r.z;
    for (const auto& c : r.c) {
      out << ',';
      put(c);
    }
    out << '\n';
  }
}

inline nlohmann::json summary_json(const Summary& s) {
  return {{"mean", round6(s.mean)}, {"lo95", round6(s.lo95)}, {"hi95", round6(s.hi95)}};
}

inline nlohmann::json manifest_json(const nlohmann::json& config, std::uint64_t seed, const std::string& command) {
  return {{"command", command},
          {"config_hash", hex64(fnv1a64(config.dump()))},
          {"seed", seed},
          {"version", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"config", config}};
}

// ---------------------------------------------------------------------------
// Analysis pipeline

struct EffectBlock {
  std::string label;  // "marginal" or "<covariate>=<value>"
  EffectPosterior posterior;
};

struct RhoResult {
  std::string rho_spec;
  std::vector<EffectBlock> blocks;
};

struct AnalysisResult {
  std::size_t n_draws = 0;
  std::size_t mc_draws = 0;
  std::vector<RhoResult> per_rho;
  SamplerDiagnostics diagnostics;
};

struct ConditionRequest {
  std::string column;
  std::optional<double> value;  // unset: every level of a binary column
};

inline ConditionRequest parse_condition(const std::string& text) {
  ConditionRequest c;
  const auto eq = text.find('=');
  c.column = text.substr(0, eq);
  if (eq != std::string::npos) {
    try {
      c.value = std::stod(text.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("--condition: bad value in '" + text + "'");
    }
  }
  if (c.column.empty()) throw ConfigError("--condition: missing column name");
  return c;
}

/// Fits the EDPM once (chain seed derive_seed(seed, 0)) and evaluates every
/// rho spec (G-computation seed derive_seed(seed, 1 + k) for spec k).
inline AnalysisResult analyze(const AnalysisData& a, const AppConfig& cfg, std::uint64_t seed, std::size_t threads,
                              const std::optional<ConditionRequest>& cond) {
  const Dataset d = Dataset::from_records(a.records, a.c_binary);
  std::vector<Conditioning> levels;
  if (cond) {
    const auto it = std::find(a.c_names.begin(), a.c_names.end(), cond->column);
    if (it == a.c_names.end()) throw ConfigError("--condition: unknown covariate '" + cond->column + "'");
    const auto j = static_cast<std::size_t>(it - a.c_names.begin());
    if (cond->value) {
      levels.push_back({j, *cond->value});
    } else {
      if (!a.c_binary[j]) throw ConfigError("--condition: '" + cond->column + "' is continuous; give a value");
      levels.push_back({j, 0.0});
      levels.push_back({j, 1.0});
    }
  }
  AnalysisResult res;
  FittedModel fit;
  fit.model = EdpmModel(d.layout, cfg.chain);
  fit.draws = run_chain(cfg.chain, d, derive_seed(seed, 0), nullptr, &res.diagnostics);
  fit.y_scale = d.y_scale;
  fit.c_scale = d.c_scale;
  res.n_draws = fit.draws.size();
  res.mc_draws = cfg.mc_draws;
  for (std::size_t k = 0; k < cfg.rho_specs.size(); ++k) {
    GCompConfig g;
    g.mc_draws = cfg.mc_draws;
    g.eps_tol = cfg.eps_tol;
    g.sensitivity = SensitivitySpec::parse(cfg.rho_specs[k]);
    g.threads = threads;
    RhoResult rr;
    rr.rho_spec = g.sensitivity.to_string();
    const std::uint64_t gseed = derive_seed(seed, 1 + k);
    rr.blocks.push_back({"marginal", causal_effects(fit, g, gseed)});
    for (const auto& lv : levels) {
      g.conditioning = lv;
      try {
        rr.blocks.push_back({a.c_names[lv.index] + "=" + fmt6(lv.value), conditional_causal_effects(fit, g, gseed)});
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("--condition: ") + e.what());
      }
    }
    res.per_rho.push_back(std::move(rr));
  }
  return res;
}

inline nlohmann::json to_json(const AnalysisResult& r) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& rr : r.per_rho) {
    for (const auto& b : rr.blocks) {
      out.push_back({{"rho_spec", rr.rho_spec},
                     {"block", b.label},
                     {"n_draws", r.n_draws},
                     {"D", r.mc_draws},
                     {"NIE", summary_json(b.posterior.nie_summary())},
                     {"NDE", summary_json(b.posterior.nde_summary())},
                     {"ATE", summary_json(b.posterior.ate_summary())}});
    }
  }
  return out;
}

inline void write_analysis_csv(std::ostream& out, const AnalysisResult& r) {
  out << "rho_spec,block,estimand,mean,lo95,hi95\n";
  for (const auto& rr : r.per_rho)
    for (const auto& b : rr.blocks) {
      const std::pair<const char*, Summary> rows[] = {{"NIE", b.posterior.nie_summary()},
                                                     {"NDE", b.posterior.nde_summary()},
                                                     {"ATE", b.posterior.ate_summary()}};
      for (const auto& [name, s] : rows)
        out << rr.rho_spec << ',' << b.label << ',' << name << ',' << fmt6(s.mean) << ',' << fmt6(s.lo95) << ','
            << fmt6(s.hi95) << '\n';
    }
}

inline void write_draws_csv(std::ostream& out, const AnalysisResult& r) {
  out << "rho_spec,block,draw,nie,nde,ate\n";
  for (const auto& rr : r.per_rho)
    for (const auto& b : rr.blocks)
      for (std::size_t k = 0; k < b.posterior.nie.size(); ++k)
        out << rr.rho_spec << ',' << b.label << ',' << k << ',' << fmt6(b.posterior.nie[k]) << ','
            << fmt6(b.posterior.nde[k]) << ',' << fmt6(b.posterior.ate[k]) << '\n';
}

}  // namespace edpm
