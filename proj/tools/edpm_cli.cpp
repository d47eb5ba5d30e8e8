// edpm: truth / simulate / analyze subcommands.

#include "edpm/edpm.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw edpm::ConfigError("cannot open output file '" + path + "'");
  return out;
}

void write_manifest(const std::string& out_path, const nlohmann::json& cfg, std::uint64_t seed,
                    const std::string& command) {
  auto m = open_out(out_path + ".manifest.json");
  m << edpm::manifest_json(cfg, seed, command).dump(2) << '\n';
}

void write_metrics(std::ostream& out, const std::vector<edpm::MetricsRow>& rows) {
  using edpm::fmt6;
  out << "scenario,estimand,truth,n,bias,mse,cil,cp\n";
  for (const auto& r : rows)
    out << r.scenario << ',' << r.estimand << ',' << fmt6(r.truth) << ',' << r.n << ',' << fmt6(r.bias) << ','
        << fmt6(r.mse) << ',' << fmt6(r.ci_length) << ',' << fmt6(r.coverage) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian nonparametric causal mediation with a post-treatment confounder"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  bool print_config = false;
  std::string config_path;
  std::uint64_t seed = 20240101;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_flag("--print-config", print_config, "Print the effective configuration (defaults + --config) and exit");
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Master RNG seed");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* truth = app.add_subcommand("truth", "Monte-Carlo ground truth of NIE/NDE/ATE for a scenario");
  int scenario_id = 1;
  std::size_t mc_n = 0;
  std::string out_path;
  truth->add_option("--scenario", scenario_id, "Scenario 1..12")->required();
  truth->add_option("--mc-n", mc_n, "Monte-Carlo sample size (default: simulation.truth_mc_n)");
  truth->add_option("--out", out_path, "Output CSV (default: stdout)");

  auto* simulate = app.add_subcommand("simulate", "Replication study for one scenario and estimator");
  std::size_t n = 250, reps = 100;
  std::string model_name = "edpm";
  simulate->add_option("--scenario", scenario_id, "Scenario 1..12")->required();
  simulate->add_option("--n", n, "Sample size per dataset")->check(CLI::PositiveNumber);
  simulate->add_option("--reps", reps, "Number of replications")->check(CLI::PositiveNumber);
  simulate->add_option("--model", model_name, "edpm | edpm_no_v | parametric");
  simulate->add_option("--mc-n", mc_n, "Monte-Carlo size for the truth (default: simulation.truth_mc_n)");
  simulate->add_option("--out", out_path, "Output metrics CSV (default: stdout)");

  auto* analyze = app.add_subcommand("analyze", "Fit a dataset and report effect posteriors");
  std::string data_path, condition;
  std::vector<std::string> rho_specs;
  bool raw_draws = false;
  analyze->add_option("--data", data_path, "Input CSV with columns y,m,v,z and covariates")->required();
  analyze->add_option("--rho", rho_specs, "rho spec(s): fixed:v | uniform:lo:hi | triangular:a:c:b");
  analyze->add_option("--condition", condition, "Conditional effects: column (binary, all levels) or column=value");
  analyze->add_option("--out", out_path, "Output prefix; writes <out>.json and <out>.csv (default: JSON to stdout)");
  analyze->add_flag("--raw-draws", raw_draws, "Also write per-draw effects to <out>.draws.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    edpm::AppConfig cfg = config_path.empty() ? edpm::AppConfig{} : edpm::load_config(config_path);
    if (!rho_specs.empty()) {
      cfg.rho_specs = rho_specs;
      for (const auto& r : rho_specs) {
        try {
          edpm::SensitivitySpec::parse(r);
        } catch (const std::invalid_argument& e) {
          throw edpm::ConfigError(e.what());
        }
      }
    }
    if (mc_n > 0) cfg.truth_mc_n = mc_n;
    const nlohmann::json cfg_json = edpm::to_json(cfg);
    if (print_config) {
      std::cout << cfg_json.dump(2) << '\n';
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return kExitConfig;
    }

    if (truth->parsed() || simulate->parsed()) {
      if (scenario_id < 1 || scenario_id > 12) throw edpm::ConfigError("--scenario must be in 1..12");
    }

    if (truth->parsed()) {
      const auto spec = edpm::scenario(scenario_id);
      const auto t = edpm::true_effects(spec, cfg.truth_mc_n, seed, threads);
      std::ofstream file;
      std::ostream& out = out_path.empty() ? std::cout : (file = open_out(out_path), file);
      out << "scenario,estimand,truth,mc_n\n";
      out << scenario_id << ",NIE," << edpm::fmt6(t.nie) << ',' << cfg.truth_mc_n << '\n';
      out << scenario_id << ",NDE," << edpm::fmt6(t.nde) << ',' << cfg.truth_mc_n << '\n';
      out << scenario_id << ",ATE," << edpm::fmt6(t.ate) << ',' << cfg.truth_mc_n << '\n';
      if (!out_path.empty()) write_manifest(out_path, cfg_json, seed, "truth");
      return kExitOk;
    }

    if (simulate->parsed()) {
      edpm::ModelKind kind;
      try {
        kind = edpm::parse_model_kind(model_name);
      } catch (const std::invalid_argument& e) {
        throw edpm::ConfigError(e.what());
      }
      const auto spec = edpm::scenario(scenario_id);
      const auto truth_vals = edpm::true_effects(spec, cfg.truth_mc_n, edpm::derive_seed(seed, 0xface), threads);
      edpm::GCompConfig g;
      g.mc_draws = cfg.mc_draws;
      g.eps_tol = cfg.eps_tol;
      g.sensitivity = edpm::SensitivitySpec::parse(cfg.rho_specs.front());
      std::size_t done = 0;
      const auto res = edpm::run_replications(spec, n, reps, kind, cfg.chain, g, truth_vals, seed, threads,
                                              [&](std::size_t, bool ok) {
                                                ++done;
                                                std::cerr << "\rreplication " << done << "/" << reps
                                                          << (ok ? "" : " (failed)") << std::flush;
                                              });
      std::cerr << '\n';
      std::ofstream file;
      std::ostream& out = out_path.empty() ? std::cout : (file = open_out(out_path), file);
      write_metrics(out, res.rows);
      for (const auto& msg : res.failure_messages) std::cerr << msg << '\n';
      if (!out_path.empty()) write_manifest(out_path, cfg_json, seed, "simulate");
      return res.failures == 0 ? kExitOk : kExitData;
    }

    // analyze
    std::ifstream in(data_path);
    if (!in) throw edpm::DataError("cannot open data file '" + data_path + "'");
    const edpm::AnalysisData data = edpm::parse_analysis_csv(edpm::read_csv(in), cfg.binary_columns);
    std::optional<edpm::ConditionRequest> cond;
    if (!condition.empty()) cond = edpm::parse_condition(condition);
    const auto result = edpm::analyze(data, cfg, seed, threads, cond);
    if (result.diagnostics.prior_fallbacks > 0)
      std::cerr << "note: " << result.diagnostics.prior_fallbacks
                << " parameter refreshes fell back to prior draws (singular within-cluster designs)\n";
    const nlohmann::json js = edpm::to_json(result);
    if (out_path.empty()) {
      std::cout << js.dump(2) << '\n';
    } else {
      open_out(out_path + ".json") << js.dump(2) << '\n';
      auto csv = open_out(out_path + ".csv");
      edpm::write_analysis_csv(csv, result);
      if (raw_draws) {
        auto draws = open_out(out_path + ".draws.csv");
        edpm::write_draws_csv(draws, result);
      }
      write_manifest(out_path, cfg_json, seed, "analyze");
    }
    return kExitOk;
  } catch (const edpm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const edpm::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
