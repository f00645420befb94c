// heca: forecast-combination experiments from the command line.
//
//   heca --data panel.csv --algo heca,heca-delayed,equal-weight --out out/
//   heca --config run.cfg --pretty
//   heca --emit-synthetic "experts=8,periods=40,seed=7" > panel.csv

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "heca/heca.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Egalitarian-committee forecast combination with hedge aggregation"};
  app.set_version_flag("--version", "heca 1.0");

  std::string config_path;
  std::string synthetic;
  app.add_option("--config", config_path, "Flat key=value config file; flags override it");
  app.add_option("--emit-synthetic", synthetic,
                 "Write a synthetic panel (e.g. experts=8,periods=40,noise=0,seed=42,members=1;2;3,breaks=20) "
                 "to --out or stdout and exit");

  struct Flag {
    const char* name;
    const char* help;
    std::string value;
  };
  std::vector<Flag> flags = {
      {"data", "Panel CSV: period,target,<expert>...", {}},
      {"span", "Data span FIRST:LAST (period labels); default whole file", {}},
      {"eval-start", "Period of round 1; default earliest feasible", {}},
      {"algo", "Comma list of heca, heca-delayed, efp, efp-delayed, hedge, hedge-delayed, equal-weight", {}},
      {"window", "Estimation window r (default 16)", {}},
      {"val-window", "Validation window r_lambda (default 1)", {}},
      {"lambda-grid", "lo:step:hi or comma list (default 0.01:0.01:2)", {}},
      {"lag", "Lag l in {1,2} (default per algorithm)", {}},
      {"epsilon", "Lower bound on selected weights (default 5e-324)", {}},
      {"b1", "Initial maximal-loss guess: auto or a positive number", {}},
      {"backend", "exhaustive or branch-bound (default)", {}},
      {"schedule", "Learning-rate schedule: pseudocode (default) or proof", {}},
      {"out", "Output directory (synthetic mode: output file)", {}},
  };
  std::vector<CLI::Option*> options;
  for (auto& f : flags) options.push_back(app.add_option(std::string("--") + f.name, f.value, f.help));

  bool pretty = false;
  bool force_lag = false;
  bool audit = false;
  auto* pretty_opt = app.add_flag("--pretty", pretty, "Print an aligned summary table");
  auto* force_opt = app.add_flag("--force-lag", force_lag, "Allow a lag that does not match the algorithm");
  auto* audit_opt = app.add_flag("--audit", audit, "Write per-round committee records (committees.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (!synthetic.empty()) {
    const heca::ForecastPanel panel = heca::emit_synthetic(synthetic);
    const std::string& out_path = flags.back().value;
    if (out_path.empty()) {
      heca::write_panel(std::cout, panel);
    } else {
      std::ofstream out(out_path);
      if (!out) throw heca::ValidationError("cannot write '" + out_path + "'");
      heca::write_panel(out, panel);
    }
    return 0;
  }

  heca::ExperimentConfig cfg;
  if (!config_path.empty()) heca::load_config(config_path, cfg);
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (options[i]->count() > 0) heca::apply_setting(cfg, flags[i].name, flags[i].value);
  if (pretty_opt->count() > 0) cfg.pretty = true;
  if (force_opt->count() > 0) cfg.force_lag = true;
  if (audit_opt->count() > 0) cfg.audit = true;

  const heca::ExperimentResult res = heca::run_experiment(cfg);
  heca::write_artifacts(cfg, res);
  if (cfg.pretty) std::cout << heca::render_pretty(res);
  for (const auto& r : res.results)
    if (r.run.jensen_violations > 0)
      std::cerr << "warning: " << heca::to_string(r.algorithm) << " violated Jensen's inequality in "
                << r.run.jensen_violations << " rounds\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return heca::exit_code(e);
  }
}
