// Command-line front end: scenario simulation, filtering, optimization,
// PDE replication, identity verification, and convergence studies.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hiddendrift/harness.hpp"
#include "hiddendrift/io.hpp"

namespace hd = hiddendrift;

namespace {

struct CommonOptions {
  std::string config_file;
  std::string out_dir = "out";
  std::string format = "json";
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::size_t paths = 0;
  bool seed_set = false, dt_set = false, paths_set = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_file, "Scenario config file (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", opt.out_dir, "Output directory");
  cmd->add_option("--format", opt.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--seed", opt.seed, "Override the config seed")->each([&](const std::string&) { opt.seed_set = true; });
  cmd->add_option("--dt", opt.dt, "Override the config time step")->each([&](const std::string&) { opt.dt_set = true; });
  cmd->add_option("--paths", opt.paths, "Override the config path count")
      ->each([&](const std::string&) { opt.paths_set = true; });
}

hd::Json load_config(const CommonOptions& opt) {
  std::ifstream is(opt.config_file);
  hd::Json config;
  is >> config;
  if (opt.seed_set) config["seed"] = opt.seed;
  if (opt.dt_set) config["grid"]["dt"] = opt.dt;
  if (opt.paths_set) config["grid"]["paths"] = opt.paths;
  return config;
}

int cmd_simulate(const CommonOptions& opt, const std::string& measure_name) {
  const hd::Json config = load_config(opt);
  const hd::Scenario s = hd::scenario_from_json(config);
  const hd::Measure measure = measure_name == "pstar" ? hd::Measure::Pstar : hd::Measure::P;
  const hd::PathBundle bundle = hd::simulate_paths(s.market, s.dt, s.n_paths, s.seed, measure);
  std::filesystem::create_directories(opt.out_dir);
  if (opt.format == "csv") {
    std::ofstream os(opt.out_dir + "/paths.csv");
    hd::write_path_bundle_csv(os, bundle);
  } else {
    hd::write_path_bundle_binary(opt.out_dir + "/paths.bin", bundle);
  }
  hd::Json meta{{"version", hd::artifact_version()},
                {"config_hash", hd::config_hash(config)},
                {"seed", s.seed},
                {"dt", s.dt},
                {"paths", s.n_paths},
                {"measure", measure_name}};
  std::ofstream os(opt.out_dir + "/meta.json");
  os << meta.dump(2) << "\n";
  std::cout << "simulate: wrote " << s.n_paths << " paths to " << opt.out_dir << "\n";
  return 0;
}

int cmd_filter(const CommonOptions& opt) {
  const hd::Scenario s = hd::scenario_from_json(load_config(opt));
  const hd::FilterRunner fr(s);
  std::filesystem::create_directories(opt.out_dir);
  std::ofstream os(opt.out_dir + "/filter_trace.csv");
  hd::write_filter_trace_header(os, s.market.n_stocks, "ahat");
  const int steps = hd::grid_steps(s.market.horizon, s.dt);
  for (std::size_t p = 0; p < s.n_paths; ++p) {
    const hd::SinglePath path = hd::simulate_one_path(s.market, s.dt, s.seed, p, hd::Measure::P);
    const hd::Mat est = fr.estimates(path);
    const hd::Vec zbar = hd::zbar_exponential(est, hd::q_along_path(s.market, path, s.dt), path.excess, s.dt);
    for (int k = 0; k <= steps; ++k) {
      hd::write_filter_trace_row(os, p, k * s.dt, zbar[k], est.row(k).transpose());
    }
  }
  std::cout << "filter: wrote traces for " << s.n_paths << " paths to " << opt.out_dir << "/filter_trace.csv\n";
  return 0;
}

int cmd_optimize(const CommonOptions& opt) {
  const hd::Scenario s = hd::scenario_from_json(load_config(opt));
  const hd::Json report = hd::run_scenario(s, opt.out_dir, opt.format);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_replicate(const CommonOptions& opt) {
  const hd::Json config = load_config(opt);
  const hd::Scenario s = hd::scenario_from_json(config);
  const hd::Json pde = config.value("pde", hd::Json::object());
  const hd::Json report = hd::replicate_report(s, pde, opt.out_dir);
  std::cout << report.dump(2) << "\n";
  return report.value("fd_fk_within_band", false) ? 0 : 1;
}

int cmd_verify(const CommonOptions& opt, std::vector<std::string> names) {
  const hd::Json config = load_config(opt);
  const hd::Scenario s = hd::scenario_from_json(config);
  if (names.empty() && config.contains("identities")) {
    names = config.at("identities").get<std::vector<std::string>>();
  }
  if (names.empty()) {
    std::cerr << "verify: no identities requested (positional names or an 'identities' config list)\n";
    return 2;
  }
  std::filesystem::create_directories(opt.out_dir);
  hd::Json results = hd::Json::array();
  bool all_pass = true;
  for (const std::string& name : names) {
    const hd::IdentityResult r = hd::verify_identity(name, s);
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  lhs=" << hd::format_double(r.lhs)
              << " rhs=" << hd::format_double(r.rhs) << " tol=" << hd::format_double(r.tolerance) << "\n";
    results.push_back({{"name", r.name},
                       {"pass", r.pass},
                       {"lhs", r.lhs},
                       {"rhs", r.rhs},
                       {"tolerance", r.tolerance},
                       {"details", r.details}});
  }
  hd::Json report{{"version", hd::artifact_version()},
                  {"config_hash", hd::config_hash(config)},
                  {"seed", s.seed},
                  {"results", results},
                  {"all_pass", all_pass}};
  std::ofstream os(opt.out_dir + "/verify_report.json");
  os << report.dump(2) << "\n";
  return all_pass ? 0 : 1;
}

int cmd_converge(const CommonOptions& opt, std::vector<double> levels) {
  const hd::Json config = load_config(opt);
  const hd::Scenario s = hd::scenario_from_json(config);
  if (levels.empty() && config.contains("levels")) levels = config.at("levels").get<std::vector<double>>();
  if (levels.empty()) levels = {4.0 * s.dt, 2.0 * s.dt, s.dt};
  const hd::Json report = hd::convergence_study(s, levels);
  std::filesystem::create_directories(opt.out_dir);
  std::ofstream os(opt.out_dir + "/convergence.json");
  os << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Portfolio selection with unobservable drift: simulation, filtering, and replication"};
  app.require_subcommand(1);

  CommonOptions sim_opt, fil_opt, optim_opt, rep_opt, ver_opt, con_opt;
  std::string measure = "p";
  std::vector<std::string> identities;
  std::vector<double> levels;

  CLI::App* sim = app.add_subcommand("simulate", "Simulate market paths and export them");
  add_common(sim, sim_opt);
  sim->add_option("--measure", measure, "Sampling measure")->check(CLI::IsMember({"p", "pstar"}));

  CLI::App* fil = app.add_subcommand("filter", "Run the configured filter along simulated paths");
  add_common(fil, fil_opt);

  CLI::App* optim = app.add_subcommand("optimize", "Trade the optimal strategy and report expected utility");
  add_common(optim, optim_opt);

  CLI::App* rep = app.add_subcommand("replicate", "PDE-based replication of the optimal claim");
  add_common(rep, rep_opt);

  CLI::App* ver = app.add_subcommand("verify", "Check named identities; exit 0 iff all pass");
  add_common(ver, ver_opt);
  ver->add_option("identities", identities, "Identity names (see 'identities' config key)");

  CLI::App* con = app.add_subcommand("converge", "Coupled dt refinement study");
  add_common(con, con_opt);
  con->add_option("--levels", levels, "dt levels (integer multiples of the finest)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_opt, measure);
    if (fil->parsed()) return cmd_filter(fil_opt);
    if (optim->parsed()) return cmd_optimize(optim_opt);
    if (rep->parsed()) return cmd_replicate(rep_opt);
    if (ver->parsed()) return cmd_verify(ver_opt, identities);
    if (con->parsed()) return cmd_converge(con_opt, levels);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
