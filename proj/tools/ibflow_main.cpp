// ibflow: command-line driver for the flow, solver and verification experiments.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>

#include <CLI11.hpp>

#include "ibflow/errors.hpp"
#include "ibflow/experiments.hpp"

namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ibflow::ParameterError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path output_path(const ibflow::ExperimentConfig& cfg, const std::string& cli_out, const std::string& fallback) {
  if (!cli_out.empty()) return cli_out;
  if (!cfg.output.empty()) return cfg.output;
  return fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow limits, implicit regularizers and KKT checks for overparameterized linear models"};
  app.require_subcommand(1, 1);

  std::string config_path, out, via;
  bool paper_scale = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "integrate the gradient flow for the first grid cell"},
      {"solve", "minimize the implicit regularizer for the first grid cell"},
      {"sweep", "population error over the (alpha, s, seed) grid"},
      {"contour", "regularizer contour panels"},
      {"compare", "flow limit against the regularizer minimizer per cell"},
      {"verify", "metric-tensor and warp checks"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output file or directory");
    sub->add_option("--via", via, "predictor source for sweeps")->check(CLI::IsMember({"flow", "solver"}));
    sub->add_flag("--paper-scale", paper_scale, "use n=100, d=1000, r*=5");
    sub->add_option("--seed", seed, "dataset seed (overrides the config)");
    sub->add_option("--jobs", jobs, "worker threads for grid cells")->check(CLI::PositiveNumber);
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      j = nlohmann::json::parse(in);
    }
    j["experiment"] = command;
    if (!via.empty()) j["via"] = via;
    if (seed) {
      j["dataset"]["seed"] = *seed;
      j["seeds"] = nlohmann::json::array({*seed});
    }
    if (jobs) j["jobs"] = *jobs;
    if (paper_scale) j["paper_scale"] = true;
    const ibflow::ExperimentConfig cfg = ibflow::config_from_json(j);

    bool pass = true;
    if (command == "simulate") {
      const auto traj = ibflow::run_simulate(cfg);
      const fs::path path = output_path(cfg, out, "trajectory.csv");
      ibflow::write_trajectory_csv(traj, path, cfg.dataset.d <= 200);
      fs::path params_path = path;
      params_path.replace_extension(".terminal.json");
      write_json(params_path, ibflow::to_json(traj.terminal_params));
      pass = traj.converged;
      std::cout << "simulate: steps=" << traj.steps << " t=" << traj.times.back()
                << " converged=" << traj.converged << " drift_max_relative=" << traj.drift.max_relative << '\n';
    } else if (command == "solve") {
      const auto rep = ibflow::run_solve(cfg);
      write_json(output_path(cfg, out, "solve.json"), ibflow::to_json(rep));
      pass = rep.converged;
      std::cout << "solve: iterations=" << rep.iterations << " stationarity=" << rep.stationarity_residual
                << " feasibility=" << rep.feasibility_residual << " converged=" << rep.converged << '\n';
    } else if (command == "sweep") {
      const auto cells = ibflow::run_sweep(cfg);
      ibflow::write_sweep_csv(cells, output_path(cfg, out, "sweep.csv"));
      for (const auto& c : cells) pass = pass && c.converged;
      std::cout << "sweep: " << cells.size() << " cells, all converged=" << pass << '\n';
    } else if (command == "contour") {
      const auto panels = ibflow::run_contour(cfg);
      ibflow::write_contour(panels, output_path(cfg, out, "contour"));
      for (const auto& p : panels) pass = pass && p.min_at_wtilde0();
      std::cout << "contour: " << panels.size() << " panels, minima at wtilde0=" << pass << '\n';
    } else if (command == "compare") {
      const auto res = ibflow::run_compare(cfg);
      write_json(output_path(cfg, out, "compare.json"), res.report);
      pass = res.pass;
      std::cout << "compare: pass=" << pass << '\n';
    } else if (command == "verify") {
      const auto res = ibflow::run_verify(cfg);
      write_json(output_path(cfg, out, "verify.json"), res.report);
      pass = res.pass;
      std::cout << "verify: " << res.report.dump() << '\n';
    }
    return pass ? EXIT_SUCCESS : EXIT_FAILURE;
  } catch (const std::exception& e) {
    std::cerr << "ibflow " << command << ": " << e.what() << '\n';
    return 2;
  }
}
