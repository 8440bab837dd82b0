#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ibflow/data.hpp"
#include "ibflow/flow.hpp"
#include "ibflow/kkt.hpp"

namespace ibflow {

enum class ExperimentKind { kSimulate, kSolve, kSweep, kContour, kCompare, kVerify };
enum class Via { kFlow, kSolver };

ExperimentKind experiment_kind_from_string(const std::string& name);
std::string to_string(ExperimentKind kind);

struct DatasetSpec {
  int n = 40;
  int d = 200;
  int r_star = 5;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

struct ContourPanelSpec {
  double alpha = 1.0;
  double shape = 0.0;
};

// Families: diagonal, fc_single, fc_balanced (W = c a^T, a_i = sqrt(alpha)),
// fc_multi (independent neurons of scale alpha), leaky.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kSweep;
  DatasetSpec dataset;
  std::string family = "diagonal";
  std::vector<double> alphas{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> shapes{0.0, 0.5, 0.9, 0.99};
  // Dataset seeds; empty means {dataset.seed}.
  std::vector<std::uint64_t> seeds;
  FlowOptions flow;
  SolverOptions solver;
  std::string output;
  Via via = Via::kFlow;
  int jobs = 1;
  double rho = 1.0;
  int neurons = 3;
  // Contour grid.
  std::vector<ContourPanelSpec> panels{{2.0, 0.0}, {2.0, 0.2}, {2.0, 0.8}, {0.01, 0.1}, {1.0, 0.1}, {2.5, 0.1}};
  double window_lo = -3.0;
  double window_hi = 3.0;
  int grid = 201;
  Eigen::Vector2d contour_direction{0.6, 0.8};
  // Pass thresholds.
  double compare_tol = 1e-2;
  double kkt_tol = 1e-8;
};

void validate(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
// n = 100, d = 1000, r* = 5.
void apply_paper_scale(ExperimentConfig& config);
std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& config);

Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed);
// Per-cell child seed used for random orientations.
std::uint64_t cell_seed(std::uint64_t seed, std::size_t alpha_index, std::size_t shape_index);

// Rows in (seed, alpha, s) row-major order.
std::vector<SweepCell> run_sweep(const ExperimentConfig& config);
void write_sweep_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path);

struct ContourPanel {
  double alpha = 0.0;
  double shape = 0.0;
  double delta = 0.0;
  Eigen::VectorXd wtilde0;
  Eigen::VectorXd axis;     // grid coordinates, shared by both axes
  Eigen::MatrixXd values;   // values(i, j) = q(axis(i), axis(j))
  Eigen::Index argmin_i = 0, argmin_j = 0;
  Eigen::Index nearest_i = 0, nearest_j = 0;  // grid point nearest wtilde0
  bool min_at_wtilde0() const { return argmin_i == nearest_i && argmin_j == nearest_j; }
};

std::vector<ContourPanel> run_contour(const ExperimentConfig& config);
// One CSV (alpha,s,w1,w2,q_value) plus one metadata JSON per panel.
void write_contour(const std::vector<ContourPanel>& panels, const std::filesystem::path& dir);
nlohmann::json panel_metadata(const ContourPanel& panel);

struct CompareResult {
  nlohmann::json report;
  bool pass = false;
};

// Flow limit against the Q-minimizer for every (alpha, s, seed) cell.
CompareResult run_compare(const ExperimentConfig& config);

struct VerifyResult {
  nlohmann::json report;
  bool pass = false;
};

VerifyResult run_verify(const ExperimentConfig& config);

// Single flow run at the first (alpha, s, seed).
Trajectory run_simulate(const ExperimentConfig& config);
// Q-minimizer for the init at the first (alpha, s, seed).
KKTReport run_solve(const ExperimentConfig& config);

// Model and Q for one cell, shared by the runners.
struct CellSetup {
  Dataset data;
  ModelParams params0;
  std::optional<RegularizerSpec> q;  // absent for leaky with rho != 1 (no convex Q)
  std::optional<RadialQ> leaky_q;
};

CellSetup setup_cell(const ExperimentConfig& config, double alpha, double shape, std::uint64_t seed,
                     std::uint64_t child_seed);

}  // namespace ibflow
