#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ibflow/data.hpp"
#include "ibflow/models.hpp"

namespace ibflow {

struct FlowOptions {
  // The integrator uses min(rel_tol, 1e-2 stop_feasibility), likewise for abs_tol.
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  // Threshold on ||f - y|| / max(1, ||y||).
  double stop_feasibility = 1e-8;
  double t_max = 1e9;
  int record_stride = 1;
  long max_steps = 20'000'000;
  bool record_predictor = true;
  // Optional positive scalar field multiplying the vector field, evaluated
  // at the current predictor. Reparameterizes time only.
  std::function<double(const Eigen::VectorXd&)> warp;
};

void validate(const FlowOptions& opts);

struct DriftReport {
  std::map<std::string, Eigen::VectorXd> initial;
  std::map<std::string, Eigen::VectorXd> max_abs_drift;
  // max over entries of drift / (1 + |initial|).
  double max_relative = 0.0;
  double max_abs = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> predictor_snapshots;
  std::vector<double> loss_values;
  std::vector<double> feas_residuals;
  // ||r|| with r = (y - f) / N.
  std::vector<double> residual_norms;
  // Max absolute deviation of all conserved quantities from t = 0.
  std::vector<double> conserved_drift;
  ModelParams terminal_params;
  DriftReport drift;
  bool converged = false;
  long steps = 0;
  long rejected_steps = 0;
};

Trajectory integrate(const DiagonalParams& params0, const Dataset& data, const FlowOptions& opts = {});
Trajectory integrate(const FcParams& params0, const Dataset& data, const FlowOptions& opts = {});
Trajectory integrate(const LeakyParams& params0, const Dataset& data, const FlowOptions& opts = {});
Trajectory integrate(const ModelParams& params0, const Dataset& data, const FlowOptions& opts = {});

// Per-quantity max |Q(t) - Q(0)| over every accepted step.
DriftReport drift_report(const Trajectory& traj);

Eigen::VectorXd terminal_predictor(const Trajectory& traj);

// Header t,loss,feas_residual,drift_max[,wtilde_0,...].
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path,
                          bool include_predictor = true);

}  // namespace ibflow
