#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "ibflow/flow.hpp"

namespace ibflow {

// H(w) = P^{-1} (I - w w^T / (2 P S)), S = sqrt(delta^2/4 + ||w||^2), P = delta/2 + S.
Eigen::MatrixXd metric_tensor_fc(const Eigen::VectorXd& w, double delta);

// ghat(||w||) H(w); equals the Hessian of RadialQ divided by 3/2.
Eigen::MatrixXd warped_metric_fc(const Eigen::VectorXd& w, double delta);

using TensorField = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

// max over (i, j, k) of |dH_ij/dw_k - dH_ik/dw_j| by central differences.
// fd_step <= 0 selects 1e-5 (1 + ||w||).
double hessian_map_defect(const TensorField& field, const Eigen::VectorXd& w, double fd_step = 0.0);

// ghat(x) = (phi(x) / x) (delta/2 + S) = sqrt(delta/2 + S); tends to sqrt(delta) as x -> 0+.
double g_hat(double x, double delta);

enum class TailStatus { kConverging, kNotDecaying, kInconclusive };

struct WarpIntegral {
  // Trapezoid estimate of the integral of ghat(||w~(t)||) over the record.
  double tau_integral = 0.0;
  // True when the tau increments over the tail windows do not shrink.
  bool tau_diverging = false;
  // Integral of ghat(||w~||) ||r|| over the record.
  double nu_integral = 0.0;
  // Largest ratio of successive tail-window increments of the nu integral.
  double nu_tail_ratio = 0.0;
  TailStatus nu_status = TailStatus::kInconclusive;
  std::vector<double> nu_window_increments;
  std::vector<double> tau_window_increments;
};

inline constexpr int kTailWindows = 5;

// The tail starts where ||r|| first drops below 1e-3 ||r(0)|| and is split
// into kTailWindows windows of equal duration.
WarpIntegral warp_integral(const Trajectory& traj, double delta);

}  // namespace ibflow
