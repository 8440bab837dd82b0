#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ibflow/data.hpp"
#include "ibflow/models.hpp"
#include "ibflow/regularizers.hpp"

namespace ibflow {

struct SolverOptions {
  // Newton stops once ||X^T w - y|| / max(1, ||y||) falls below this.
  double feasibility_tol = 1e-12;
  // Reported convergence also requires the stationarity residual below this.
  double stationarity_tol = 1e-8;
  int max_iter = 200;
};

struct KKTReport {
  Eigen::VectorXd w;
  Eigen::VectorXd nu;
  // min over nu of ||grad Q(w) - X nu||.
  double stationarity_residual = 0.0;
  // ||X^T w - y|| / max(1, ||y||).
  double feasibility_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string diagnostics;
  // Leaky check only: samples exactly at the activation kink.
  std::vector<Eigen::Index> kink_samples;
};

// Throws DuplicateSampleError for repeated columns and SingularSystemError
// when rank(X) < N under a pivoted QR with threshold 1e-10 ||X||.
void check_full_column_rank(const Eigen::MatrixXd& X);

// Dual Newton on F(nu) = X^T w(nu) - y with w(nu)_i = (sqrt k_i / 2) sinh(2 (X nu)_i).
KKTReport solve_diagonal(const Dataset& data, const Eigen::VectorXd& k, const SolverOptions& opts = {});

// Same for RadialQ, w(nu) = rho(m) (p - z) / m with p = X nu, m = ||p - z||
// and rho the inverse of qhat'.
KKTReport solve_radial(const Dataset& data, double delta, const Eigen::VectorXd& wtilde0,
                       const SolverOptions& opts = {});

// Any regularizer: Newton for DiagonalQ / RadialQ, closed forms for the
// quadratic ones, the basis-pursuit oracle for L1.
KKTReport solve(const RegularizerSpec& spec, const Dataset& data, const SolverOptions& opts = {});

// X (X^T X)^{-1} y through a QR factorization of X.
Eigen::VectorXd min_l2(const Dataset& data);

// argmin sum_i weights_i w_i^2 subject to X^T w = y.
Eigen::VectorXd min_weighted_l2(const Dataset& data, const Eigen::VectorXd& weights);

struct L1Result {
  Eigen::VectorXd w;
  Eigen::VectorXd dual;  // feasible: ||X dual||_inf <= 1
  double duality_gap = 0.0;
  int iterations = 0;
};

// Basis pursuit by ADMM, followed by a basic-solution polish with a dual
// certificate. Iterates until the gap is <= 1e-9 max(1, ||w||_1).
L1Result l1_oracle_detailed(const Dataset& data);
Eigen::VectorXd l1_oracle(const Dataset& data);

KKTReport kkt_residuals(const RegularizerSpec& spec, const Eigen::VectorXd& w, const Dataset& data);

// KKT residuals of the leaky neuron against q (built from its init): nu by
// least squares over the features c_n x_n, feasibility of a sigma(X^T w) = y.
KKTReport leaky_kkt_check(const LeakyParams& params, const RadialQ& q, const Dataset& data, double tol = 1e-4);

nlohmann::json to_json(const KKTReport& report);

}  // namespace ibflow
