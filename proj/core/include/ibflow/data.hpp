#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace ibflow {

struct GenerationInfo {
  int n = 0;
  int d = 0;
  int r_star = 0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

// Columns of X are samples: X is d x N and y has length N.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::optional<Eigen::VectorXd> beta_star;
  double noise_var = 0.0;
  std::optional<GenerationInfo> generation;

  Eigen::Index dim() const { return X.rows(); }
  Eigen::Index samples() const { return X.cols(); }
};

// One (alpha, s, seed) cell of a population-error sweep.
struct SweepCell {
  double alpha = 0.0;
  double shape = 0.0;
  std::uint64_t seed = 0;
  double pop_error = 0.0;
  double train_residual = 0.0;
  bool converged = false;
};

// Throws ParameterError when the Dataset invariants are violated.
void validate(const Dataset& data);

// x ~ N(0, I_d), y = <beta*, x> + noise_std * eps. beta* is 1/sqrt(r_star)
// on the first r_star coordinates. Samples are drawn column by column, then
// the N noise draws.
Dataset gen_sparse_regression(int n, int d, int r_star, double noise_std,
                              std::uint64_t seed);

// E[(y - w^T x)^2] = ||beta* - w||^2 + noise_var for x ~ N(0, I).
double population_error(const Eigen::VectorXd& w, const Dataset& data);

// X.csv (d rows, N columns), y.csv (one column) and dataset.json.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json sidecar_json(const Dataset& data);

}  // namespace ibflow
