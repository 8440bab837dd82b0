#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace ibflow {

// Standard normal stream: std::mt19937_64 (sequence fixed by the C++
// standard) feeding a Box-Muller transform. std::normal_distribution is
// avoided because its algorithm is implementation-defined.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed);

  double next();
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();

  Eigen::VectorXd vector(Eigen::Index n);
  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols);
  // Uniformly distributed direction on the unit sphere.
  Eigen::VectorXd unit_vector(Eigen::Index n);

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// SplitMix64 finalizer, used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace ibflow
