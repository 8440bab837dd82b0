#pragma once

#include <variant>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ibflow/models.hpp"

namespace ibflow {

// Scalar potential of the diagonal network,
// q_k(x) = (sqrt k / 4) [1 - sqrt(1 + 4x^2/k) + (2x/sqrt k) asinh(2x/sqrt k)].
double qk_value(double x, double k);
double qk_gradient(double x, double k);          // asinh(2x/sqrt k) / 2
double qk_second_derivative(double x, double k);  // 1 / sqrt(k + 4x^2)
// Inverse of qk_gradient: (sqrt k / 2) sinh(2g). Throws OverflowGuardError for |2g| > 700.
double qk_gradient_inverse(double g, double k);

inline constexpr double kSinhArgumentLimit = 700.0;

// k_i = (delta+_i - delta-_i)^2 + 4 c_i^2.
Eigen::VectorXd k_from_init(const DiagonalParams& p0);

struct ShapeScaleAlgebra {
  double khat = 0.0;          // alpha / (1 - s^2)
  double delta = 0.0;         // 4 alpha s / (1 - s^2)
  double sqrt_combo = 0.0;    // sqrt(alpha^2 + delta^2/4) = alpha (1 + s^2) / (1 - s^2)
  double minus_branch = 0.0;  // sqrt_combo - delta/2 = alpha (1 - s) / (1 + s)
  double plus_branch = 0.0;   // sqrt_combo + delta/2 = alpha (1 + s) / (1 - s)
  double sqrt_k = 0.0;        // 4 alpha (1 + s^2) / (1 - s^2), unbiased diagonal init
};

ShapeScaleAlgebra shape_scale_algebra(double alpha, double s);

// Radial potential of a single fc neuron with balancedness delta >= 0:
//   qhat(x) = (x^2 - (delta/2)(delta/2 + S)) phi(x) / x,   S = sqrt(x^2 + delta^2/4),
//   phi(x)  = sqrt(S - delta/2).
// qhat'(x) = (3/2) phi(x). profile() returns phi and profile_inverse() its
// inverse r(m) = sqrt(m^4 + delta m^2).
namespace qhat {
double value(double x, double delta);
double derivative(double x, double delta);
double second_derivative(double x, double delta);
double profile(double x, double delta);
double profile_inverse(double m, double delta);
double derivative_inverse(double m, double delta);
// qhat'(x) / x, with its limit 3 / (2 sqrt(delta)) at x = 0 when delta > 0.
double radial_ratio(double x, double delta);
}  // namespace qhat

struct DiagonalQ {
  Eigen::VectorXd k;
};
// qhat_delta(||w||) + z^T w with z = -qhat'(||w~0||) w~0 / ||w~0||, so that
// the gradient vanishes at w~0. delta = 0 gives ||w||^{3/2} - (3/2)||w~0||^{-1/2} w~0^T w.
struct RadialQ {
  double delta = 0.0;
  Eigen::VectorXd wtilde0;
};
struct L1 {};
// (1/2) ||w||^2.
struct L2 {};
// sum_i weights_i w_i^2.
struct WeightedL2 {
  Eigen::VectorXd weights;
};
// (w - w~0)^T B (w - w~0).
struct MahalanobisAboutInit {
  Eigen::MatrixXd B;
  Eigen::VectorXd wtilde0;
};

using RegularizerSpec = std::variant<DiagonalQ, RadialQ, L1, L2, WeightedL2, MahalanobisAboutInit>;

struct QEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

void validate(const RegularizerSpec& spec);

// Gradient (or the documented subgradient) of Q at w. RadialQ at w = 0 returns z.
QEval q_eval(const RegularizerSpec& spec, const Eigen::VectorXd& w);

// Hessian of RadialQ at w != 0.
Eigen::MatrixXd radial_hessian(const RadialQ& spec, const Eigen::VectorXd& w);

Eigen::VectorXd radial_z(double delta, const Eigen::VectorXd& wtilde0);

// Q for the flow started at the given parameters.
DiagonalQ diagonal_q_from_init(const DiagonalParams& p0);  // rejects biased inits
RadialQ radial_q_from_init(const FcParams& p0);             // m = 1, or balanced m > 1 with delta = 0
RadialQ radial_q_from_init(const LeakyParams& p0);

// Large-k limit weights 1 / (2 (u+_i^2 + v+_i^2)).
WeightedL2 weighted_l2_from_init(const DiagonalParams& p0);

// B = I - ((1 - s)^2 / (2 (1 + s^2))) u u^T, accepted for s in (-1, 1].
Eigen::MatrixXd mahalanobis_B(double s, const Eigen::VectorXd& u);
MahalanobisAboutInit mahalanobis_about_init(double s, const Eigen::VectorXd& u, const Eigen::VectorXd& wtilde0);

// w^T A^{-1} w through a Cholesky factorization.
double rkhs_norm(const Eigen::VectorXd& w, const Eigen::MatrixXd& A);

nlohmann::json to_json(const RegularizerSpec& spec);
RegularizerSpec regularizer_from_json(const nlohmann::json& j);

}  // namespace ibflow
