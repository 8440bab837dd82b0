#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ibflow/data.hpp"

namespace ibflow {

// w~ = u+ * v+ - u- * v- (elementwise).
struct DiagonalParams {
  Eigen::VectorXd u_plus, u_minus, v_plus, v_minus;
};

// f(x) = sum_i a_i w_i^T x; column i of W is w_i.
struct FcParams {
  Eigen::VectorXd a;
  Eigen::MatrixXd W;
};

// f(x) = a * sigma(w^T x), sigma(z) = max(z, rho z).
struct LeakyParams {
  double a = 0.0;
  Eigen::VectorXd w;
  double rho = 1.0;
};

using ModelParams = std::variant<DiagonalParams, FcParams, LeakyParams>;

enum class Family { kDiagonal, kFcSingle, kLeaky };

Family family_from_string(const std::string& name);
std::string to_string(Family family);

struct InitShapeScale {
  double alpha = 1.0;
  double shape = 0.0;
  std::optional<Eigen::VectorXd> orientation;
};

struct ShapeScale {
  double alpha = 1.0;
  double s = 0.0;
};

struct ConservedDiag {
  Eigen::VectorXd c, delta_plus, delta_minus;
};

struct ConservedFc {
  Eigen::VectorXd delta;
  Eigen::MatrixXd Delta;
};

struct LossResidual {
  double loss = 0.0;
  Eigen::VectorXd r;  // (y - f) / N
};

template <typename P>
struct Initialized {
  P params;
  // s < 0 gives delta < 0, where the single-neuron results do not apply.
  bool outside_theorem_scope = false;
};

void validate(const DiagonalParams& p);
void validate(const FcParams& p);
void validate(const LeakyParams& p);

Eigen::Index dim(const DiagonalParams& p);
Eigen::Index dim(const FcParams& p);
Eigen::Index dim(const LeakyParams& p);
Eigen::Index dim(const ModelParams& p);

Eigen::VectorXd predictor(const DiagonalParams& p);
Eigen::VectorXd predictor(const FcParams& p);
// a * w: the vector the leaky regularizer is evaluated at. Equals the linear
// predictor only when rho = 1.
Eigen::VectorXd predictor(const LeakyParams& p);
Eigen::VectorXd predictor(const ModelParams& p);

// Model outputs on the columns of X.
Eigen::VectorXd outputs(const DiagonalParams& p, const Eigen::MatrixXd& X);
Eigen::VectorXd outputs(const FcParams& p, const Eigen::MatrixXd& X);
Eigen::VectorXd outputs(const LeakyParams& p, const Eigen::MatrixXd& X);
Eigen::VectorXd outputs(const ModelParams& p, const Eigen::MatrixXd& X);

// Subgradient of the leaky activation at each sample; 1 at the kink.
Eigen::VectorXd activation_slopes(const LeakyParams& p, const Eigen::MatrixXd& X);

LossResidual loss_and_residual(const DiagonalParams& p, const Dataset& data);
LossResidual loss_and_residual(const FcParams& p, const Dataset& data);
LossResidual loss_and_residual(const LeakyParams& p, const Dataset& data);
LossResidual loss_and_residual(const ModelParams& p, const Dataset& data);

// Gradient of L = (1/2N) sum (y - f)^2; the flow is theta' = -gradient.
DiagonalParams gradient(const DiagonalParams& p, const Dataset& data);
FcParams gradient(const FcParams& p, const Dataset& data);
LeakyParams gradient(const LeakyParams& p, const Dataset& data);

ConservedDiag conserved(const DiagonalParams& p);
ConservedFc conserved(const FcParams& p);
ConservedFc conserved(const LeakyParams& p);

// Flat state vector used by the integrator. Leaky packs (a, w) like an fc
// neuron so that rho = 1 reproduces the fc path.
Eigen::VectorXd to_state(const DiagonalParams& p);
Eigen::VectorXd to_state(const FcParams& p);
Eigen::VectorXd to_state(const LeakyParams& p);
DiagonalParams from_state(const DiagonalParams& like, const Eigen::VectorXd& x);
FcParams from_state(const FcParams& like, const Eigen::VectorXd& x);
LeakyParams from_state(const LeakyParams& like, const Eigen::VectorXd& x);

// Unbiased (u+ = u-, v+ = v-) with the same (alpha, s) on every coordinate.
DiagonalParams init_diagonal(const InitShapeScale& spec, Eigen::Index d);
Initialized<FcParams> init_fc_single(const InitShapeScale& spec);
Initialized<LeakyParams> init_leaky(const InitShapeScale& spec, double rho);
// One neuron per entry; every entry needs an orientation.
Initialized<FcParams> init_fc(const std::vector<InitShapeScale>& neurons);

// W = c a^T, hence a a^T = W^T W.
FcParams balanced_multi_init(const Eigen::VectorXd& a, const Eigen::VectorXd& c);

ShapeScale shape_scale_of(const DiagonalParams& p, Eigen::Index i);
ShapeScale shape_scale_of(const FcParams& p, Eigen::Index neuron = 0);
ShapeScale shape_scale_of(const LeakyParams& p);

nlohmann::json to_json(const ModelParams& p);
ModelParams params_from_json(const nlohmann::json& j);

}  // namespace ibflow
