#include <cmath>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "ibflow/errors.hpp"
#include "ibflow/flow.hpp"
#include "ibflow/regularizers.hpp"
#include "ibflow/rng.hpp"
#include "ibflow/warp.hpp"

namespace ibflow {
namespace {

TEST(MetricTensor, Examples) {
  const Eigen::MatrixXd H = metric_tensor_fc(Eigen::Vector2d(1.0, 0.0), 0.0);
  EXPECT_LE((H - Eigen::Vector2d(0.5, 1.0).asDiagonal().toDenseMatrix()).norm(), 1e-15);
  const double delta = 1e8;
  const Eigen::MatrixXd Hbig = metric_tensor_fc(Eigen::Vector2d(1.0, 2.0), delta);
  EXPECT_LE((delta * Hbig - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-7);
  EXPECT_THROW(metric_tensor_fc(Eigen::Vector2d::Zero(), 0.0), SingularSystemError);
  EXPECT_NO_THROW(metric_tensor_fc(Eigen::Vector2d::Zero(), 1.0));
}

TEST(MetricTensor, PositiveDefiniteWithDampedRadialDirection) {
  GaussianStream rng(1);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd w = rng.vector(4);
    const double delta = std::abs(rng.next()) * 5.0;
    const Eigen::MatrixXd H = metric_tensor_fc(w, delta);
    EXPECT_LE((H - H.transpose()).norm(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
    EXPECT_GT(eig.eigenvalues()(0), 0.0);
    const Eigen::VectorXd u = w.normalized();
    EXPECT_NEAR(u.dot(H * u), eig.eigenvalues()(0), 1e-12 * eig.eigenvalues()(3));
  }
}

TEST(HessianMapDefect, ConstantField) {
  const TensorField two_i = [](const Eigen::VectorXd& w) {
    return Eigen::MatrixXd(2.0 * Eigen::MatrixXd::Identity(w.size(), w.size()));
  };
  EXPECT_LE(hessian_map_defect(two_i, Eigen::Vector3d(0.3, -1.0, 2.0)), 1e-10);
}

TEST(HessianMapDefect, Dichotomy) {
  const double unwarped =
      hessian_map_defect([](const Eigen::VectorXd& w) { return metric_tensor_fc(w, 0.0); }, Eigen::Vector2d(1, 1));
  EXPECT_NEAR(unwarped, 1.0 / (4.0 * std::sqrt(2.0)), 1e-4);
  EXPECT_LE(hessian_map_defect([](const Eigen::VectorXd& w) { return warped_metric_fc(w, 0.0); },
                               Eigen::Vector2d(1, 1)),
            1e-6);
  GaussianStream rng(2);
  for (double delta : {0.0, 1.0})
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd w = rng.vector(3);
      EXPECT_GT(hessian_map_defect([delta](const Eigen::VectorXd& v) { return metric_tensor_fc(v, delta); }, w),
                1e-3);
      EXPECT_LE(hessian_map_defect([delta](const Eigen::VectorXd& v) { return warped_metric_fc(v, delta); }, w),
                1e-6);
    }
}

TEST(GHat, Examples) {
  EXPECT_NEAR(g_hat(4.0, 0.0), 2.0, 1e-15);
  EXPECT_NEAR(g_hat(1e-8, 1.0), 1.0, 1e-4);
  EXPECT_THROW(g_hat(0.0, 1.0), ParameterError);
  EXPECT_THROW(g_hat(-1.0, 1.0), ParameterError);
}

TEST(GHat, ProductFormAndMonotone) {
  for (double delta : {0.0, 0.1, 10.0}) {
    double prev = 0.0;
    for (int e = -60; e <= 60; ++e) {
      const double x = std::pow(10.0, e / 10.0);
      const double g = g_hat(x, delta);
      EXPECT_GT(g, prev);
      prev = g;
      const double S = std::sqrt(x * x + delta * delta / 4.0);
      if (x > 1e-3) EXPECT_NEAR(g, qhat::profile(x, delta) / x * (delta / 2.0 + S), 1e-12 * g);
    }
  }
}

Trajectory single_neuron_run(double t_max) {
  const Dataset data = gen_sparse_regression(6, 12, 2, 0.0, 3);
  GaussianStream rng(3);
  const auto init = init_fc_single({0.5, 0.3, rng.unit_vector(12)});
  FlowOptions opts;
  opts.stop_feasibility = 1e-10;
  opts.t_max = t_max;
  return integrate(init.params, data, opts);
}

TEST(WarpIntegral, ConvergedRunHasFiniteNuAndDivergingTau) {
  const Trajectory traj = single_neuron_run(1e9);
  ASSERT_TRUE(traj.converged);
  const WarpIntegral wi = warp_integral(traj, shape_scale_algebra(0.5, 0.3).delta);
  EXPECT_EQ(wi.nu_status, TailStatus::kConverging);
  EXPECT_LT(wi.nu_tail_ratio, 0.9);
  EXPECT_TRUE(wi.tau_diverging);
  EXPECT_EQ(wi.nu_window_increments.size(), static_cast<std::size_t>(kTailWindows));
  EXPECT_GT(wi.tau_integral, 0.0);
}

TEST(WarpIntegral, TauGrowsWithHorizon) {
  const double delta = shape_scale_algebra(0.5, 0.3).delta;
  double prev = 0.0;
  for (double t : {1.0, 10.0, 100.0}) {
    const double tau = warp_integral(single_neuron_run(t), delta).tau_integral;
    EXPECT_GT(tau, prev);
    prev = tau;
  }
}

TEST(WarpIntegral, StalledRunIsInconclusive) {
  const Trajectory traj = single_neuron_run(1e-2);
  ASSERT_FALSE(traj.converged);
  EXPECT_EQ(warp_integral(traj, 1.0).nu_status, TailStatus::kInconclusive);
}

TEST(WarpIntegral, NeedsTwoSnapshots) {
  Trajectory traj;
  traj.times = {0.0};
  traj.predictor_snapshots = {Eigen::VectorXd::Ones(2)};
  traj.residual_norms = {1.0};
  EXPECT_THROW(warp_integral(traj, 0.0), ParameterError);
}

}  // namespace
}  // namespace ibflow
