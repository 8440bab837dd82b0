#include "ibflow/warp.hpp"

#include <algorithm>
#include <cmath>

#include "ibflow/errors.hpp"

namespace ibflow {

Eigen::MatrixXd metric_tensor_fc(const Eigen::VectorXd& w, double delta) {
  if (!(delta >= 0.0)) throw ParameterError("metric tensor needs delta >= 0");
  const double S = std::hypot(w.norm(), 0.5 * delta);
  if (S == 0.0) throw SingularSystemError("metric tensor is singular at w = 0 with delta = 0");
  const double P = 0.5 * delta + S;
  const Eigen::Index d = w.size();
  return (Eigen::MatrixXd::Identity(d, d) - (w * w.transpose()) / (2.0 * P * S)) / P;
}

double g_hat(double x, double delta) {
  if (!(x > 0.0)) throw ParameterError("ghat needs x > 0");
  if (!(delta >= 0.0)) throw ParameterError("ghat needs delta >= 0");
  return std::sqrt(0.5 * delta + std::hypot(x, 0.5 * delta));
}

Eigen::MatrixXd warped_metric_fc(const Eigen::VectorXd& w, double delta) {
  const double r = w.norm();
  const double g = r > 0.0 ? g_hat(r, delta) : std::sqrt(delta);
  return g * metric_tensor_fc(w, delta);
}

double hessian_map_defect(const TensorField& field, const Eigen::VectorXd& w, double fd_step) {
  const Eigen::Index d = w.size();
  const double h = fd_step > 0.0 ? fd_step : 1e-5 * (1.0 + w.norm());
  std::vector<Eigen::MatrixXd> partial(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::VectorXd wp = w, wm = w;
    wp(k) += h;
    wm(k) -= h;
    const Eigen::MatrixXd Hp = field(wp), Hm = field(wm);
    if (!Hp.allFinite() || !Hm.allFinite()) throw NumericError("tensor field is not finite near w");
    partial[static_cast<std::size_t>(k)] = (Hp - Hm) / (2.0 * h);
  }
  double defect = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index k = 0; k < d; ++k)
        defect = std::max(defect, std::abs(partial[static_cast<std::size_t>(k)](i, j) -
                                           partial[static_cast<std::size_t>(j)](i, k)));
  return defect;
}

namespace {

// Integral of a piecewise-linear interpolant of (t, f) over [a, b].
double integrate_window(const std::vector<double>& t, const std::vector<double>& f, double a, double b) {
  auto at = [&](double s) {
    auto it = std::upper_bound(t.begin(), t.end(), s);
    if (it == t.begin()) return f.front();
    if (it == t.end()) return f.back();
    const auto i = static_cast<std::size_t>(it - t.begin());
    const double w = (s - t[i - 1]) / (t[i] - t[i - 1]);
    return (1.0 - w) * f[i - 1] + w * f[i];
  };
  double total = 0.0;
  double prev_t = a, prev_f = at(a);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] <= a) continue;
    if (t[i] >= b) break;
    total += 0.5 * (f[i] + prev_f) * (t[i] - prev_t);
    prev_t = t[i];
    prev_f = f[i];
  }
  total += 0.5 * (at(b) + prev_f) * (b - prev_t);
  return total;
}

}  // namespace

WarpIntegral warp_integral(const Trajectory& traj, double delta) {
  const std::size_t n = traj.times.size();
  if (n < 2) throw ParameterError("warp_integral needs at least two snapshots");
  if (traj.predictor_snapshots.size() != n || traj.residual_norms.size() != n)
    throw ParameterError("warp_integral needs predictor snapshots and residual norms");
  std::vector<double> g(n), gr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = traj.predictor_snapshots[i].norm();
    g[i] = r > 0.0 ? g_hat(r, delta) : std::sqrt(delta);
    gr[i] = g[i] * traj.residual_norms[i];
  }
  WarpIntegral out;
  const double t0 = traj.times.front(), t1 = traj.times.back();
  out.tau_integral = integrate_window(traj.times, g, t0, t1);
  out.nu_integral = integrate_window(traj.times, gr, t0, t1);

  std::size_t start = n - 1;
  for (std::size_t i = 0; i < n; ++i)
    if (traj.residual_norms[i] <= 1e-3 * traj.residual_norms.front()) {
      start = i;
      break;
    }
  const double ts = traj.times[start];
  if (!(t1 > ts)) {
    out.tau_diverging = true;
    return out;
  }
  const double width = (t1 - ts) / kTailWindows;
  for (int k = 0; k < kTailWindows; ++k) {
    const double a = ts + k * width, b = (k + 1 == kTailWindows) ? t1 : a + width;
    out.nu_window_increments.push_back(integrate_window(traj.times, gr, a, b));
    out.tau_window_increments.push_back(integrate_window(traj.times, g, a, b));
  }
  double tau_ratio = 0.0;
  for (int k = 1; k < kTailWindows; ++k) {
    const auto K = static_cast<std::size_t>(k);
    const double prev = out.nu_window_increments[K - 1];
    out.nu_tail_ratio = std::max(out.nu_tail_ratio, prev > 0.0 ? out.nu_window_increments[K] / prev : 1.0);
    tau_ratio = std::max(tau_ratio, out.tau_window_increments[K] / out.tau_window_increments[K - 1]);
  }
  out.tau_diverging = tau_ratio >= 0.9;
  if (traj.converged)
    out.nu_status = out.nu_tail_ratio < 0.9 ? TailStatus::kConverging : TailStatus::kNotDecaying;
  return out;
}

}  // namespace ibflow
