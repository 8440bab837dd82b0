#include "ibflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ibflow/csv.hpp"
#include "ibflow/errors.hpp"

namespace ibflow {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMaxGrowth = 5.0;
constexpr double kMinShrink = 0.2;
constexpr double kBeta1 = 0.7 / 5.0;  // PI controller exponents
constexpr double kBeta2 = 0.4 / 5.0;

using Groups = std::vector<std::pair<std::string, Eigen::VectorXd>>;

Groups conserved_groups(const DiagonalParams& p) {
  auto c = conserved(p);
  return {{"c", c.c}, {"delta_plus", c.delta_plus}, {"delta_minus", c.delta_minus}};
}

Groups conserved_groups(const FcParams& p) {
  auto c = conserved(p);
  return {{"delta", c.delta}, {"Delta", Eigen::Map<const Eigen::VectorXd>(c.Delta.data(), c.Delta.size())}};
}

Groups conserved_groups(const LeakyParams& p) {
  return {{"delta", conserved(p).delta}};
}

class DriftTracker {
 public:
  explicit DriftTracker(const Groups& init) {
    for (const auto& [name, v] : init) {
      report_.initial[name] = v;
      report_.max_abs_drift[name] = Eigen::VectorXd::Zero(v.size());
    }
  }

  // Returns the max absolute drift at this state.
  double update(const Groups& now) {
    double current = 0.0;
    for (const auto& [name, v] : now) {
      const Eigen::VectorXd& init = report_.initial[name];
      const Eigen::VectorXd diff = (v - init).cwiseAbs();
      auto& mx = report_.max_abs_drift[name];
      mx = mx.cwiseMax(diff);
      if (diff.size()) {
        current = std::max(current, diff.maxCoeff());
        const Eigen::VectorXd rel = diff.array() / (1.0 + init.array().abs());
        report_.max_relative = std::max(report_.max_relative, rel.maxCoeff());
      }
    }
    report_.max_abs = std::max(report_.max_abs, current);
    return current;
  }

  const DriftReport& report() const { return report_; }

 private:
  DriftReport report_;
};

constexpr double kStopTolRatio = 1e-2;
// Samples with |x_n^T w| <= kKinkBand ||x_n|| ||w|| count as sitting on the kink.
constexpr double kKinkBand = 1e-9;

template <typename P>
P flow_gradient(const P& p, const Dataset& data) {
  return gradient(p, data);
}

// Filippov selection at the leaky kink. Each sample on the kink gets the slope
// c_n in [rho, 1] that the flow picks: the one that keeps x_n^T w fixed when
// both sides push back onto the kink (sliding), otherwise the side it moves to.
template <>
LeakyParams flow_gradient(const LeakyParams& p, const Dataset& data) {
  if (p.rho == 1.0) return gradient(p, data);
  const Eigen::VectorXd pre = data.X.transpose() * p.w;
  const Eigen::VectorXd r = loss_and_residual(p, data).r;
  Eigen::VectorXd c = activation_slopes(p, data.X);
  std::vector<Eigen::Index> kink;
  const double w_norm = p.w.norm();
  for (Eigen::Index n = 0; n < pre.size(); ++n)
    if (std::abs(pre(n)) <= kKinkBand * data.X.col(n).norm() * w_norm) kink.push_back(n);
  if (!kink.empty()) {
    const Eigen::MatrixXd G = data.X.transpose() * data.X;
    for (int sweep = 0; sweep < 3; ++sweep)
      for (const Eigen::Index n : kink) {
        // d/dt x_n^T w = a sum_m G_nm c_m r_m, affine in c_n.
        const double rest = G.row(n).dot(c.cwiseProduct(r)) - G(n, n) * c(n) * r(n);
        const double up = p.a * (G(n, n) * r(n) + rest);
        const double down = p.a * (G(n, n) * p.rho * r(n) + rest);
        if (up < 0.0 && down > 0.0)
          c(n) = -rest / (G(n, n) * r(n));
        else if (up >= 0.0 && down >= 0.0)
          c(n) = 1.0;
        else if (up <= 0.0 && down <= 0.0)
          c(n) = p.rho;
        else
          c(n) = pre(n) < 0.0 ? p.rho : 1.0;
      }
  }
  const Eigen::VectorXd g = data.X * c.cwiseProduct(r);
  LeakyParams out;
  out.rho = p.rho;
  out.a = -p.w.dot(g);
  out.w = -p.a * g;
  return out;
}

double feasibility(const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
  return (f - y).norm() / std::max(1.0, y.norm());
}

template <typename P>
Trajectory run(const P& params0, const Dataset& data, const FlowOptions& opts) {
  validate(opts);
  validate(params0);
  const LossResidual lr0 = loss_and_residual(params0, data);
  if (!std::isfinite(lr0.loss)) throw PreconditionError("loss is not finite at the initial parameters");

  auto rhs = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const P p = from_state(params0, x);
    Eigen::VectorXd v = -to_state(flow_gradient(p, data));
    if (opts.warp) v *= opts.warp(predictor(p));
    return v;
  };

  Trajectory traj;
  DriftTracker drift(conserved_groups(params0));

  auto record = [&](double t, const P& p, const LossResidual& lr, double drift_now) {
    traj.times.push_back(t);
    if (opts.record_predictor) traj.predictor_snapshots.push_back(predictor(p));
    traj.loss_values.push_back(lr.loss);
    traj.residual_norms.push_back(lr.r.norm());
    traj.feas_residuals.push_back(
        lr.r.norm() * static_cast<double>(data.samples()) / std::max(1.0, data.y.norm()));
    traj.conserved_drift.push_back(drift_now);
  };

  Eigen::VectorXd x = to_state(params0);
  double t = 0.0;
  record(t, params0, lr0, 0.0);

  // Near the stability limit the stiff components settle at the error tolerance,
  // which puts a floor under the feasibility residual. Keep that floor well
  // below the stop threshold.
  const double rel_tol = std::min(opts.rel_tol, kStopTolRatio * opts.stop_feasibility);
  const double abs_tol = std::min(opts.abs_tol, kStopTolRatio * opts.stop_feasibility);
  auto scale = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) -> Eigen::ArrayXd {
    return abs_tol + rel_tol * a.array().abs().max(b.array().abs());
  };

  Eigen::VectorXd k1 = rhs(x);
  const double y_norm_feas = feasibility(outputs(params0, data.X), data.y);
  if (y_norm_feas <= opts.stop_feasibility) {
    traj.converged = true;
    traj.terminal_params = params0;
    traj.drift = drift.report();
    return traj;
  }

  // Initial step (Hairer, Norsett & Wanner II.4).
  double h;
  {
    const Eigen::ArrayXd sc = scale(x, x);
    const double d0 = std::sqrt((x.array() / sc).square().mean());
    const double d1 = std::sqrt((k1.array() / sc).square().mean());
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    const Eigen::VectorXd k2 = rhs(x + h0 * k1);
    const double d2 = std::sqrt(((k2 - k1).array() / sc).square().mean()) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }

  double err_prev = 1e-4;
  bool last_rejected = false;
  long accepted = 0;
  P current = params0;
  LossResidual lr = lr0;
  double drift_now = 0.0;
  bool recorded_last = true;

  while (t < opts.t_max) {
    if (traj.steps + traj.rejected_steps >= opts.max_steps) break;
    h = std::min(h, opts.t_max - t);
    const Eigen::VectorXd k2 = rhs(x + h * (a21 * k1));
    const Eigen::VectorXd k3 = rhs(x + h * (a31 * k1 + a32 * k2));
    const Eigen::VectorXd k4 = rhs(x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Eigen::VectorXd k5 = rhs(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Eigen::VectorXd k6 = rhs(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Eigen::VectorXd x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Eigen::VectorXd k7 = rhs(x_new);
    const Eigen::VectorXd err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err = std::sqrt((err_vec.array() / scale(x, x_new)).square().mean());

    if (!x_new.allFinite() || !std::isfinite(err)) {
      if (h < 1e-300) throw IntegrationError("non-finite state in gradient flow at t=" + std::to_string(t), t);
      h *= 0.25;
      last_rejected = true;
      ++traj.rejected_steps;
      continue;
    }

    if (err <= 1.0) {
      double fac = err == 0.0 ? kMaxGrowth
                              : kSafety * std::pow(err, -kBeta1) * std::pow(err_prev, kBeta2);
      fac = std::clamp(fac, kMinShrink, kMaxGrowth);
      if (last_rejected) fac = std::min(fac, 1.0);
      t += h;
      x = x_new;
      k1 = k7;
      err_prev = std::max(err, 1e-4);
      last_rejected = false;
      ++traj.steps;
      ++accepted;

      current = from_state(params0, x);
      lr = loss_and_residual(current, data);
      if (!std::isfinite(lr.loss)) throw IntegrationError("loss blew up at t=" + std::to_string(t), t);
      drift_now = drift.update(conserved_groups(current));
      const double feas = lr.r.norm() * static_cast<double>(data.samples()) / std::max(1.0, data.y.norm());
      const bool done = feas <= opts.stop_feasibility;
      recorded_last = false;
      if (done || accepted % opts.record_stride == 0) {
        record(t, current, lr, drift_now);
        recorded_last = true;
      }
      if (done) {
        traj.converged = true;
        break;
      }
      h *= fac;
    } else {
      h *= std::max(kMinShrink, kSafety * std::pow(err, -1.0 / 5.0));
      last_rejected = true;
      ++traj.rejected_steps;
      if (h < 1e-14 * std::max(1.0, t)) {
        throw IntegrationError("step size underflow at t=" + std::to_string(t), t);
      }
    }
  }
  if (!recorded_last) record(t, current, lr, drift_now);
  traj.terminal_params = current;
  traj.drift = drift.report();
  return traj;
}

}  // namespace

void validate(const FlowOptions& opts) {
  if (!(opts.rel_tol > 0.0) || !(opts.abs_tol > 0.0) || !(opts.stop_feasibility > 0.0))
    throw ParameterError("flow tolerances must be positive");
  if (!(opts.t_max > 0.0)) throw ParameterError("t_max must be positive");
  if (opts.record_stride < 1) throw ParameterError("record_stride must be at least 1");
}

Trajectory integrate(const DiagonalParams& p, const Dataset& data, const FlowOptions& opts) {
  return run(p, data, opts);
}
Trajectory integrate(const FcParams& p, const Dataset& data, const FlowOptions& opts) {
  return run(p, data, opts);
}
Trajectory integrate(const LeakyParams& p, const Dataset& data, const FlowOptions& opts) {
  return run(p, data, opts);
}
Trajectory integrate(const ModelParams& p, const Dataset& data, const FlowOptions& opts) {
  return std::visit([&](const auto& q) { return run(q, data, opts); }, p);
}

DriftReport drift_report(const Trajectory& traj) {
  if (traj.times.size() < 2) throw ParameterError("drift_report needs at least two snapshots");
  return traj.drift;
}

Eigen::VectorXd terminal_predictor(const Trajectory& traj) { return predictor(traj.terminal_params); }

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path, bool include_predictor) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  std::vector<std::string> cols{"t", "loss", "feas_residual", "drift_max"};
  const bool with_w = include_predictor && !traj.predictor_snapshots.empty();
  const Eigen::Index d = with_w ? traj.predictor_snapshots.front().size() : 0;
  for (Eigen::Index i = 0; i < d; ++i) cols.push_back("wtilde_" + std::to_string(i));
  csv::write_header(out, cols);
  for (std::size_t s = 0; s < traj.times.size(); ++s) {
    std::vector<double> row{traj.times[s], traj.loss_values[s], traj.feas_residuals[s], traj.conserved_drift[s]};
    for (Eigen::Index i = 0; i < d; ++i) row.push_back(traj.predictor_snapshots[s](i));
    csv::write_row(out, row);
  }
}

}  // namespace ibflow
