// Acceptance suite: one PASS/FAIL line per criterion; exit status 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ibflow/experiments.hpp"
#include "ibflow/flow.hpp"
#include "ibflow/kkt.hpp"
#include "ibflow/models.hpp"
#include "ibflow/regularizers.hpp"
#include "ibflow/rng.hpp"
#include "ibflow/warp.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using ibflow::Dataset;
using Eigen::VectorXd;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_dist(const VectorXd& a, const VectorXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome conservation_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  long min_steps = -1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ibflow::GaussianStream rng(ibflow::mix_seed(seed, 101));
    const int d = 10 + static_cast<int>(seed % 5) * 10;  // 10..50
    const int n = d / 5;
    const Dataset data = ibflow::gen_sparse_regression(n, d, 2, 0.1, seed);
    ibflow::Trajectory traj;
    if (seed % 2 == 0) {
      // Generic (biased) diagonal init.
      const double scale = 0.05 + 0.5 * rng.uniform();
      ibflow::DiagonalParams p{scale * rng.vector(d), scale * rng.vector(d), scale * rng.vector(d),
                               scale * rng.vector(d)};
      traj = ibflow::integrate(p, data);
    } else {
      const int m = 1 + static_cast<int>(seed % 3);
      const double scale = 0.05 + 0.5 * rng.uniform();
      ibflow::FcParams p{scale * rng.vector(m), scale * rng.matrix(d, m) / std::sqrt(static_cast<double>(d))};
      traj = ibflow::integrate(p, data);
    }
    worst = std::max(worst, traj.drift.max_relative);
    min_steps = min_steps < 0 ? traj.steps : std::min(min_steps, traj.steps);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs <= 60.0,
          fmt("max drift/(1+|init|)=%.3g (<=1e-6), fewest steps=%.0f, %.1fs (<=60s)", worst,
              static_cast<double>(min_steps), secs)};
}

Outcome diagonal_agreement() {
  const auto t0 = Clock::now();
  double worst_dist = 0.0, worst_kkt = 0.0;
  int failures = 0;
  for (double alpha : {1e-3, 1e-1, 1.0})
    for (double s : {0.0, 0.5, 0.9})
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset data = ibflow::gen_sparse_regression(10, 40, 3, 0.1, seed);
        const auto p = ibflow::init_diagonal({alpha, s, std::nullopt}, 40);
        const auto traj = ibflow::integrate(p, data);
        const auto rep = ibflow::solve_diagonal(data, ibflow::k_from_init(p));
        const double dist = rel_dist(ibflow::terminal_predictor(traj), rep.w);
        worst_dist = std::max(worst_dist, dist);
        worst_kkt = std::max({worst_kkt, rep.stationarity_residual, rep.feasibility_residual});
        if (!traj.converged || !rep.converged) ++failures;
      }
  const double secs = seconds_since(t0);
  return {worst_dist <= 1e-2 && worst_kkt <= 1e-8 && failures == 0 && secs <= 300.0,
          fmt("max rel dist=%.3g (<=1e-2), max solver KKT residual=%.3g (<=1e-8), %.1fs (<=300s)", worst_dist,
              worst_kkt, secs) +
              (failures ? ", non-converged runs=" + std::to_string(failures) : "")};
}

Outcome regime_limits() {
  double worst_l1 = 0.0, worst_l2 = 0.0, worst_norm_gap = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset data = ibflow::gen_sparse_regression(5, 20, 2, 0.1, seed);
    const VectorXd w1 = ibflow::l1_oracle(data);
    const auto rich = ibflow::solve_diagonal(data, VectorXd::Constant(20, 1e-8));
    worst_l1 = std::max(worst_l1, (rich.w - w1).lpNorm<1>() / w1.lpNorm<1>());
    worst_norm_gap = std::max(worst_norm_gap, rich.w.lpNorm<1>() / w1.lpNorm<1>() - 1.0);
    const VectorXd k = VectorXd::Constant(20, 1e8);
    const auto ntk = ibflow::solve_diagonal(data, k);
    const VectorXd w2 = ibflow::min_weighted_l2(data, k.cwiseSqrt().cwiseInverse());
    worst_l2 = std::max(worst_l2, (ntk.w - w2).lpNorm<1>() / w2.lpNorm<1>());
  }
  return {worst_l1 <= 1e-2 && worst_l2 <= 1e-2,
          fmt("k=1e-8 vs l1 oracle: %.3g (<=1e-2, l1-norm excess %.3g); k=1e8 vs weighted-l2: %.3g (<=1e-2)",
              worst_l1, worst_norm_gap, worst_l2)};
}

Outcome radial_agreement() {
  double worst_single = 0.0, worst_balanced = 0.0;
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset data = ibflow::gen_sparse_regression(4, 10, 2, 0.1, seed);
    ibflow::GaussianStream rng(ibflow::mix_seed(seed, 202));
    for (double s : {0.0, 0.3, 0.7})
      for (double alpha : {1e-3, 1.0}) {
        const auto init = ibflow::init_fc_single({alpha, s, rng.unit_vector(10)});
        const auto traj = ibflow::integrate(init.params, data);
        const auto q = ibflow::radial_q_from_init(init.params);
        const auto rep = ibflow::solve_radial(data, q.delta, q.wtilde0);
        worst_single = std::max(worst_single, rel_dist(ibflow::terminal_predictor(traj), rep.w));
        if (!traj.converged || !rep.converged) ++failures;
      }
    const VectorXd a = 0.3 * (VectorXd(3) << 1.0, -0.5, 0.8).finished() + 0.1 * rng.vector(3);
    const auto p = ibflow::balanced_multi_init(a, rng.unit_vector(10));
    const auto traj = ibflow::integrate(p, data);
    const auto q = ibflow::radial_q_from_init(p);
    const auto rep = ibflow::solve_radial(data, q.delta, q.wtilde0);
    worst_balanced = std::max(worst_balanced, rel_dist(ibflow::terminal_predictor(traj), rep.w));
    if (!traj.converged || !rep.converged) ++failures;
  }
  return {worst_single <= 1e-2 && worst_balanced <= 1e-2 && failures == 0,
          fmt("single neuron max rel dist=%.3g, balanced m=3 max rel dist=%.3g (<=1e-2), failures=%.0f",
              worst_single, worst_balanced, failures)};
}

Outcome vanishing_init_min_l2() {
  double worst = 0.0;
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset data = ibflow::gen_sparse_regression(3, 10, 2, 0.1, seed);
    ibflow::GaussianStream rng(ibflow::mix_seed(seed, 303));
    std::vector<ibflow::InitShapeScale> neurons;
    for (int i = 0; i < 3; ++i) neurons.push_back({1e-5, 0.0, rng.unit_vector(10)});
    const auto init = ibflow::init_fc(neurons);
    const auto traj = ibflow::integrate(init.params, data);
    worst = std::max(worst, rel_dist(ibflow::terminal_predictor(traj), ibflow::min_l2(data)));
    if (!traj.converged) ++failures;
  }
  return {worst <= 1e-2 && failures == 0,
          fmt("max rel dist to min-l2=%.3g (<=1e-2), non-converged=%.0f", worst, failures)};
}

Outcome hessian_dichotomy() {
  const auto t0 = Clock::now();
  const double unwarped = ibflow::hessian_map_defect(
      [](const VectorXd& w) { return ibflow::metric_tensor_fc(w, 0.0); }, Eigen::Vector2d(1.0, 1.0));
  const double expected = 1.0 / (4.0 * std::sqrt(2.0));
  double warped = 0.0;
  ibflow::GaussianStream rng(404);
  for (double delta : {0.0, 1.0})
    for (int i = 0; i < 20; ++i) {
      const VectorXd w = rng.vector(3);
      warped = std::max(warped, ibflow::hessian_map_defect(
                                    [delta](const VectorXd& v) { return ibflow::warped_metric_fc(v, delta); }, w));
    }
  return {std::abs(unwarped - expected) <= 1e-4 && warped <= 1e-6,
          fmt("unwarped defect=%.6f (1/(4 sqrt 2)=%.6f +-1e-4), warped max=%.3g (<=1e-6)", unwarped, expected,
              warped) +
              fmt(", %.2fs", seconds_since(t0))};
}

Outcome leaky_kkt() {
  double worst = 0.0, worst_match = 0.0;
  int failures = 0;
  ibflow::FlowOptions opts;
  opts.stop_feasibility = 1e-10;
  for (double rho : {0.25, 1.0})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Dataset data = ibflow::gen_sparse_regression(2, 6, 2, 0.1, seed);
      ibflow::GaussianStream rng(ibflow::mix_seed(seed, 505));
      const ibflow::InitShapeScale spec{0.05, 0.3, rng.unit_vector(6)};
      const auto init = ibflow::init_leaky(spec, rho);
      const auto traj = ibflow::integrate(init.params, data, opts);
      const auto q = ibflow::radial_q_from_init(init.params);
      const auto rep = ibflow::leaky_kkt_check(std::get<ibflow::LeakyParams>(traj.terminal_params), q, data);
      worst = std::max({worst, rep.stationarity_residual, rep.feasibility_residual});
      if (!traj.converged) ++failures;
      if (rho == 1.0) {
        const auto fc = ibflow::init_fc_single(spec);
        const auto traj_fc = ibflow::integrate(fc.params, data, opts);
        double diff = std::abs(static_cast<double>(traj.times.size()) - static_cast<double>(traj_fc.times.size()));
        if (diff == 0.0)
          for (std::size_t i = 0; i < traj.times.size(); ++i)
            diff = std::max({diff, std::abs(traj.times[i] - traj_fc.times[i]),
                             (traj.predictor_snapshots[i] - traj_fc.predictor_snapshots[i]).cwiseAbs().maxCoeff()});
        worst_match = std::max(worst_match, diff);
      }
    }
  return {worst <= 1e-4 && worst_match <= 1e-10 && failures == 0,
          fmt("max KKT residual=%.3g (<=1e-4), rho=1 vs fc path max diff=%.3g (<=1e-10), non-converged=%.0f", worst,
              worst_match, failures)};
}

double fd_rel_error(const std::function<double(const VectorXd&)>& f, const VectorXd& x, const VectorXd& g) {
  VectorXd fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    fd(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return (fd - g).norm() / std::max(g.norm(), 1e-8);
}

Outcome numerical_crosschecks() {
  double worst_fd = 0.0, worst_quad = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ibflow::GaussianStream rng(ibflow::mix_seed(seed, 606));
    const Dataset data = ibflow::gen_sparse_regression(4, 6, 2, 0.1, seed);
    {
      const ibflow::DiagonalParams p{rng.vector(6), rng.vector(6), rng.vector(6), rng.vector(6)};
      auto f = [&](const VectorXd& x) { return ibflow::loss_and_residual(ibflow::from_state(p, x), data).loss; };
      worst_fd = std::max(worst_fd, fd_rel_error(f, ibflow::to_state(p), ibflow::to_state(ibflow::gradient(p, data))));
    }
    {
      const ibflow::FcParams p{rng.vector(2), rng.matrix(6, 2)};
      auto f = [&](const VectorXd& x) { return ibflow::loss_and_residual(ibflow::from_state(p, x), data).loss; };
      worst_fd = std::max(worst_fd, fd_rel_error(f, ibflow::to_state(p), ibflow::to_state(ibflow::gradient(p, data))));
    }
    {
      const ibflow::LeakyParams p{rng.next(), rng.vector(6), 0.3};
      auto f = [&](const VectorXd& x) { return ibflow::loss_and_residual(ibflow::from_state(p, x), data).loss; };
      worst_fd = std::max(worst_fd, fd_rel_error(f, ibflow::to_state(p), ibflow::to_state(ibflow::gradient(p, data))));
    }
    {
      const ibflow::RadialQ q{std::abs(rng.next()), rng.vector(6)};
      const VectorXd w = rng.vector(6);
      auto f = [&](const VectorXd& x) { return ibflow::q_eval(q, x).value; };
      worst_fd = std::max(worst_fd, fd_rel_error(f, w, ibflow::q_eval(q, w).gradient));
    }
    for (double k : {1e-4, 1.0, 1e4}) {
      const double x = 3.0 * rng.next();
      auto f = [&](const VectorXd& v) { return ibflow::qk_value(v(0), k); };
      worst_fd = std::max(worst_fd, fd_rel_error(f, VectorXd::Constant(1, x),
                                                 VectorXd::Constant(1, ibflow::qk_gradient(x, k))));
      const double quad = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [k](double z) { return 0.5 * std::asinh(2.0 * z / std::sqrt(k)); }, 0.0, x, 15, 1e-14);
      worst_quad = std::max(worst_quad, std::abs(quad - ibflow::qk_value(x, k)));
    }
    for (double delta : {0.0, 0.1, 10.0}) {
      const double x = 1e-3 + 5.0 * rng.uniform();
      auto f = [&](const VectorXd& v) { return ibflow::qhat::value(v(0), delta); };
      worst_fd = std::max(worst_fd, fd_rel_error(f, VectorXd::Constant(1, x),
                                                 VectorXd::Constant(1, ibflow::qhat::derivative(x, delta))));
    }
  }
  return {worst_fd <= 1e-5 && worst_quad <= 1e-8,
          fmt("max FD rel error=%.3g (<=1e-5), max |q_k - quadrature|=%.3g (<=1e-8)", worst_fd, worst_quad)};
}

Outcome sweep_ordering() {
  const auto t0 = Clock::now();
  ibflow::ExperimentConfig cfg;
  cfg.family = "diagonal";
  cfg.dataset = {40, 200, 5, 0.1, 0};
  cfg.seeds = {0, 1, 2};
  cfg.alphas = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  cfg.shapes = {0.0, 0.5, 0.9, 0.99};
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed : cfg.seeds) {
    auto one = cfg;
    one.seeds = {seed};
    // Only the first row (smallest alpha) and first column (s = 0) are needed.
    auto row = one;
    row.alphas = {cfg.alphas.front()};
    auto col = one;
    col.shapes = {0.0};
    const auto cells_s = ibflow::run_sweep(row);
    const auto cells_a = ibflow::run_sweep(col);
    std::string line = "seed " + std::to_string(seed) + " s:";
    for (std::size_t i = 0; i < cells_s.size(); ++i) {
      line += fmt(" %.5g", cells_s[i].pop_error);
      if (!cells_s[i].converged) ok = false;
      if (i && cells_s[i].pop_error < cells_s[i - 1].pop_error) ok = false;
    }
    line += " alpha:";
    for (std::size_t i = 0; i < cells_a.size(); ++i) {
      line += fmt(" %.5g", cells_a[i].pop_error);
      if (!cells_a[i].converged) ok = false;
      if (i && cells_a[i].pop_error < cells_a[i - 1].pop_error) ok = false;
    }
    detail += line + "; ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs <= 900.0, detail + fmt("%.1fs (<=900s)", secs)};
}

Outcome contour_minima() {
  ibflow::ExperimentConfig cfg;
  const auto panels = ibflow::run_contour(cfg);
  bool ok = panels.size() == 6;
  std::string detail;
  for (const auto& p : panels) {
    ok = ok && p.min_at_wtilde0() && p.values.allFinite();
    detail += fmt("(a=%g,s=%g) ", p.alpha, p.shape) + (p.min_at_wtilde0() ? "ok" : "MISS") + "; ";
  }
  return {ok, detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria{
      {"conservation", conservation_suite},
      {"diagonal-flow-vs-solver", diagonal_agreement},
      {"rich-and-kernel-limits", regime_limits},
      {"radial-flow-vs-solver", radial_agreement},
      {"vanishing-init-min-l2", vanishing_init_min_l2},
      {"hessian-map-dichotomy", hessian_dichotomy},
      {"leaky-kkt", leaky_kkt},
      {"numerical-crosschecks", numerical_crosschecks},
      {"sweep-ordering", sweep_ordering},
      {"contour-minima", contour_minima},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d/%zu acceptance criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
