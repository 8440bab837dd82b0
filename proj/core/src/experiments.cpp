#include "ibflow/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "ibflow/csv.hpp"
#include "ibflow/errors.hpp"
#include "ibflow/regularizers.hpp"
#include "ibflow/rng.hpp"
#include "ibflow/warp.hpp"

namespace ibflow {
namespace {

const std::vector<std::string> kFamilies{"diagonal", "fc_single", "fc_balanced", "fc_multi", "leaky"};

std::vector<double> as_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// Runs fn(i) for i in [0, count) on up to `jobs` threads. Exceptions are
// rethrown on the caller after all workers stop.
template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct GridIndex {
  std::size_t seed, alpha, shape;
};

std::vector<GridIndex> grid_indices(const ExperimentConfig& config) {
  std::vector<GridIndex> idx;
  const auto seeds = effective_seeds(config);
  for (std::size_t s = 0; s < seeds.size(); ++s)
    for (std::size_t a = 0; a < config.alphas.size(); ++a)
      for (std::size_t h = 0; h < config.shapes.size(); ++h) idx.push_back({s, a, h});
  return idx;
}

double relative_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double nb = b.norm();
  return (a - b).norm() / (nb > 0.0 ? nb : 1.0);
}

nlohmann::json drift_json(const DriftReport& r) {
  nlohmann::json j;
  j["max_relative"] = r.max_relative;
  j["max_abs"] = r.max_abs;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, v] : r.max_abs_drift) per[name] = v.size() ? v.maxCoeff() : 0.0;
  j["per_quantity_max_abs"] = per;
  return j;
}

FlowOptions flow_from_json(const nlohmann::json& j, FlowOptions base) {
  base.rel_tol = j.value("rel_tol", base.rel_tol);
  base.abs_tol = j.value("abs_tol", base.abs_tol);
  base.stop_feasibility = j.value("stop_feasibility", base.stop_feasibility);
  base.t_max = j.value("t_max", base.t_max);
  base.record_stride = j.value("record_stride", base.record_stride);
  base.max_steps = j.value("max_steps", base.max_steps);
  return base;
}

}  // namespace

ExperimentKind experiment_kind_from_string(const std::string& name) {
  if (name == "simulate") return ExperimentKind::kSimulate;
  if (name == "solve") return ExperimentKind::kSolve;
  if (name == "sweep") return ExperimentKind::kSweep;
  if (name == "contour") return ExperimentKind::kContour;
  if (name == "compare") return ExperimentKind::kCompare;
  if (name == "verify") return ExperimentKind::kVerify;
  throw ParameterError("unknown experiment kind '" + name + "'");
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSimulate: return "simulate";
    case ExperimentKind::kSolve: return "solve";
    case ExperimentKind::kSweep: return "sweep";
    case ExperimentKind::kContour: return "contour";
    case ExperimentKind::kCompare: return "compare";
    case ExperimentKind::kVerify: return "verify";
  }
  return "unknown";
}

void validate(const ExperimentConfig& c) {
  if (std::find(kFamilies.begin(), kFamilies.end(), c.family) == kFamilies.end())
    throw ParameterError("unknown model family '" + c.family + "'");
  if (c.alphas.empty() || c.shapes.empty()) throw ParameterError("alpha and shape grids must be nonempty");
  for (double a : c.alphas)
    if (!(a > 0.0)) throw ParameterError("alpha grid entries must be positive");
  for (double s : c.shapes)
    if (!(std::abs(s) < 1.0)) throw ParameterError("shape grid entries must satisfy |s| < 1");
  if (c.dataset.n < 1 || c.dataset.d < 1 || c.dataset.r_star < 1 || c.dataset.r_star > c.dataset.d)
    throw ParameterError("invalid dataset dimensions");
  if (c.jobs < 1) throw ParameterError("jobs must be at least 1");
  if (!(c.rho > 0.0)) throw ParameterError("leaky slope rho must be positive");
  if (c.neurons < 1) throw ParameterError("neurons must be at least 1");
  if (c.grid < 2 || !(c.window_hi > c.window_lo)) throw ParameterError("invalid contour window");
  validate(c.flow);
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("experiment")) c.kind = experiment_kind_from_string(j["experiment"].get<std::string>());
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    c.dataset.n = d.value("n", c.dataset.n);
    c.dataset.d = d.value("d", c.dataset.d);
    c.dataset.r_star = d.value("r_star", c.dataset.r_star);
    c.dataset.noise_std = d.value("noise_std", c.dataset.noise_std);
    c.dataset.seed = d.value("seed", c.dataset.seed);
  }
  c.family = j.value("family", c.family);
  if (j.contains("alphas")) c.alphas = j["alphas"].get<std::vector<double>>();
  if (j.contains("shapes")) c.shapes = j["shapes"].get<std::vector<double>>();
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("flow")) c.flow = flow_from_json(j["flow"], c.flow);
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    c.solver.feasibility_tol = s.value("feasibility_tol", c.solver.feasibility_tol);
    c.solver.stationarity_tol = s.value("stationarity_tol", c.solver.stationarity_tol);
    c.solver.max_iter = s.value("max_iter", c.solver.max_iter);
  }
  c.output = j.value("output", c.output);
  if (j.contains("via")) {
    const std::string v = j["via"].get<std::string>();
    if (v == "flow") c.via = Via::kFlow;
    else if (v == "solver") c.via = Via::kSolver;
    else throw ParameterError("via must be 'flow' or 'solver'");
  }
  c.jobs = j.value("jobs", c.jobs);
  c.rho = j.value("rho", c.rho);
  c.neurons = j.value("neurons", c.neurons);
  if (j.contains("panels")) {
    c.panels.clear();
    for (const auto& p : j["panels"]) c.panels.push_back({p.at("alpha").get<double>(), p.at("s").get<double>()});
  }
  if (j.contains("window")) {
    c.window_lo = j["window"].at(0).get<double>();
    c.window_hi = j["window"].at(1).get<double>();
  }
  c.grid = j.value("grid", c.grid);
  if (j.contains("contour_direction")) {
    const auto v = j["contour_direction"].get<std::vector<double>>();
    if (v.size() != 2) throw ParameterError("contour_direction must have two entries");
    c.contour_direction = {v[0], v[1]};
  }
  c.compare_tol = j.value("compare_tol", c.compare_tol);
  c.kkt_tol = j.value("kkt_tol", c.kkt_tol);
  if (j.value("paper_scale", false)) apply_paper_scale(c);
  validate(c);
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment"] = to_string(c.kind);
  j["dataset"] = {{"n", c.dataset.n},
                  {"d", c.dataset.d},
                  {"r_star", c.dataset.r_star},
                  {"noise_std", c.dataset.noise_std},
                  {"seed", c.dataset.seed}};
  j["family"] = c.family;
  j["alphas"] = c.alphas;
  j["shapes"] = c.shapes;
  j["seeds"] = effective_seeds(c);
  j["flow"] = {{"rel_tol", c.flow.rel_tol},
               {"abs_tol", c.flow.abs_tol},
               {"stop_feasibility", c.flow.stop_feasibility},
               {"t_max", c.flow.t_max},
               {"record_stride", c.flow.record_stride},
               {"max_steps", c.flow.max_steps}};
  j["solver"] = {{"feasibility_tol", c.solver.feasibility_tol},
                 {"stationarity_tol", c.solver.stationarity_tol},
                 {"max_iter", c.solver.max_iter}};
  j["via"] = c.via == Via::kFlow ? "flow" : "solver";
  j["rho"] = c.rho;
  j["neurons"] = c.neurons;
  nlohmann::json panels = nlohmann::json::array();
  for (const auto& p : c.panels) panels.push_back({{"alpha", p.alpha}, {"s", p.shape}});
  j["panels"] = panels;
  j["window"] = {c.window_lo, c.window_hi};
  j["grid"] = c.grid;
  j["contour_direction"] = {c.contour_direction(0), c.contour_direction(1)};
  j["compare_tol"] = c.compare_tol;
  j["kkt_tol"] = c.kkt_tol;
  return j;
}

void apply_paper_scale(ExperimentConfig& c) {
  c.dataset.n = 100;
  c.dataset.d = 1000;
  c.dataset.r_star = 5;
}

std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& c) {
  return c.seeds.empty() ? std::vector<std::uint64_t>{c.dataset.seed} : c.seeds;
}

Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  return gen_sparse_regression(spec.n, spec.d, spec.r_star, spec.noise_std, seed);
}

std::uint64_t cell_seed(std::uint64_t seed, std::size_t alpha_index, std::size_t shape_index) {
  return mix_seed(seed, alpha_index, shape_index);
}

CellSetup setup_cell(const ExperimentConfig& config, double alpha, double shape, std::uint64_t seed,
                     std::uint64_t child_seed) {
  CellSetup cell;
  cell.data = make_dataset(config.dataset, seed);
  const Eigen::Index d = cell.data.dim();
  GaussianStream orient(child_seed);
  const std::string& f = config.family;
  if (f == "diagonal") {
    const DiagonalParams p = init_diagonal({alpha, shape, std::nullopt}, d);
    cell.params0 = p;
    cell.q = diagonal_q_from_init(p);
  } else if (f == "fc_single") {
    const auto init = init_fc_single({alpha, shape, orient.unit_vector(d)});
    cell.params0 = init.params;
    if (init.outside_theorem_scope)
      throw ScopeError("fc_single: the single-neuron implicit bias requires delta >= 0 (shape s >= 0), got s=" +
                       std::to_string(shape));
    cell.q = radial_q_from_init(init.params);
  } else if (f == "fc_balanced") {
    if (shape != 0.0) throw ScopeError("fc_balanced: a strictly balanced init has shape s = 0");
    const Eigen::VectorXd a =
        Eigen::VectorXd::Constant(config.neurons, std::sqrt(alpha / static_cast<double>(config.neurons)));
    const FcParams p = balanced_multi_init(a, orient.unit_vector(d));
    cell.params0 = p;
    cell.q = radial_q_from_init(p);
  } else if (f == "fc_multi") {
    std::vector<InitShapeScale> neurons;
    for (int i = 0; i < config.neurons; ++i) neurons.push_back({alpha, shape, orient.unit_vector(d)});
    const auto init = init_fc(neurons);
    cell.params0 = init.params;
    cell.q = L2{};
  } else if (f == "leaky") {
    const auto init = init_leaky({alpha, shape, orient.unit_vector(d)}, config.rho);
    if (init.outside_theorem_scope)
      throw ScopeError("leaky: the leaky-neuron KKT result requires delta >= 0 (shape s >= 0), got s=" +
                       std::to_string(shape));
    cell.params0 = init.params;
    cell.leaky_q = radial_q_from_init(init.params);
    if (config.rho == 1.0) cell.q = *cell.leaky_q;
  } else {
    throw ParameterError("unknown model family '" + f + "'");
  }
  return cell;
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& config) {
  validate(config);
  if (config.family != "diagonal" && config.family != "fc_single")
    throw ParameterError("sweep supports the diagonal and fc_single families");
  const auto seeds = effective_seeds(config);
  const auto grid = grid_indices(config);
  std::vector<SweepCell> cells(grid.size());
  FlowOptions flow = config.flow;
  flow.record_predictor = false;
  flow.record_stride = std::max(flow.record_stride, 1000);
  parallel_for(grid.size(), config.jobs, [&](std::size_t i) {
    const GridIndex& g = grid[i];
    const double alpha = config.alphas[g.alpha], shape = config.shapes[g.shape];
    const std::uint64_t seed = seeds[g.seed];
    const CellSetup cell = setup_cell(config, alpha, shape, seed, cell_seed(seed, g.alpha, g.shape));
    SweepCell out{alpha, shape, seed, 0.0, 0.0, false};
    Eigen::VectorXd w;
    if (config.via == Via::kFlow) {
      const Trajectory traj = integrate(cell.params0, cell.data, flow);
      w = terminal_predictor(traj);
      out.converged = traj.converged;
    } else {
      const KKTReport rep = solve(*cell.q, cell.data, config.solver);
      w = rep.w;
      out.converged = rep.converged;
    }
    out.pop_error = population_error(w, cell.data);
    out.train_residual = (cell.data.X.transpose() * w - cell.data.y).norm() / std::max(1.0, cell.data.y.norm());
    cells[i] = out;
  });
  return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  csv::write_header(out, {"alpha", "s", "seed", "pop_error", "train_residual", "converged"});
  for (const auto& c : cells) {
    out << csv::format(c.alpha) << ',' << csv::format(c.shape) << ',' << c.seed << ',' << csv::format(c.pop_error)
        << ',' << csv::format(c.train_residual) << ',' << (c.converged ? 1 : 0) << '\n';
  }
}

std::vector<ContourPanel> run_contour(const ExperimentConfig& config) {
  validate(config);
  const Eigen::Vector2d dir = config.contour_direction.normalized();
  const int n = config.grid;
  const double step = (config.window_hi - config.window_lo) / (n - 1);
  Eigen::VectorXd axis(n);
  for (int i = 0; i < n; ++i) axis(i) = config.window_lo + step * i;

  std::vector<ContourPanel> panels(config.panels.size());
  parallel_for(panels.size(), config.jobs, [&](std::size_t k) {
    const auto& spec = config.panels[k];
    ContourPanel p;
    p.alpha = spec.alpha;
    p.shape = spec.shape;
    p.delta = shape_scale_algebra(spec.alpha, spec.shape).delta;
    if (p.delta < 0.0) throw ScopeError("contour panels need shape s >= 0");
    p.wtilde0 = spec.alpha * dir;
    p.axis = axis;
    p.values.resize(n, n);
    const RadialQ q{p.delta, p.wtilde0};
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double v = q_eval(q, Eigen::Vector2d(axis(i), axis(j))).value;
        p.values(i, j) = v;
        if (v < best) {
          best = v;
          p.argmin_i = i;
          p.argmin_j = j;
        }
      }
    auto nearest = [&](double x) {
      const double pos = std::round((x - config.window_lo) / step);
      return static_cast<Eigen::Index>(std::clamp(pos, 0.0, static_cast<double>(n - 1)));
    };
    p.nearest_i = nearest(p.wtilde0(0));
    p.nearest_j = nearest(p.wtilde0(1));
    panels[k] = std::move(p);
  });
  return panels;
}

nlohmann::json panel_metadata(const ContourPanel& p) {
  const auto n = p.axis.size();
  return {{"alpha", p.alpha},
          {"s", p.shape},
          {"delta", p.delta},
          {"wtilde0", as_vec(p.wtilde0)},
          {"window", {p.axis(0), p.axis(n - 1)}},
          {"grid", n},
          {"min_value", p.values.minCoeff()},
          {"max_value", p.values.maxCoeff()},
          {"argmin", {p.axis(p.argmin_i), p.axis(p.argmin_j)}},
          {"nearest_grid_to_wtilde0", {p.axis(p.nearest_i), p.axis(p.nearest_j)}},
          {"min_at_wtilde0", p.min_at_wtilde0()}};
}

void write_contour(const std::vector<ContourPanel>& panels, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const auto& p = panels[k];
    const std::string stem = "contour_panel" + std::to_string(k);
    std::ofstream out(dir / (stem + ".csv"));
    if (!out) throw ParameterError("cannot write contour output in " + dir.string());
    csv::write_header(out, {"alpha", "s", "w1", "w2", "q_value"});
    for (Eigen::Index i = 0; i < p.axis.size(); ++i)
      for (Eigen::Index j = 0; j < p.axis.size(); ++j)
        csv::write_row(out, {p.alpha, p.shape, p.axis(i), p.axis(j), p.values(i, j)});
    nlohmann::json meta = panel_metadata(p);
    meta["csv"] = stem + ".csv";
    std::ofstream(dir / (stem + ".json")) << meta.dump(2) << '\n';
    index.push_back(meta);
  }
  std::ofstream(dir / "contour_panels.json") << index.dump(2) << '\n';
}

CompareResult run_compare(const ExperimentConfig& config) {
  validate(config);
  const auto seeds = effective_seeds(config);
  const auto grid = grid_indices(config);
  std::vector<nlohmann::json> rows(grid.size());
  std::vector<char> passed(grid.size(), 0);
  parallel_for(grid.size(), config.jobs, [&](std::size_t i) {
    const GridIndex& g = grid[i];
    const double alpha = config.alphas[g.alpha], shape = config.shapes[g.shape];
    const std::uint64_t seed = seeds[g.seed];
    const CellSetup cell = setup_cell(config, alpha, shape, seed, cell_seed(seed, g.alpha, g.shape));
    const Trajectory traj = integrate(cell.params0, cell.data, config.flow);
    const Eigen::VectorXd w_flow = terminal_predictor(traj);

    nlohmann::json row;
    row["alpha"] = alpha;
    row["s"] = shape;
    row["seed"] = seed;
    row["family"] = config.family;
    row["flow"] = {{"predictor", as_vec(w_flow)},
                   {"converged", traj.converged},
                   {"steps", traj.steps},
                   {"t_final", traj.times.back()},
                   {"drift", drift_json(traj.drift)}};
    bool ok = traj.converged;
    if (cell.leaky_q) {
      const auto& leaky = std::get<LeakyParams>(traj.terminal_params);
      const KKTReport k = leaky_kkt_check(leaky, *cell.leaky_q, cell.data, config.kkt_tol);
      row["flow_kkt"] = to_json(k);
    } else {
      row["flow_kkt"] = to_json(kkt_residuals(*cell.q, w_flow, cell.data));
    }
    if (cell.q) {
      const KKTReport sol = solve(*cell.q, cell.data, config.solver);
      const double dist = relative_distance(w_flow, sol.w);
      row["solver"] = to_json(sol);
      row["relative_distance"] = dist;
      ok = ok && sol.converged && sol.stationarity_residual <= config.kkt_tol &&
           sol.feasibility_residual <= config.kkt_tol && dist <= config.compare_tol;
    } else {
      const double st = row["flow_kkt"]["stationarity_residual"].get<double>();
      const double fe = row["flow_kkt"]["feasibility_residual"].get<double>();
      ok = ok && st <= config.compare_tol && fe <= config.compare_tol;
    }
    row["pass"] = ok;
    passed[i] = ok;
    rows[i] = std::move(row);
  });
  CompareResult res;
  res.pass = std::all_of(passed.begin(), passed.end(), [](char c) { return c != 0; });
  res.report["cells"] = rows;
  res.report["compare_tol"] = config.compare_tol;
  res.report["kkt_tol"] = config.kkt_tol;
  res.report["pass"] = res.pass;
  return res;
}

VerifyResult run_verify(const ExperimentConfig& config) {
  validate(config);
  VerifyResult res;
  const Eigen::Vector2d w11(1.0, 1.0);
  const double unwarped =
      hessian_map_defect([](const Eigen::VectorXd& w) { return metric_tensor_fc(w, 0.0); }, w11);
  const double expected = 1.0 / (4.0 * std::sqrt(2.0));

  double warped = 0.0;
  double unwarped_min_random = std::numeric_limits<double>::infinity();
  GaussianStream rng(mix_seed(config.dataset.seed, 0xfeed));
  for (double delta : {0.0, 1.0}) {
    for (int i = 0; i < 20; ++i) {
      Eigen::VectorXd w = rng.vector(3);
      if (w.norm() < 0.2) w *= 0.2 / w.norm();
      warped = std::max(warped, hessian_map_defect(
                                    [delta](const Eigen::VectorXd& v) { return warped_metric_fc(v, delta); }, w));
      unwarped_min_random = std::min(
          unwarped_min_random,
          hessian_map_defect([delta](const Eigen::VectorXd& v) { return metric_tensor_fc(v, delta); }, w));
    }
  }

  bool monotone = true;
  for (double delta : {0.0, 0.1, 10.0}) {
    double prev = 0.0;
    for (int e = -60; e <= 60; ++e) {
      const double g = g_hat(std::pow(10.0, e / 10.0), delta);
      if (e > -60 && !(g > prev)) monotone = false;
      prev = g;
    }
  }

  // Warp integral on a small single-neuron run.
  const Dataset data = make_dataset({6, 12, 2, 0.0, config.dataset.seed}, config.dataset.seed);
  GaussianStream orient(mix_seed(config.dataset.seed, 0xbeef));
  const auto init = init_fc_single({0.5, 0.3, orient.unit_vector(data.dim())});
  const double delta = shape_scale_algebra(0.5, 0.3).delta;
  FlowOptions flow = config.flow;
  flow.stop_feasibility = std::min(flow.stop_feasibility, 1e-10);
  flow.record_predictor = true;
  const Trajectory traj = integrate(init.params, data, flow);
  const WarpIntegral wi = warp_integral(traj, delta);

  const bool ok_unwarped = std::abs(unwarped - expected) <= 1e-4;
  const bool ok_warped = warped <= 1e-6;
  const bool ok_generic = unwarped_min_random > 1e-3;
  const bool ok_tail = wi.nu_status == TailStatus::kConverging && wi.tau_diverging;
  res.pass = ok_unwarped && ok_warped && ok_generic && monotone && ok_tail;
  res.report = {{"defect_unwarped", unwarped},
                {"defect_unwarped_expected", expected},
                {"defect_warped", warped},
                {"defect_unwarped_min_random", unwarped_min_random},
                {"ghat_monotone", monotone},
                {"nu_integral_tail_ratio", wi.nu_tail_ratio},
                {"nu_integral", wi.nu_integral},
                {"tau_integral", wi.tau_integral},
                {"tau_diverging", wi.tau_diverging},
                {"pass", res.pass}};
  return res;
}

Trajectory run_simulate(const ExperimentConfig& config) {
  validate(config);
  const std::uint64_t seed = effective_seeds(config).front();
  const CellSetup cell = setup_cell(config, config.alphas.front(), config.shapes.front(), seed, cell_seed(seed, 0, 0));
  return integrate(cell.params0, cell.data, config.flow);
}

KKTReport run_solve(const ExperimentConfig& config) {
  validate(config);
  const std::uint64_t seed = effective_seeds(config).front();
  const CellSetup cell = setup_cell(config, config.alphas.front(), config.shapes.front(), seed, cell_seed(seed, 0, 0));
  if (!cell.q) throw ScopeError("leaky neuron with rho != 1 has no convex Q to solve");
  return solve(*cell.q, cell.data, config.solver);
}

}  // namespace ibflow
