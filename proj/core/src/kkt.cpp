#include "ibflow/kkt.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "ibflow/errors.hpp"

namespace ibflow {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

double feasibility_of(const Eigen::VectorXd& w, const Dataset& data) {
  return (data.X.transpose() * w - data.y).norm() / std::max(1.0, data.y.norm());
}

// Result of mapping a dual point to the primal: w and the Jacobian of X^T w.
struct DualMap {
  Eigen::VectorXd w;
  Eigen::MatrixXd J;
};

using DualMapFn = std::function<std::optional<DualMap>(const Eigen::VectorXd& nu, bool want_jacobian)>;

struct NewtonResult {
  Eigen::VectorXd nu, w;
  int iterations = 0;
  bool stalled = false;
  std::string diagnostics;
};

Eigen::VectorXd newton_direction(const Eigen::MatrixXd& J, const Eigen::VectorXd& F) {
  const Eigen::MatrixXd Js = 0.5 * (J + J.transpose());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(Js);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    Eigen::VectorXd step = ldlt.solve(-F);
    if (step.allFinite()) return step;
  }
  return Js.colPivHouseholderQr().solve(-F);
}

// Damped Newton on F(nu) = X^T w(nu) - y with backtracking on ||F||.
NewtonResult dual_newton(const Dataset& data, const DualMapFn& map, const SolverOptions& opts) {
  const double y_scale = std::max(1.0, data.y.norm());
  NewtonResult out;
  out.nu = Eigen::VectorXd::Zero(data.samples());
  auto first = map(out.nu, true);
  if (!first) throw NumericError("dual map is not finite at nu = 0");
  DualMap cur = *first;
  Eigen::VectorXd F = data.X.transpose() * cur.w - data.y;
  double fnorm = F.norm();

  for (out.iterations = 0; out.iterations < opts.max_iter; ++out.iterations) {
    if (fnorm / y_scale <= opts.feasibility_tol) break;
    const Eigen::VectorXd step = newton_direction(cur.J, F);
    if (!step.allFinite()) {
      out.stalled = true;
      out.diagnostics = "Newton system produced a non-finite step";
      break;
    }
    double t = 1.0;
    bool accepted = false;
    while (t > 1e-16) {
      const Eigen::VectorXd trial = out.nu + t * step;
      if (auto next = map(trial, false)) {
        const Eigen::VectorXd Ft = data.X.transpose() * next->w - data.y;
        const double ft = Ft.norm();
        if (std::isfinite(ft) && ft <= (1.0 - 1e-4 * t) * fnorm) {
          out.nu = trial;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted || (t * step.norm() < 1e-14 * std::max(1.0, out.nu.norm()))) {
      if (accepted) {
        cur = *map(out.nu, true);
        F = data.X.transpose() * cur.w - data.y;
        fnorm = F.norm();
        if (fnorm / y_scale <= opts.feasibility_tol) break;
      }
      out.stalled = true;
      out.diagnostics = "Newton stalled: step norm below 1e-14 with ||F||/max(1,||y||)=" +
                        std::to_string(fnorm / y_scale);
      break;
    }
    cur = *map(out.nu, true);
    F = data.X.transpose() * cur.w - data.y;
    fnorm = F.norm();
  }
  if (out.iterations >= opts.max_iter && fnorm / y_scale > opts.feasibility_tol)
    out.diagnostics = "iteration limit reached with ||F||/max(1,||y||)=" + std::to_string(fnorm / y_scale);
  out.w = cur.w;
  return out;
}

KKTReport finish(const RegularizerSpec& spec, const Dataset& data, const NewtonResult& nr,
                 const SolverOptions& opts) {
  KKTReport rep = kkt_residuals(spec, nr.w, data);
  rep.iterations = nr.iterations;
  rep.diagnostics = nr.diagnostics;
  // The least-squares residual is reported; nu is the Newton iterate.
  rep.nu = nr.nu;
  rep.converged = !nr.stalled && rep.feasibility_residual <= std::max(opts.feasibility_tol, 1e-10) &&
                  rep.stationarity_residual <= opts.stationarity_tol;
  if (!rep.converged && rep.diagnostics.empty())
    rep.diagnostics = "residuals above tolerance: stationarity=" + std::to_string(rep.stationarity_residual) +
                      " feasibility=" + std::to_string(rep.feasibility_residual);
  return rep;
}

// Least-squares nu for min ||g - A nu||, returning (nu, residual).
std::pair<Eigen::VectorXd, double> least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& g) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  const Eigen::VectorXd nu = cod.solve(g);
  return {nu, (g - A * nu).norm()};
}

}  // namespace

void check_full_column_rank(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (X.col(i) == X.col(j))
        throw DuplicateSampleError("samples " + std::to_string(i) + " and " + std::to_string(j) + " are identical");
  if (n > X.rows())
    throw SingularSystemError("N = " + std::to_string(n) + " samples exceed dimension d = " + std::to_string(X.rows()));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const double threshold = 1e-10 * X.norm();
  const Eigen::VectorXd diag = qr.matrixR().diagonal().cwiseAbs();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(diag(i) > threshold))
      throw SingularSystemError("X has rank " + std::to_string(i) + " < N = " + std::to_string(n));
}

KKTReport solve_diagonal(const Dataset& data, const Eigen::VectorXd& k, const SolverOptions& opts) {
  validate(data);
  if (k.size() != data.dim()) throw ParameterError("k must have length d");
  if (!(k.array() > 0.0).all() || !k.allFinite()) throw ParameterError("solve_diagonal needs every k_i > 0");
  check_full_column_rank(data.X);
  const Eigen::VectorXd sqrt_k = k.cwiseSqrt();

  DualMapFn map = [&](const Eigen::VectorXd& nu, bool want_jacobian) -> std::optional<DualMap> {
    const Eigen::VectorXd p = data.X * nu;
    DualMap m;
    m.w.resize(p.size());
    Eigen::VectorXd dw(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      // Damp instead of overflowing: the line search rejects such points.
      if (std::abs(2.0 * p(i)) > kSinhArgumentLimit) return std::nullopt;
      m.w(i) = 0.5 * sqrt_k(i) * std::sinh(2.0 * p(i));
      dw(i) = sqrt_k(i) * std::cosh(2.0 * p(i));
    }
    if (want_jacobian) m.J = data.X.transpose() * dw.asDiagonal() * data.X;
    return m;
  };
  return finish(DiagonalQ{k}, data, dual_newton(data, map, opts), opts);
}

KKTReport solve_radial(const Dataset& data, double delta, const Eigen::VectorXd& wtilde0,
                       const SolverOptions& opts) {
  validate(data);
  if (!(delta >= 0.0)) throw ParameterError("solve_radial needs delta >= 0");
  if (wtilde0.size() != data.dim()) throw ParameterError("wtilde0 must have length d");
  if (!(wtilde0.norm() > 0.0)) throw ParameterError("solve_radial needs a nonzero wtilde0");
  check_full_column_rank(data.X);
  const Eigen::VectorXd z = radial_z(delta, wtilde0);

  // rho(m) = r(2m/3) with r(mu) = mu sqrt(mu^2 + delta); returns (rho/m, rho').
  auto rho_terms = [delta](double m) {
    const double mu = 2.0 * m / 3.0;
    const double root = std::sqrt(mu * mu + delta);
    const double ratio = (2.0 / 3.0) * root;
    const double deriv = root == 0.0 ? 0.0 : (2.0 / 3.0) * (2.0 * mu * mu + delta) / root;
    return std::pair{ratio, deriv};
  };

  DualMapFn map = [&](const Eigen::VectorXd& nu, bool want_jacobian) -> std::optional<DualMap> {
    const Eigen::VectorXd q = data.X * nu - z;
    const double m = q.norm();
    const auto [ratio, deriv] = rho_terms(m);
    DualMap out;
    out.w = ratio * q;
    if (!out.w.allFinite()) return std::nullopt;
    if (want_jacobian) {
      // d w / d p = ratio (I - u u^T) + deriv u u^T, u = q / m.
      out.J = ratio * (data.X.transpose() * data.X);
      if (m > 0.0) {
        const Eigen::VectorXd Xu = data.X.transpose() * (q / m);
        out.J += (deriv - ratio) * Xu * Xu.transpose();
      }
    }
    return out;
  };
  return finish(RadialQ{delta, wtilde0}, data, dual_newton(data, map, opts), opts);
}

Eigen::VectorXd min_l2(const Dataset& data) {
  validate(data);
  check_full_column_rank(data.X);
  const Eigen::Index n = data.samples();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(data.X);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  // X^T w = R^T Q^T w = y.
  const Eigen::VectorXd c = R.transpose().triangularView<Eigen::Lower>().solve(data.y);
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(data.dim());
  padded.head(n) = c;
  return qr.householderQ() * padded;
}

Eigen::VectorXd min_weighted_l2(const Dataset& data, const Eigen::VectorXd& weights) {
  validate(data);
  if (weights.size() != data.dim() || !(weights.array() > 0.0).all())
    throw ParameterError("weighted l2 needs d positive weights");
  check_full_column_rank(data.X);
  // w = D^{-1} X (X^T D^{-1} X)^{-1} y with D = diag(weights).
  const Eigen::MatrixXd DinvX = weights.cwiseInverse().asDiagonal() * data.X;
  const Eigen::MatrixXd G = data.X.transpose() * DinvX;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success) throw SingularSystemError("weighted Gram matrix is not positive definite");
  return DinvX * llt.solve(data.y);
}

L1Result l1_oracle_detailed(const Dataset& data) {
  validate(data);
  check_full_column_rank(data.X);
  const Eigen::Index d = data.dim();
  const Eigen::Index n = data.samples();
  L1Result res;
  res.w = Eigen::VectorXd::Zero(d);
  res.dual = Eigen::VectorXd::Zero(n);
  if (data.y.isZero(0.0)) return res;

  const Eigen::MatrixXd& X = data.X;  // constraint X^T w = y
  Eigen::LLT<Eigen::MatrixXd> gram(X.transpose() * X);
  auto project = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return v - X * gram.solve(X.transpose() * v - data.y);
  };

  // Certificate from a support guess: basic solution plus a dual point
  // rescaled into ||X lambda||_inf <= 1.
  auto certify = [&](const Eigen::VectorXd& z, L1Result& best) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(z(a)) > std::abs(z(b)); });
    const double zmax = std::abs(z(order[0]));
    Eigen::Index s = 0;
    while (s < n && s < d && std::abs(z(order[static_cast<std::size_t>(s)])) > 1e-9 * zmax) ++s;
    if (s == 0) return;
    Eigen::MatrixXd A(n, s);  // columns: rows of X on the support
    for (Eigen::Index j = 0; j < s; ++j) A.col(j) = X.row(order[static_cast<std::size_t>(j)]).transpose();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    const Eigen::VectorXd ws = cod.solve(data.y);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sign(s);
    for (Eigen::Index j = 0; j < s; ++j) {
      w(order[static_cast<std::size_t>(j)]) = ws(j);
      sign(j) = (ws(j) > 0.0) - (ws(j) < 0.0);
    }
    if ((X.transpose() * w - data.y).norm() > 1e-10 * std::max(1.0, data.y.norm())) return;
    // lambda with A^T lambda = sign, minimum norm.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> codT(A.transpose());
    Eigen::VectorXd lambda = codT.solve(sign);
    const double inf = (X * lambda).cwiseAbs().maxCoeff();
    if (inf > 1.0) lambda /= inf;
    const double primal = w.lpNorm<1>();
    const double gap = primal - data.y.dot(lambda);
    if (best.w.isZero(0.0) || gap < best.duality_gap) {
      best.w = w;
      best.dual = lambda;
      best.duality_gap = std::max(gap, 0.0);
    }
  };

  // Scaled ADMM for min ||w||_1 s.t. X^T w = y.
  double rho = 1.0 / std::max(1e-12, project(Eigen::VectorXd::Zero(d)).cwiseAbs().maxCoeff());
  Eigen::VectorXd z = project(Eigen::VectorXd::Zero(d));
  Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
  res.duality_gap = std::numeric_limits<double>::infinity();
  const int max_iter = 200000;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::VectorXd x = project(z - u);
    const Eigen::VectorXd z_old = z;
    const Eigen::VectorXd v = x + u;
    const double thr = 1.0 / rho;
    z = v.unaryExpr([thr](double a) { return a > thr ? a - thr : (a < -thr ? a + thr : 0.0); });
    u += x - z;
    res.iterations = it;
    const double r_primal = (x - z).norm();
    const double r_dual = rho * (z - z_old).norm();
    if (it % 50 == 0) {
      // Residual balancing keeps the penalty well scaled.
      if (r_primal > 10.0 * r_dual) {
        rho *= 2.0;
        u /= 2.0;
      } else if (r_dual > 10.0 * r_primal) {
        rho /= 2.0;
        u *= 2.0;
      }
      certify(x, res);
      if (res.duality_gap <= 1e-9 * std::max(1.0, res.w.lpNorm<1>())) return res;
    }
  }
  if (!std::isfinite(res.duality_gap)) {
    res.w = project(z);
    res.duality_gap = std::numeric_limits<double>::infinity();
  }
  return res;
}

Eigen::VectorXd l1_oracle(const Dataset& data) { return l1_oracle_detailed(data).w; }

KKTReport kkt_residuals(const RegularizerSpec& spec, const Eigen::VectorXd& w, const Dataset& data) {
  validate(data);
  if (w.size() != data.dim()) throw ParameterError("w must have length d");
  KKTReport rep;
  rep.w = w;
  const QEval e = q_eval(spec, w);
  auto [nu, res] = least_squares(data.X, e.gradient);
  rep.nu = nu;
  rep.stationarity_residual = res;
  rep.feasibility_residual = feasibility_of(w, data);
  return rep;
}

KKTReport solve(const RegularizerSpec& spec, const Dataset& data, const SolverOptions& opts) {
  validate(spec);
  auto closed_form = [&](const Eigen::VectorXd& w) {
    KKTReport rep = kkt_residuals(spec, w, data);
    rep.converged = rep.feasibility_residual <= 1e-10 && rep.stationarity_residual <= opts.stationarity_tol;
    return rep;
  };
  return std::visit(
      Overloaded{[&](const DiagonalQ& q) { return solve_diagonal(data, q.k, opts); },
                 [&](const RadialQ& q) { return solve_radial(data, q.delta, q.wtilde0, opts); },
                 [&](const L2&) { return closed_form(min_l2(data)); },
                 [&](const WeightedL2& q) { return closed_form(min_weighted_l2(data, q.weights)); },
                 [&](const MahalanobisAboutInit& q) {
                   check_full_column_rank(data.X);
                   Eigen::LLT<Eigen::MatrixXd> llt(q.B);
                   const Eigen::MatrixXd BinvX = llt.solve(data.X);
                   const Eigen::MatrixXd G = data.X.transpose() * BinvX;
                   const Eigen::VectorXd rhs = data.y - data.X.transpose() * q.wtilde0;
                   return closed_form(q.wtilde0 + BinvX * G.llt().solve(rhs));
                 },
                 [&](const L1&) {
                   const L1Result r = l1_oracle_detailed(data);
                   KKTReport rep;
                   rep.w = r.w;
                   rep.nu = r.dual;
                   rep.feasibility_residual = feasibility_of(r.w, data);
                   // For the nonsmooth case report the duality gap in place of stationarity.
                   rep.stationarity_residual = r.duality_gap;
                   rep.iterations = r.iterations;
                   rep.converged = r.duality_gap <= 1e-9 * std::max(1.0, r.w.lpNorm<1>());
                   return rep;
                 }},
      spec);
}

KKTReport leaky_kkt_check(const LeakyParams& params, const RadialQ& q, const Dataset& data, double tol) {
  validate(params);
  validate(data);
  KKTReport rep;
  const Eigen::VectorXd pre = data.X.transpose() * params.w;
  for (Eigen::Index n = 0; n < pre.size(); ++n)
    if (pre(n) == 0.0) rep.kink_samples.push_back(n);
  const Eigen::VectorXd c = activation_slopes(params, data.X);
  const Eigen::MatrixXd Xc = data.X * c.asDiagonal();
  rep.w = predictor(params);
  const QEval e = q_eval(q, rep.w);
  auto [nu, res] = least_squares(Xc, e.gradient);
  rep.nu = nu;
  rep.stationarity_residual = res;
  rep.feasibility_residual = (outputs(params, data.X) - data.y).norm() / std::max(1.0, data.y.norm());
  rep.converged = rep.stationarity_residual <= tol && rep.feasibility_residual <= tol;
  if (!rep.kink_samples.empty())
    rep.diagnostics = std::to_string(rep.kink_samples.size()) + " sample(s) at the kink; slope 1 used";
  return rep;
}

nlohmann::json to_json(const KKTReport& r) {
  nlohmann::json j;
  j["w"] = std::vector<double>(r.w.data(), r.w.data() + r.w.size());
  j["nu"] = std::vector<double>(r.nu.data(), r.nu.data() + r.nu.size());
  j["stationarity_residual"] = r.stationarity_residual;
  j["feasibility_residual"] = r.feasibility_residual;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  if (!r.diagnostics.empty()) j["diagnostics"] = r.diagnostics;
  if (!r.kink_samples.empty()) j["kink_samples"] = r.kink_samples;
  return j;
}

}  // namespace ibflow
