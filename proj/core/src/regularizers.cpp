#include "ibflow/regularizers.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>

#include "ibflow/errors.hpp"

namespace ibflow {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

void check_k(double k) {
  if (!(k > 0.0) || !std::isfinite(k)) throw ParameterError("k must be positive and finite");
}

void check_radial_args(double x, double delta) {
  if (!(x >= 0.0)) throw ParameterError("qhat argument must be nonnegative");
  if (!(delta >= 0.0)) throw ParameterError("qhat balancedness delta must be nonnegative");
}

std::vector<double> as_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd as_eigen(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

double qk_value(double x, double k) {
  check_k(k);
  const double rk = std::sqrt(k);
  const double t = 2.0 * x / rk;
  // 1 - sqrt(1 + t^2) rewritten to avoid cancellation for small t.
  return 0.25 * rk * (t * std::asinh(t) - t * t / (1.0 + std::sqrt(1.0 + t * t)));
}

double qk_gradient(double x, double k) {
  check_k(k);
  return 0.5 * std::asinh(2.0 * x / std::sqrt(k));
}

double qk_second_derivative(double x, double k) {
  check_k(k);
  return 1.0 / std::sqrt(k + 4.0 * x * x);
}

double qk_gradient_inverse(double g, double k) {
  check_k(k);
  if (std::abs(2.0 * g) > kSinhArgumentLimit)
    throw OverflowGuardError("dual point g=" + std::to_string(g) + " exceeds the sinh range |2g| <= 700");
  return 0.5 * std::sqrt(k) * std::sinh(2.0 * g);
}

Eigen::VectorXd k_from_init(const DiagonalParams& p0) {
  const ConservedDiag c = conserved(p0);
  return (c.delta_plus - c.delta_minus).cwiseAbs2() + 4.0 * c.c.cwiseAbs2();
}

ShapeScaleAlgebra shape_scale_algebra(double alpha, double s) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
  if (!(std::abs(s) < 1.0)) throw ParameterError("shape s must satisfy |s| < 1");
  const double one_minus = 1.0 - s * s;
  ShapeScaleAlgebra out;
  out.khat = alpha / one_minus;
  out.delta = 4.0 * alpha * s / one_minus;
  out.sqrt_combo = std::sqrt(alpha * alpha + 0.25 * out.delta * out.delta);
  out.minus_branch = out.sqrt_combo - 0.5 * out.delta;
  out.plus_branch = out.sqrt_combo + 0.5 * out.delta;
  out.sqrt_k = 4.0 * out.sqrt_combo;
  return out;
}

namespace qhat {

// Closed forms below use x^2 = (S - delta/2)(S + delta/2), which gives
// phi = x / sqrt(S + delta/2) and qhat = sqrt(S + delta/2) (S - delta).

double value(double x, double delta) {
  check_radial_args(x, delta);
  const double S = std::hypot(x, 0.5 * delta);
  return std::sqrt(S + 0.5 * delta) * (S - delta);
}

double profile(double x, double delta) {
  check_radial_args(x, delta);
  if (x == 0.0) return 0.0;
  const double S = std::hypot(x, 0.5 * delta);
  return x / std::sqrt(S + 0.5 * delta);
}

double derivative(double x, double delta) { return 1.5 * profile(x, delta); }

double second_derivative(double x, double delta) {
  check_radial_args(x, delta);
  const double S = std::hypot(x, 0.5 * delta);
  if (S == 0.0) return std::numeric_limits<double>::infinity();
  const double P = S + 0.5 * delta;
  return 1.5 / std::sqrt(P) * (1.0 - x * x / (2.0 * S * P));
}

double radial_ratio(double x, double delta) {
  check_radial_args(x, delta);
  const double S = std::hypot(x, 0.5 * delta);
  if (S == 0.0) return std::numeric_limits<double>::infinity();
  return 1.5 / std::sqrt(S + 0.5 * delta);
}

double profile_inverse(double m, double delta) {
  if (!(m >= 0.0)) throw ParameterError("profile inverse needs m >= 0");
  if (!(delta >= 0.0)) throw ParameterError("qhat balancedness delta must be nonnegative");
  return m * std::sqrt(m * m + delta);
}

double derivative_inverse(double m, double delta) { return profile_inverse(m / 1.5, delta); }

}  // namespace qhat

Eigen::VectorXd radial_z(double delta, const Eigen::VectorXd& wtilde0) {
  const double n0 = wtilde0.norm();
  if (!(n0 > 0.0)) throw ParameterError("RadialQ needs a nonzero wtilde0");
  return -qhat::derivative(n0, delta) * (wtilde0 / n0);
}

void validate(const RegularizerSpec& spec) {
  std::visit(Overloaded{
                 [](const DiagonalQ& q) {
                   if (q.k.size() < 1 || !(q.k.array() > 0.0).all() || !q.k.allFinite())
                     throw ParameterError("DiagonalQ needs every k_i > 0");
                 },
                 [](const RadialQ& q) {
                   if (!(q.delta >= 0.0)) throw ParameterError("RadialQ needs delta >= 0");
                   if (!(q.wtilde0.norm() > 0.0)) throw ParameterError("RadialQ needs a nonzero wtilde0");
                 },
                 [](const L1&) {}, [](const L2&) {},
                 [](const WeightedL2& q) {
                   if (q.weights.size() < 1 || !(q.weights.array() > 0.0).all())
                     throw ParameterError("WeightedL2 needs positive weights");
                 },
                 [](const MahalanobisAboutInit& q) {
                   if (q.B.rows() != q.B.cols() || q.B.rows() != q.wtilde0.size())
                     throw ParameterError("Mahalanobis B must be d x d");
                   if (!q.B.isApprox(q.B.transpose(), 1e-12)) throw ParameterError("Mahalanobis B must be symmetric");
                   Eigen::LLT<Eigen::MatrixXd> llt(q.B);
                   if (llt.info() != Eigen::Success) throw ParameterError("Mahalanobis B must be positive definite");
                 }},
             spec);
}

QEval q_eval(const RegularizerSpec& spec, const Eigen::VectorXd& w) {
  validate(spec);
  auto need_dim = [&](Eigen::Index d) {
    if (w.size() != d) throw ParameterError("w has the wrong dimension for this regularizer");
  };
  return std::visit(
      Overloaded{
          [&](const DiagonalQ& q) {
            need_dim(q.k.size());
            QEval e{0.0, Eigen::VectorXd(w.size())};
            for (Eigen::Index i = 0; i < w.size(); ++i) {
              e.value += qk_value(w(i), q.k(i));
              e.gradient(i) = qk_gradient(w(i), q.k(i));
            }
            return e;
          },
          [&](const RadialQ& q) {
            need_dim(q.wtilde0.size());
            const Eigen::VectorXd z = radial_z(q.delta, q.wtilde0);
            const double r = w.norm();
            QEval e{qhat::value(r, q.delta) + z.dot(w), z};
            if (r > 0.0) e.gradient += qhat::derivative(r, q.delta) * (w / r);
            return e;
          },
          [&](const L1&) {
            QEval e{w.lpNorm<1>(), Eigen::VectorXd(w.size())};
            for (Eigen::Index i = 0; i < w.size(); ++i) e.gradient(i) = (w(i) > 0.0) - (w(i) < 0.0);
            return e;
          },
          [&](const L2&) { return QEval{0.5 * w.squaredNorm(), w}; },
          [&](const WeightedL2& q) {
            need_dim(q.weights.size());
            return QEval{q.weights.dot(w.cwiseAbs2()), 2.0 * q.weights.cwiseProduct(w)};
          },
          [&](const MahalanobisAboutInit& q) {
            need_dim(q.wtilde0.size());
            const Eigen::VectorXd e0 = w - q.wtilde0;
            const Eigen::VectorXd Be = q.B * e0;
            return QEval{e0.dot(Be), 2.0 * Be};
          }},
      spec);
}

Eigen::MatrixXd radial_hessian(const RadialQ& spec, const Eigen::VectorXd& w) {
  const double r = w.norm();
  if (!(r > 0.0)) throw ParameterError("RadialQ Hessian is undefined at w = 0");
  const Eigen::VectorXd u = w / r;
  const Eigen::MatrixXd uu = u * u.transpose();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(w.size(), w.size());
  return qhat::second_derivative(r, spec.delta) * uu + qhat::radial_ratio(r, spec.delta) * (I - uu);
}

DiagonalQ diagonal_q_from_init(const DiagonalParams& p0) {
  validate(p0);
  if (p0.u_plus != p0.u_minus || p0.v_plus != p0.v_minus)
    throw ScopeError("DiagonalQ covers unbiased initializations (u+ = u-, v+ = v-) only");
  DiagonalQ q{k_from_init(p0)};
  if (!(q.k.array() > 0.0).all()) throw ParameterError("degenerate diagonal init gives k_i = 0");
  return q;
}

namespace {

// Rounding in a^2 - ||w||^2 can leave a tiny negative delta for s = 0.
double clamp_rounding(double delta, double a2, double w2) {
  return delta < 0.0 && -delta <= 1e-12 * (a2 + w2) ? 0.0 : delta;
}

}  // namespace

RadialQ radial_q_from_init(const FcParams& p0) {
  validate(p0);
  if (p0.a.size() == 1) {
    const double a2 = p0.a(0) * p0.a(0), w2 = p0.W.col(0).squaredNorm();
    const double delta = clamp_rounding(a2 - w2, a2, w2);
    if (delta < 0.0) throw ScopeError("single-neuron RadialQ requires delta >= 0 (shape s >= 0)");
    return {delta, p0.a(0) * p0.W.col(0)};
  }
  const ConservedFc c = conserved(p0);
  const double scale = std::max(1.0, p0.a.squaredNorm());
  if (c.Delta.cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ScopeError("multi-neuron RadialQ requires a strictly balanced init (Delta = 0)");
  return {0.0, p0.W * p0.a};
}

RadialQ radial_q_from_init(const LeakyParams& p0) {
  const double a2 = p0.a * p0.a, w2 = p0.w.squaredNorm();
  const double delta = clamp_rounding(a2 - w2, a2, w2);
  if (delta < 0.0) throw ScopeError("leaky-neuron RadialQ requires delta >= 0 (shape s >= 0)");
  return {delta, p0.a * p0.w};
}

WeightedL2 weighted_l2_from_init(const DiagonalParams& p0) {
  validate(p0);
  const Eigen::VectorXd denom = 2.0 * (p0.u_plus.cwiseAbs2() + p0.v_plus.cwiseAbs2());
  return {denom.cwiseInverse()};
}

Eigen::MatrixXd mahalanobis_B(double s, const Eigen::VectorXd& u) {
  if (!(s > -1.0 && s <= 1.0)) throw ParameterError("Mahalanobis shape must lie in (-1, 1]");
  if (std::abs(u.norm() - 1.0) > 1e-12) throw ParameterError("Mahalanobis orientation must be a unit vector");
  const double coef = (1.0 - s) * (1.0 - s) / (2.0 * (1.0 + s * s));
  return Eigen::MatrixXd::Identity(u.size(), u.size()) - coef * u * u.transpose();
}

MahalanobisAboutInit mahalanobis_about_init(double s, const Eigen::VectorXd& u, const Eigen::VectorXd& wtilde0) {
  return {mahalanobis_B(s, u), wtilde0};
}

double rkhs_norm(const Eigen::VectorXd& w, const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols() || A.rows() != w.size()) throw ParameterError("rkhs_norm dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw NumericError("kernel matrix is not positive definite");
  return w.dot(llt.solve(w));
}

nlohmann::json to_json(const RegularizerSpec& spec) {
  return std::visit(
      Overloaded{[](const DiagonalQ& q) { return nlohmann::json{{"kind", "diagonal_q"}, {"k", as_vec(q.k)}}; },
                 [](const RadialQ& q) {
                   return nlohmann::json{{"kind", "radial_q"}, {"delta", q.delta}, {"wtilde0", as_vec(q.wtilde0)}};
                 },
                 [](const L1&) { return nlohmann::json{{"kind", "l1"}}; },
                 [](const L2&) { return nlohmann::json{{"kind", "l2"}}; },
                 [](const WeightedL2& q) {
                   return nlohmann::json{{"kind", "weighted_l2"}, {"weights", as_vec(q.weights)}};
                 },
                 [](const MahalanobisAboutInit& q) {
                   nlohmann::json rows = nlohmann::json::array();
                   for (Eigen::Index i = 0; i < q.B.rows(); ++i) rows.push_back(as_vec(q.B.row(i).transpose()));
                   return nlohmann::json{{"kind", "mahalanobis"}, {"B", rows}, {"wtilde0", as_vec(q.wtilde0)}};
                 }},
      spec);
}

RegularizerSpec regularizer_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  RegularizerSpec spec;
  if (kind == "diagonal_q") {
    spec = DiagonalQ{as_eigen(j.at("k"))};
  } else if (kind == "radial_q") {
    spec = RadialQ{j.at("delta").get<double>(), as_eigen(j.at("wtilde0"))};
  } else if (kind == "l1") {
    spec = L1{};
  } else if (kind == "l2") {
    spec = L2{};
  } else if (kind == "weighted_l2") {
    spec = WeightedL2{as_eigen(j.at("weights"))};
  } else if (kind == "mahalanobis") {
    const auto& rows = j.at("B");
    const auto d = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd B(d, d);
    for (Eigen::Index i = 0; i < d; ++i) B.row(i) = as_eigen(rows[static_cast<std::size_t>(i)]).transpose();
    spec = MahalanobisAboutInit{B, as_eigen(j.at("wtilde0"))};
  } else {
    throw ParameterError("unknown regularizer kind '" + kind + "'");
  }
  validate(spec);
  return spec;
}

}  // namespace ibflow
