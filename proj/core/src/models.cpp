#include "ibflow/models.hpp"

#include <cmath>

#include "ibflow/errors.hpp"

namespace ibflow {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

void check_shape_scale(double alpha, double s) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be positive");
  if (!(std::abs(s) < 1.0)) throw ParameterError("shape s must satisfy |s| < 1");
}

// |small factor|, |large factor| for given (alpha, s).
std::pair<double, double> factor_magnitudes(double alpha, double s) {
  return {std::sqrt(alpha * (1.0 - s) / (1.0 + s)), std::sqrt(alpha * (1.0 + s) / (1.0 - s))};
}

void check_data(Eigen::Index d, const Dataset& data) {
  validate(data);
  if (data.dim() != d)
    throw ParameterError("parameter dimension " + std::to_string(d) + " does not match data dimension " +
                         std::to_string(data.dim()));
}

LossResidual residual_from_outputs(const Eigen::VectorXd& f, const Dataset& data) {
  const double n = static_cast<double>(data.samples());
  LossResidual out;
  const Eigen::VectorXd diff = data.y - f;
  out.loss = 0.5 * diff.squaredNorm() / n;
  out.r = diff / n;
  return out;
}

std::vector<double> as_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd as_eigen(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Family family_from_string(const std::string& name) {
  if (name == "diagonal") return Family::kDiagonal;
  if (name == "fc_single" || name == "fc") return Family::kFcSingle;
  if (name == "leaky") return Family::kLeaky;
  throw ParameterError("unknown model family '" + name + "'");
}

std::string to_string(Family family) {
  switch (family) {
    case Family::kDiagonal: return "diagonal";
    case Family::kFcSingle: return "fc_single";
    case Family::kLeaky: return "leaky";
  }
  return "unknown";
}

void validate(const DiagonalParams& p) {
  const auto d = p.u_plus.size();
  if (p.u_minus.size() != d || p.v_plus.size() != d || p.v_minus.size() != d)
    throw ParameterError("diagonal parameter vectors must share length d");
}

void validate(const FcParams& p) {
  if (p.a.size() < 1) throw ParameterError("fc network needs at least one neuron");
  if (p.W.cols() != p.a.size()) throw ParameterError("W column count must equal length of a");
}

void validate(const LeakyParams& p) {
  if (!(p.rho > 0.0)) throw ParameterError("leaky slope rho must be positive");
}

Eigen::Index dim(const DiagonalParams& p) { return p.u_plus.size(); }
Eigen::Index dim(const FcParams& p) { return p.W.rows(); }
Eigen::Index dim(const LeakyParams& p) { return p.w.size(); }
Eigen::Index dim(const ModelParams& p) {
  return std::visit([](const auto& q) { return dim(q); }, p);
}

Eigen::VectorXd predictor(const DiagonalParams& p) {
  validate(p);
  return p.u_plus.cwiseProduct(p.v_plus) - p.u_minus.cwiseProduct(p.v_minus);
}

Eigen::VectorXd predictor(const FcParams& p) {
  validate(p);
  return p.W * p.a;
}

Eigen::VectorXd predictor(const LeakyParams& p) { return p.a * p.w; }

Eigen::VectorXd predictor(const ModelParams& p) {
  return std::visit([](const auto& q) { return predictor(q); }, p);
}

Eigen::VectorXd outputs(const DiagonalParams& p, const Eigen::MatrixXd& X) {
  return X.transpose() * predictor(p);
}

Eigen::VectorXd outputs(const FcParams& p, const Eigen::MatrixXd& X) {
  validate(p);
  // Neuron by neuron so that a single neuron matches the leaky path bit for bit.
  Eigen::VectorXd f = Eigen::VectorXd::Zero(X.cols());
  for (Eigen::Index i = 0; i < p.a.size(); ++i) {
    const Eigen::VectorXd wi = p.W.col(i);
    const Eigen::VectorXd pre = X.transpose() * wi;
    f += p.a(i) * pre;
  }
  return f;
}

Eigen::VectorXd activation_slopes(const LeakyParams& p, const Eigen::MatrixXd& X) {
  const Eigen::VectorXd pre = X.transpose() * p.w;
  Eigen::VectorXd c(pre.size());
  for (Eigen::Index n = 0; n < pre.size(); ++n) c(n) = pre(n) < 0.0 ? p.rho : 1.0;
  return c;
}

Eigen::VectorXd outputs(const LeakyParams& p, const Eigen::MatrixXd& X) {
  validate(p);
  const Eigen::VectorXd pre = X.transpose() * p.w;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(X.cols());
  Eigen::VectorXd act(pre.size());
  for (Eigen::Index n = 0; n < pre.size(); ++n) act(n) = pre(n) < 0.0 ? p.rho * pre(n) : pre(n);
  f += p.a * act;
  return f;
}

Eigen::VectorXd outputs(const ModelParams& p, const Eigen::MatrixXd& X) {
  return std::visit([&](const auto& q) { return outputs(q, X); }, p);
}

LossResidual loss_and_residual(const DiagonalParams& p, const Dataset& data) {
  check_data(dim(p), data);
  return residual_from_outputs(outputs(p, data.X), data);
}

LossResidual loss_and_residual(const FcParams& p, const Dataset& data) {
  check_data(dim(p), data);
  return residual_from_outputs(outputs(p, data.X), data);
}

LossResidual loss_and_residual(const LeakyParams& p, const Dataset& data) {
  check_data(dim(p), data);
  return residual_from_outputs(outputs(p, data.X), data);
}

LossResidual loss_and_residual(const ModelParams& p, const Dataset& data) {
  return std::visit([&](const auto& q) { return loss_and_residual(q, data); }, p);
}

DiagonalParams gradient(const DiagonalParams& p, const Dataset& data) {
  const Eigen::VectorXd g = data.X * loss_and_residual(p, data).r;
  DiagonalParams out;
  out.u_plus = -p.v_plus.cwiseProduct(g);
  out.v_plus = -p.u_plus.cwiseProduct(g);
  out.u_minus = p.v_minus.cwiseProduct(g);
  out.v_minus = p.u_minus.cwiseProduct(g);
  return out;
}

FcParams gradient(const FcParams& p, const Dataset& data) {
  const Eigen::VectorXd g = data.X * loss_and_residual(p, data).r;
  FcParams out;
  out.a.resize(p.a.size());
  out.W.resize(p.W.rows(), p.W.cols());
  for (Eigen::Index i = 0; i < p.a.size(); ++i) {
    const Eigen::VectorXd wi = p.W.col(i);
    out.a(i) = -wi.dot(g);
    out.W.col(i) = -p.a(i) * g;
  }
  return out;
}

LeakyParams gradient(const LeakyParams& p, const Dataset& data) {
  const Eigen::VectorXd r = loss_and_residual(p, data).r;
  const Eigen::VectorXd c = activation_slopes(p, data.X);
  const Eigen::VectorXd g = data.X * c.cwiseProduct(r);
  LeakyParams out;
  out.rho = p.rho;
  out.a = -p.w.dot(g);
  out.w = -p.a * g;
  return out;
}

ConservedDiag conserved(const DiagonalParams& p) {
  validate(p);
  ConservedDiag c;
  c.c = p.u_plus.cwiseProduct(p.u_minus) + p.v_plus.cwiseProduct(p.v_minus);
  c.delta_plus = p.v_plus.cwiseAbs2() - p.u_plus.cwiseAbs2();
  c.delta_minus = p.v_minus.cwiseAbs2() - p.u_minus.cwiseAbs2();
  return c;
}

ConservedFc conserved(const FcParams& p) {
  validate(p);
  ConservedFc c;
  c.Delta = p.a * p.a.transpose() - p.W.transpose() * p.W;
  c.delta = p.a.cwiseAbs2() - p.W.colwise().squaredNorm().transpose();
  return c;
}

ConservedFc conserved(const LeakyParams& p) {
  ConservedFc c;
  c.delta = Eigen::VectorXd::Constant(1, p.a * p.a - p.w.squaredNorm());
  c.Delta = Eigen::MatrixXd::Constant(1, 1, c.delta(0));
  return c;
}

Eigen::VectorXd to_state(const DiagonalParams& p) {
  const auto d = dim(p);
  Eigen::VectorXd x(4 * d);
  x << p.u_plus, p.u_minus, p.v_plus, p.v_minus;
  return x;
}

Eigen::VectorXd to_state(const FcParams& p) {
  Eigen::VectorXd x(p.a.size() + p.W.size());
  x.head(p.a.size()) = p.a;
  x.tail(p.W.size()) = Eigen::Map<const Eigen::VectorXd>(p.W.data(), p.W.size());
  return x;
}

Eigen::VectorXd to_state(const LeakyParams& p) {
  Eigen::VectorXd x(1 + p.w.size());
  x(0) = p.a;
  x.tail(p.w.size()) = p.w;
  return x;
}

DiagonalParams from_state(const DiagonalParams& like, const Eigen::VectorXd& x) {
  const auto d = dim(like);
  return {x.segment(0, d), x.segment(d, d), x.segment(2 * d, d), x.segment(3 * d, d)};
}

FcParams from_state(const FcParams& like, const Eigen::VectorXd& x) {
  FcParams p;
  p.a = x.head(like.a.size());
  p.W = Eigen::Map<const Eigen::MatrixXd>(x.data() + like.a.size(), like.W.rows(), like.W.cols());
  return p;
}

LeakyParams from_state(const LeakyParams& like, const Eigen::VectorXd& x) {
  return {x(0), x.tail(like.w.size()), like.rho};
}

DiagonalParams init_diagonal(const InitShapeScale& spec, Eigen::Index d) {
  check_shape_scale(spec.alpha, spec.shape);
  if (d < 1) throw ParameterError("d must be at least 1");
  const auto [u, v] = factor_magnitudes(spec.alpha, spec.shape);
  DiagonalParams p;
  p.u_plus = p.u_minus = Eigen::VectorXd::Constant(d, u);
  p.v_plus = p.v_minus = Eigen::VectorXd::Constant(d, v);
  return p;
}

namespace {

Eigen::VectorXd checked_orientation(const InitShapeScale& spec) {
  if (!spec.orientation) throw ParameterError("fc initialization needs an orientation");
  const Eigen::VectorXd& u = *spec.orientation;
  if (u.size() < 1 || std::abs(u.norm() - 1.0) > 1e-12)
    throw ParameterError("orientation must be a unit vector (within 1e-12)");
  return u;
}

}  // namespace

Initialized<FcParams> init_fc_single(const InitShapeScale& spec) {
  return init_fc({spec});
}

Initialized<FcParams> init_fc(const std::vector<InitShapeScale>& neurons) {
  if (neurons.empty()) throw ParameterError("fc network needs at least one neuron");
  const Eigen::Index d = checked_orientation(neurons.front()).size();
  Initialized<FcParams> out;
  out.params.a.resize(static_cast<Eigen::Index>(neurons.size()));
  out.params.W.resize(d, static_cast<Eigen::Index>(neurons.size()));
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    const auto& spec = neurons[i];
    check_shape_scale(spec.alpha, spec.shape);
    const Eigen::VectorXd u = checked_orientation(spec);
    if (u.size() != d) throw ParameterError("all orientations must share dimension d");
    const auto [w_norm, a_abs] = factor_magnitudes(spec.alpha, spec.shape);
    const auto idx = static_cast<Eigen::Index>(i);
    out.params.a(idx) = a_abs;
    out.params.W.col(idx) = w_norm * u;
    if (spec.shape < 0.0) out.outside_theorem_scope = true;
  }
  return out;
}

Initialized<LeakyParams> init_leaky(const InitShapeScale& spec, double rho) {
  const auto fc = init_fc_single(spec);
  Initialized<LeakyParams> out{{fc.params.a(0), fc.params.W.col(0), rho}, fc.outside_theorem_scope};
  validate(out.params);
  return out;
}

FcParams balanced_multi_init(const Eigen::VectorXd& a, const Eigen::VectorXd& c) {
  if (a.size() < 1 || a.isZero(0.0)) throw PreconditionError("balanced init needs a nonzero vector a");
  if (std::abs(c.norm() - 1.0) > 1e-12) throw PreconditionError("balanced init needs a unit vector c");
  return {a, c * a.transpose()};
}

ShapeScale shape_scale_of(const DiagonalParams& p, Eigen::Index i) {
  const double u = std::abs(p.u_plus(i)), v = std::abs(p.v_plus(i));
  return {u * v, (v - u) / (v + u)};
}

ShapeScale shape_scale_of(const FcParams& p, Eigen::Index neuron) {
  const double a = std::abs(p.a(neuron)), w = p.W.col(neuron).norm();
  return {a * w, (a - w) / (a + w)};
}

ShapeScale shape_scale_of(const LeakyParams& p) {
  const double a = std::abs(p.a), w = p.w.norm();
  return {a * w, (a - w) / (a + w)};
}

nlohmann::json to_json(const ModelParams& p) {
  return std::visit(
      Overloaded{
          [](const DiagonalParams& q) {
            return nlohmann::json{{"family", "diagonal"},
                                  {"u_plus", as_vec(q.u_plus)},
                                  {"u_minus", as_vec(q.u_minus)},
                                  {"v_plus", as_vec(q.v_plus)},
                                  {"v_minus", as_vec(q.v_minus)}};
          },
          [](const FcParams& q) {
            nlohmann::json cols = nlohmann::json::array();
            for (Eigen::Index i = 0; i < q.W.cols(); ++i) cols.push_back(as_vec(q.W.col(i)));
            return nlohmann::json{{"family", "fc"}, {"a", as_vec(q.a)}, {"W_columns", cols}};
          },
          [](const LeakyParams& q) {
            return nlohmann::json{{"family", "leaky"}, {"a", q.a}, {"w", as_vec(q.w)}, {"rho", q.rho}};
          }},
      p);
}

ModelParams params_from_json(const nlohmann::json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "diagonal") {
    DiagonalParams p{as_eigen(j.at("u_plus")), as_eigen(j.at("u_minus")), as_eigen(j.at("v_plus")),
                     as_eigen(j.at("v_minus"))};
    validate(p);
    return p;
  }
  if (family == "fc") {
    FcParams p;
    p.a = as_eigen(j.at("a"));
    const auto& cols = j.at("W_columns");
    const Eigen::Index d = cols.empty() ? 0 : static_cast<Eigen::Index>(cols[0].size());
    p.W.resize(d, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) p.W.col(static_cast<Eigen::Index>(i)) = as_eigen(cols[i]);
    validate(p);
    return p;
  }
  if (family == "leaky") {
    LeakyParams p{j.at("a").get<double>(), as_eigen(j.at("w")), j.at("rho").get<double>()};
    validate(p);
    return p;
  }
  throw ParameterError("unknown parameter family '" + family + "'");
}

}  // namespace ibflow
