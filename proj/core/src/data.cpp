#include "ibflow/data.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "ibflow/csv.hpp"
#include "ibflow/errors.hpp"
#include "ibflow/rng.hpp"

namespace ibflow {

void validate(const Dataset& data) {
  if (data.X.cols() != data.y.size())
    throw ParameterError("X has " + std::to_string(data.X.cols()) + " columns but y has length " +
                         std::to_string(data.y.size()));
  if (data.beta_star && data.beta_star->size() != data.X.rows())
    throw ParameterError("beta_star length does not match d");
  if (!(data.noise_var >= 0.0)) throw ParameterError("noise_var must be nonnegative");
}

Dataset gen_sparse_regression(int n, int d, int r_star, double noise_std, std::uint64_t seed) {
  if (n < 1) throw ParameterError("n must be at least 1");
  if (d < 1) throw ParameterError("d must be at least 1");
  if (r_star < 1 || r_star > d) throw ParameterError("r_star must lie in [1, d]");
  if (!(noise_std >= 0.0)) throw ParameterError("noise_std must be nonnegative");

  GaussianStream rng(seed);
  Dataset data;
  data.X = rng.matrix(d, n);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  beta.head(r_star).setConstant(1.0 / std::sqrt(static_cast<double>(r_star)));
  const Eigen::VectorXd noise = rng.vector(n);
  data.y = data.X.transpose() * beta;
  if (noise_std > 0.0) data.y += noise_std * noise;
  data.beta_star = beta;
  data.noise_var = noise_std * noise_std;
  data.generation = GenerationInfo{n, d, r_star, noise_std, seed};
  return data;
}

double population_error(const Eigen::VectorXd& w, const Dataset& data) {
  if (!data.beta_star) throw PreconditionError("population_error needs beta_star");
  if (w.size() != data.beta_star->size()) throw ParameterError("w length does not match d");
  return (*data.beta_star - w).squaredNorm() + data.noise_var;
}

nlohmann::json sidecar_json(const Dataset& data) {
  nlohmann::json j;
  j["n"] = data.samples();
  j["d"] = data.dim();
  j["noise_var"] = data.noise_var;
  if (data.generation) {
    j["r_star"] = data.generation->r_star;
    j["noise_std"] = data.generation->noise_std;
    j["seed"] = data.generation->seed;
  }
  nlohmann::json support = nlohmann::json::array();
  if (data.beta_star) {
    for (Eigen::Index i = 0; i < data.beta_star->size(); ++i)
      if ((*data.beta_star)(i) != 0.0) support.push_back(i);
    j["beta_star"] = std::vector<double>(data.beta_star->data(),
                                         data.beta_star->data() + data.beta_star->size());
  }
  j["beta_star_support"] = support;
  return j;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  validate(data);
  std::filesystem::create_directories(dir);
  csv::write_matrix(dir / "X.csv", data.X);
  csv::write_matrix(dir / "y.csv", data.y);
  std::ofstream(dir / "dataset.json") << sidecar_json(data).dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.X = csv::read_matrix(dir / "X.csv");
  const Eigen::MatrixXd y = csv::read_matrix(dir / "y.csv");
  if (y.cols() != 1 && y.rows() > 0) throw ParameterError("y.csv must have one column");
  data.y = y.col(0);
  std::ifstream in(dir / "dataset.json");
  if (in) {
    const auto j = nlohmann::json::parse(in);
    data.noise_var = j.value("noise_var", 0.0);
    if (j.contains("beta_star")) {
      const auto b = j["beta_star"].get<std::vector<double>>();
      data.beta_star = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    if (j.contains("seed"))
      data.generation = GenerationInfo{j["n"].get<int>(), j["d"].get<int>(), j["r_star"].get<int>(),
                                       j["noise_std"].get<double>(), j["seed"].get<std::uint64_t>()};
  }
  validate(data);
  return data;
}

}  // namespace ibflow
