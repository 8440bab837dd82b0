#include <benchmark/benchmark.h>

#include "ibflow/flow.hpp"
#include "ibflow/kkt.hpp"
#include "ibflow/regularizers.hpp"
#include "ibflow/warp.hpp"

namespace {

void BM_QkValue(benchmark::State& state) {
  double x = 0.3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ibflow::qk_value(x, 1e-4));
    x += 1e-9;
  }
}
BENCHMARK(BM_QkValue);

void BM_RadialGradient(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const ibflow::RadialQ q{0.5, Eigen::VectorXd::Ones(d)};
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(d, -1.0, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(ibflow::q_eval(q, w));
}
BENCHMARK(BM_RadialGradient)->Arg(10)->Arg(1000);

void BM_DiagonalGradient(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const auto data = ibflow::gen_sparse_regression(d / 5, d, 5, 0.1, 1);
  const auto p = ibflow::init_diagonal({1e-2, 0.0, std::nullopt}, d);
  for (auto _ : state) benchmark::DoNotOptimize(ibflow::gradient(p, data));
}
BENCHMARK(BM_DiagonalGradient)->Arg(200)->Arg(1000);

void BM_SolveDiagonal(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const auto data = ibflow::gen_sparse_regression(d / 5, d, 5, 0.1, 2);
  const Eigen::VectorXd k = Eigen::VectorXd::Constant(d, 1e-4);
  for (auto _ : state) benchmark::DoNotOptimize(ibflow::solve_diagonal(data, k));
}
BENCHMARK(BM_SolveDiagonal)->Arg(40)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_FlowDiagonal(benchmark::State& state) {
  const auto data = ibflow::gen_sparse_regression(10, 40, 3, 0.1, 3);
  const auto p = ibflow::init_diagonal({state.range(0) == 0 ? 1e-3 : 1.0, 0.5, std::nullopt}, 40);
  ibflow::FlowOptions opts;
  opts.record_predictor = false;
  for (auto _ : state) benchmark::DoNotOptimize(ibflow::integrate(p, data, opts));
}
BENCHMARK(BM_FlowDiagonal)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_HessianMapDefect(benchmark::State& state) {
  const Eigen::Vector3d w(0.3, -1.0, 0.7);
  for (auto _ : state)
    benchmark::DoNotOptimize(ibflow::hessian_map_defect(
        [](const Eigen::VectorXd& v) { return ibflow::warped_metric_fc(v, 1.0); }, w));
}
BENCHMARK(BM_HessianMapDefect);

}  // namespace

BENCHMARK_MAIN();
