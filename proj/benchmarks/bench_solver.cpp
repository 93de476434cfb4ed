#include "rfusion/dse_simulator.hpp"
#include "rfusion/fusion.hpp"
#include "rfusion/minimax_solver.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace rfusion;

namespace {

Matrix random_spd(std::mt19937_64& gen, Index n) {
  std::normal_distribution<double> normal;
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = normal(gen);
  return symmetrize(a * a.transpose() + 0.5 * Matrix::Identity(n, n));
}

void BM_RobustFuse(benchmark::State& state) {
  const Index n = state.range(0);
  std::mt19937_64 gen(42);
  const Estimate x(Vector::Zero(n), CovarianceMatrix(random_spd(gen, n)));
  const Estimate y(Vector::Zero(n), CovarianceMatrix(random_spd(gen, n)));
  for (auto _ : state) benchmark::DoNotOptimize(robust_fuse(x, y));
}
BENCHMARK(BM_RobustFuse)->DenseRange(1, 4)->Unit(benchmark::kMicrosecond);

void BM_CovarianceIntersection(benchmark::State& state) {
  const Index n = state.range(0);
  std::mt19937_64 gen(42);
  const Estimate x(Vector::Zero(n), CovarianceMatrix(random_spd(gen, n)));
  const Estimate y(Vector::Zero(n), CovarianceMatrix(random_spd(gen, n)));
  for (auto _ : state) benchmark::DoNotOptimize(covariance_intersection(x, y));
}
BENCHMARK(BM_CovarianceIntersection)->DenseRange(1, 4)->Unit(benchmark::kMicrosecond);

// One agent-to-agent update as performed inside the simulation.
void BM_RelativeUpdate(benchmark::State& state) {
  const auto method = static_cast<FusionMethod>(state.range(0));
  std::mt19937_64 gen(7);
  const Estimate ej(Vector::Zero(4), CovarianceMatrix(random_spd(gen, 4)));
  const Estimate ei(Vector::Ones(4), CovarianceMatrix(random_spd(gen, 4)));
  const Vector y = Vector::Constant(2, 0.5);
  const Matrix r = 1e-2 * Matrix::Identity(2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(dse::relative_update(ej, ei, y, r, method));
  state.SetLabel(to_string(method));
}
BENCHMARK(BM_RelativeUpdate)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_SimulationSeed(benchmark::State& state) {
  dse::SimConfig cfg;
  cfg.seeds = {1};
  cfg.steps = 50;
  cfg.steady_state_window = 25;
  cfg.estimators = {static_cast<dse::EstimatorKind>(state.range(0))};
  for (auto _ : state) benchmark::DoNotOptimize(dse::run_simulation(cfg));
  state.SetLabel(dse::to_string(cfg.estimators[0]));
}
BENCHMARK(BM_SimulationSeed)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
