#include <memory>
#include <random>

#include <benchmark/benchmark.h>

#include "resmpc/log.hpp"
#include "resmpc/sim.hpp"

using namespace resmpc;

namespace {

struct Fixture {
  Scenario scenario;
  std::shared_ptr<const ConstraintBundle> bundle;
  std::unique_ptr<ResilientController> controller;
  std::vector<Vec> states;
};

const Fixture& fixture() {
  static Fixture f = [] {
    set_log_level(LogLevel::Error);
    Fixture out;
    out.scenario = load_scenario(RESMPC_CONFIG_DIR "/acc_default.yaml");
    out.bundle = std::make_shared<const ConstraintBundle>(
        prepare(out.scenario.model(), out.scenario.grid(), out.scenario.cost()));
    out.controller = std::make_unique<ResilientController>(out.bundle);
    const SimTrace t = run_closed_loop(
        out.scenario, ClosedLoopController::resilient(out.bundle, out.scenario.detector.inflation), RunOptions{});
    for (const TraceRow& r : t.rows) out.states.push_back(r.y);
    return out;
  }();
  return f;
}

void BM_ControlStep(benchmark::State& state) {
  const Fixture& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    try {
      benchmark::DoNotOptimize(f.controller->control_step(f.states[i], 0.0));
    } catch (const InfeasibleStepError&) {
    }
    i = (i + 1) % f.states.size();
  }
}
BENCHMARK(BM_ControlStep)->Unit(benchmark::kMicrosecond);

void BM_OneStep(benchmark::State& state) {
  const Fixture& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.controller->solve_one_step(f.states[i], 1));
    i = (i + 1) % f.states.size();
  }
}
BENCHMARK(BM_OneStep)->Unit(benchmark::kMicrosecond);

void BM_HorizonN5(benchmark::State& state) {
  const Fixture& f = fixture();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.controller->solve_horizon(f.states[i], 5, 1));
    i = (i + 1) % f.states.size();
  }
}
BENCHMARK(BM_HorizonN5)->Unit(benchmark::kMicrosecond);

void BM_SolveQp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Mat M(n, n), A(2 * n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = normal(rng);
  for (int i = 0; i < 2 * n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = normal(rng);
  Vec q(n);
  for (int i = 0; i < n; ++i) q(i) = 5.0 * normal(rng);
  const QpProblem p(M.transpose() * M + Mat::Identity(n, n), q, A, Vec::Constant(2 * n, -1.0), Vec::Ones(2 * n));
  for (auto _ : state) benchmark::DoNotOptimize(solve_qp(p));
}
BENCHMARK(BM_SolveQp)->Arg(5)->Arg(20)->Unit(benchmark::kMicrosecond);

void BM_Prepare(benchmark::State& state) {
  set_log_level(LogLevel::Error);
  Scenario sc = load_scenario(RESMPC_CONFIG_DIR "/acc_default.yaml");
  for (auto _ : state) benchmark::DoNotOptimize(prepare(sc.model(), sc.grid(), sc.cost()));
}
BENCHMARK(BM_Prepare)->Unit(benchmark::kSecond)->Iterations(1);

}  // namespace
BENCHMARK_MAIN();
