#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "qtb/envelope.hpp"
#include "qtb/inference.hpp"
#include "qtb/lp.hpp"
#include "qtb/sim.hpp"

using namespace qtb;

static void BM_NestedEnvelope(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> ps(1024), es(1024);
  for (auto& p : ps) p = unif(rng);
  for (auto& e : es) e = 0.05 + 0.9 * unif(rng);
  const SensitivityPair s(2.0, 1.5);
  for (auto _ : state) {
    double acc = 0.0;
    for (std::size_t k = 0; k < ps.size(); ++k) acc += g_nested(ps[k], es[k], s, Side::Lower);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ps.size()));
}
BENCHMARK(BM_NestedEnvelope);

static void BM_LpAudit(benchmark::State& state) {
  const auto cases = gen_audit_cells(7, {2, 3, 5, 8, 12, 20}, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_lp_audit(cases));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LpAudit)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_OneStep(benchmark::State& state) {
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  const std::size_t n1 = static_cast<std::size_t>(state.range(0));
  const auto data = dgp.sample(n1, n1 * 3 / 2, 3);
  const std::vector<SensitivityPair> s{SensitivityPair(1.15, 1.1), SensitivityPair(1.6, 1.4),
                                       SensitivityPair(2.2, 1.8)};
  NuisanceOptions opt;
  for (auto _ : state) {
    const CrossFitNuisance cf = estimate_nuisances(data, dgp.grid(), opt);
    benchmark::DoNotOptimize(one_step_estimate(data, cf, s, Variant::Full, true));
  }
}
BENCHMARK(BM_OneStep)->Arg(400)->Arg(1600)->Unit(benchmark::kMillisecond);

static void BM_MultiplierCritical(benchmark::State& state) {
  const Dgp dgp = gen_regular_dgp(experiment2_spec());
  const auto data = dgp.sample(1600, 2400, 4);
  NuisanceOptions opt;
  const CrossFitNuisance cf = estimate_nuisances(data, dgp.grid(), opt);
  const auto os = one_step_estimate(data, cf, {SensitivityPair(1.6, 1.4)}, Variant::Full, true);
  const int draws = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(multiplier_critical(os.eif, 0.05, draws, 5, &data.r));
}
BENCHMARK(BM_MultiplierCritical)->Arg(149)->Arg(999)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
