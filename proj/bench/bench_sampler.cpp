// Serial reference vs OpenMP batch_estimate on desk-sized Allen-Cahn batches.

#include <benchmark/benchmark.h>

#include <omp.h>

#include "dbranch/sampler.hpp"

namespace {

void run_batch(benchmark::State& state, bool parallel)
{
    const auto problem = dbranch::make_problem("allen-cahn");
    const auto points = dbranch::sample_points(*problem, 64, 1);
    const auto draws = static_cast<std::size_t>(state.range(0));
    dbranch::SamplerConfig cfg;
    cfg.seed = 1;
    if (parallel) omp_set_num_threads(static_cast<int>(state.range(1)));
    for (auto _ : state) {
        auto batch = parallel ? dbranch::batch_estimate(*problem, points, draws, cfg)
                              : dbranch::batch_estimate_serial(*problem, points, draws, cfg);
        benchmark::DoNotOptimize(batch.values.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(points.size() * draws));
}

void BM_BatchSerial(benchmark::State& state) { run_batch(state, false); }
void BM_BatchParallel(benchmark::State& state) { run_batch(state, true); }

}  // namespace

BENCHMARK(BM_BatchSerial)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_BatchParallel)->ArgsProduct({{500, 2000}, {1, 2, 4}})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
