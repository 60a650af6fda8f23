// Serial reference loop vs. the OpenMP sweep, on the default scenario grids.

#include <benchmark/benchmark.h>

#include "pushtrace/sweep.hpp"

using namespace pushtrace;

namespace {

ScenarioConfig graph_config(std::int64_t max_len)
{
    ScenarioConfig c;
    c.graph_lengths = {1, static_cast<std::uint64_t>(max_len), 1, 0};
    return c;
}

void BM_MemcpySerial(benchmark::State& st)
{
    ScenarioConfig cfg;
    auto pts = memcpy_points(cfg);
    for (auto _ : st)
        benchmark::DoNotOptimize(memcpy_sweep_serial(cfg, pts));
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(pts.size()));
}

void BM_MemcpyParallel(benchmark::State& st)
{
    ScenarioConfig cfg;
    cfg.threads = static_cast<int>(st.range(0));
    auto pts = memcpy_points(cfg);
    for (auto _ : st)
        benchmark::DoNotOptimize(memcpy_sweep_parallel(cfg, pts));
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(pts.size()));
}

void BM_GraphSerial(benchmark::State& st)
{
    ScenarioConfig cfg = graph_config(st.range(0));
    auto pts = graph_points(cfg);
    for (auto _ : st)
        benchmark::DoNotOptimize(graph_sweep_serial(cfg, pts));
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(pts.size()));
}

void BM_GraphParallel(benchmark::State& st)
{
    ScenarioConfig cfg = graph_config(st.range(0));
    cfg.threads = static_cast<int>(st.range(1));
    auto pts = graph_points(cfg);
    for (auto _ : st)
        benchmark::DoNotOptimize(graph_sweep_parallel(cfg, pts));
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(pts.size()));
}

} // namespace

BENCHMARK(BM_MemcpySerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MemcpyParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GraphSerial)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GraphParallel)->Args({500, 2})->Args({2000, 2})->Args({2000, 4})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
