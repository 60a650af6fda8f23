#include "pushtrace/sweep.hpp"

#include <algorithm>
#include <exception>

#include <fmt/format.h>
#include <omp.h>

#include "pushtrace/simulator.hpp"

namespace pushtrace {

namespace {

constexpr VirtAddr kSweepSrc = 0x7f0100000000ull;
constexpr VirtAddr kSweepDst = 0x7f8000000000ull;

template <typename R, typename P, typename F>
std::vector<R> parallel_map(const std::vector<P>& pts, int threads, F f)
{
    std::vector<R> out(pts.size());
    std::exception_ptr err;
    const long n = static_cast<long>(pts.size());
    const int nt = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nt)
    for (long i = 0; i < n; ++i) {
        try {
            out[i] = f(pts[i]);
        } catch (...) {
#pragma omp critical(pushtrace_sweep_error)
            if (!err)
                err = std::current_exception();
        }
    }
    if (err)
        std::rethrow_exception(err);
    return out;
}

} // namespace

const char* to_string(SweepKind k) noexcept
{
    return k == SweepKind::Exponential ? "exp" : "linear";
}

std::vector<std::uint64_t> sweep_values(const SizeSweep& s)
{
    std::vector<std::uint64_t> out;
    for (std::uint64_t v = s.start; v <= s.end;) {
        out.push_back(v);
        std::uint64_t next = s.factor ? v * s.factor : v + s.step;
        if (next <= v)
            break;
        v = next;
    }
    return out;
}

std::vector<MemcpyPoint> memcpy_points(const ScenarioConfig& cfg)
{
    std::vector<MemcpyPoint> pts;
    auto add = [&](SweepKind k, const SizeSweep& s) {
        for (std::uint64_t b : sweep_values(s)) {
            if (b <= cfg.cost.inline_max_bytes)
                pts.push_back({k, b, EngineKind::ComputeInline});
            pts.push_back({k, b, EngineKind::CopyDirect});
        }
    };
    add(SweepKind::Exponential, cfg.memcpy_exp);
    add(SweepKind::Linear, cfg.memcpy_linear);
    return pts;
}

MemcpyRow run_memcpy_point(const ScenarioConfig& cfg, const MemcpyPoint& p)
{
    Simulator sim(cfg.cost);
    Driver drv(sim, cfg.driver);
    Stream& s = drv.create_stream();
    const std::uint64_t map_len = (p.bytes + kPageSize - 1) / kPageSize * kPageSize;
    sim.mem.map(kSweepSrc, map_len, DomainKind::HostRam, AllocTag::UserData);
    sim.mem.map(kSweepDst, map_len, DomainKind::DeviceVram, AllocTag::UserData);

    TransferDescriptor t;
    t.engine = p.engine;
    t.dst = kSweepDst;
    t.length = p.bytes;
    if (p.engine == EngineKind::ComputeInline) {
        t.inline_bytes.resize(p.bytes);
        for (std::size_t i = 0; i < t.inline_bytes.size(); ++i)
            t.inline_bytes[i] = static_cast<std::byte>(i * 131 + 7);
    } else {
        t.src = kSweepSrc;
    }
    CoalescedBenchmark b = drv.build_coalesced_benchmark(s, t, cfg.warmup_iters, cfg.test_iters);
    BenchmarkResult r = drv.run_coalesced_benchmark(s, b);

    MemcpyRow row;
    row.point = p;
    row.latency_ns = r.per_iter_ns;
    row.bandwidth_gibps = static_cast<double>(p.bytes) / r.per_iter_ns * 1e9 / kBytesPerGiB;
    row.doorbells = r.doorbells;
    return row;
}

std::vector<GraphPoint> graph_points(const ScenarioConfig& cfg)
{
    std::vector<GraphPoint> pts;
    for (std::uint64_t n : sweep_values(cfg.graph_lengths))
        for (GraphStrategyKind k : {GraphStrategyKind::Legacy118, GraphStrategyKind::Modern130})
            pts.push_back({static_cast<std::uint32_t>(n), k});
    return pts;
}

GraphRow run_graph_point(const ScenarioConfig& cfg, const GraphPoint& p)
{
    Simulator sim(cfg.cost);
    Driver drv(sim, cfg.driver);
    Stream& s = drv.create_stream();
    const LaunchStrategy& strat = p.strategy == GraphStrategyKind::Legacy118 ? cfg.legacy118 : cfg.modern130;
    GraphExec exec = graph_upload(GraphSpec{p.length, cfg.node_cost_ns}, strat);
    LaunchStats st = drv.graph_launch(exec, s);

    GraphRow row;
    row.point = p;
    row.emitted_bytes = st.emitted_bytes;
    row.doorbells = st.doorbell_writes;
    row.gpfifo_entries = st.gpfifo_entries;
    row.nodes_executed = st.nodes_executed;
    row.launch_ns = st.launch_time_ns;
    return row;
}

std::vector<MemcpyRow> memcpy_sweep_serial(const ScenarioConfig& cfg, const std::vector<MemcpyPoint>& pts)
{
    std::vector<MemcpyRow> out;
    out.reserve(pts.size());
    for (const auto& p : pts)
        out.push_back(run_memcpy_point(cfg, p));
    return out;
}

std::vector<MemcpyRow> memcpy_sweep_parallel(const ScenarioConfig& cfg, const std::vector<MemcpyPoint>& pts)
{
    return parallel_map<MemcpyRow>(pts, cfg.threads, [&](const MemcpyPoint& p) { return run_memcpy_point(cfg, p); });
}

std::vector<GraphRow> graph_sweep_serial(const ScenarioConfig& cfg, const std::vector<GraphPoint>& pts)
{
    std::vector<GraphRow> out;
    out.reserve(pts.size());
    for (const auto& p : pts)
        out.push_back(run_graph_point(cfg, p));
    return out;
}

std::vector<GraphRow> graph_sweep_parallel(const ScenarioConfig& cfg, const std::vector<GraphPoint>& pts)
{
    return parallel_map<GraphRow>(pts, cfg.threads, [&](const GraphPoint& p) { return run_graph_point(cfg, p); });
}

FitResult fit_graph_rows(const std::vector<GraphRow>& rows, GraphStrategyKind strategy)
{
    std::vector<Sample> samples;
    for (const auto& r : rows)
        if (r.point.strategy == strategy)
            samples.push_back({static_cast<double>(r.emitted_bytes), r.launch_ns});
    return fit_bandwidth(samples);
}

void write_memcpy_csv(std::ostream& out, const std::vector<MemcpyRow>& rows)
{
    out << "sweep,size_bytes,engine,latency_ns,bandwidth_gibps,doorbells\n";
    for (const auto& r : rows)
        out << fmt::format("{},{},{},{:.3f},{:.6f},{}\n", to_string(r.point.sweep), r.point.bytes,
                           to_string(r.point.engine), r.latency_ns, r.bandwidth_gibps, r.doorbells);
}

void write_graph_csv(std::ostream& out, const std::vector<GraphRow>& rows)
{
    out << "length,strategy,emitted_bytes,doorbells,gpfifo_entries,launch_us\n";
    for (const auto& r : rows)
        out << fmt::format("{},{},{},{},{},{:.6f}\n", r.point.length, to_string(r.point.strategy), r.emitted_bytes,
                           r.doorbells, r.gpfifo_entries, r.launch_ns / 1000.0);
}

std::string graph_summary(const std::vector<GraphRow>& rows)
{
    std::string out;
    for (GraphStrategyKind k : {GraphStrategyKind::Legacy118, GraphStrategyKind::Modern130}) {
        std::vector<const GraphRow*> sel;
        for (const auto& r : rows)
            if (r.point.strategy == k)
                sel.push_back(&r);
        if (sel.empty())
            continue;
        auto [lo, hi] = std::minmax_element(sel.begin(), sel.end(), [](const GraphRow* a, const GraphRow* b) {
            return a->point.length < b->point.length;
        });
        out += fmt::format("# {} lengths {}..{}: emitted {}..{} B, launch {:.3f}..{:.3f} us, doorbells {}..{}\n",
                           to_string(k), (*lo)->point.length, (*hi)->point.length, (*lo)->emitted_bytes,
                           (*hi)->emitted_bytes, (*lo)->launch_ns / 1000.0, (*hi)->launch_ns / 1000.0,
                           (*lo)->doorbells, (*hi)->doorbells);
        try {
            FitResult f = fit_graph_rows(rows, k);
            out += fmt::format("# {} effective write bandwidth {:.2f} MiB/s (intercept {:.1f} ns, r2 {:.6f})\n",
                               to_string(k), f.bandwidth_mibps, f.intercept_ns, f.r2);
        } catch (const Error&) {
            out += fmt::format("# {} effective write bandwidth n/a (fewer than two distinct sizes)\n", to_string(k));
        }
    }
    return out;
}

} // namespace pushtrace
