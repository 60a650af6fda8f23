#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "pushtrace/capture.hpp"
#include "pushtrace/config.hpp"
#include "pushtrace/driver.hpp"

namespace pushtrace {

/// Expands a SizeSweep into its values, start first.
std::vector<std::uint64_t> sweep_values(const SizeSweep& s);

enum class SweepKind : std::uint8_t { Exponential, Linear };
const char* to_string(SweepKind k) noexcept;

struct MemcpyPoint {
    SweepKind sweep = SweepKind::Exponential;
    std::uint64_t bytes = 0;
    EngineKind engine = EngineKind::CopyDirect;

    friend bool operator==(const MemcpyPoint&, const MemcpyPoint&) = default;
};

struct MemcpyRow {
    MemcpyPoint point;
    double latency_ns = 0;
    double bandwidth_gibps = 0;
    std::uint64_t doorbells = 0;

    friend bool operator==(const MemcpyRow&, const MemcpyRow&) = default;
};

/// Exponential then linear sweep, both engines per size; inline points only
/// up to the inline engine's cap.
std::vector<MemcpyPoint> memcpy_points(const ScenarioConfig& cfg);
/// One coalesced benchmark on a fresh simulator.
MemcpyRow run_memcpy_point(const ScenarioConfig& cfg, const MemcpyPoint& p);

struct GraphPoint {
    std::uint32_t length = 1;
    GraphStrategyKind strategy = GraphStrategyKind::Legacy118;

    friend bool operator==(const GraphPoint&, const GraphPoint&) = default;
};

struct GraphRow {
    GraphPoint point;
    std::uint64_t emitted_bytes = 0;
    std::uint64_t doorbells = 0;
    std::uint64_t gpfifo_entries = 0;
    std::uint64_t nodes_executed = 0;
    double launch_ns = 0;

    friend bool operator==(const GraphRow&, const GraphRow&) = default;
};

std::vector<GraphPoint> graph_points(const ScenarioConfig& cfg);
GraphRow run_graph_point(const ScenarioConfig& cfg, const GraphPoint& p);

// Serial reference loops and their OpenMP counterparts. Results are ordered
// by point index in both.
std::vector<MemcpyRow> memcpy_sweep_serial(const ScenarioConfig& cfg, const std::vector<MemcpyPoint>& pts);
std::vector<MemcpyRow> memcpy_sweep_parallel(const ScenarioConfig& cfg, const std::vector<MemcpyPoint>& pts);
std::vector<GraphRow> graph_sweep_serial(const ScenarioConfig& cfg, const std::vector<GraphPoint>& pts);
std::vector<GraphRow> graph_sweep_parallel(const ScenarioConfig& cfg, const std::vector<GraphPoint>& pts);

/// OLS of launch time on emitted bytes for one strategy's rows.
FitResult fit_graph_rows(const std::vector<GraphRow>& rows, GraphStrategyKind strategy);

void write_memcpy_csv(std::ostream& out, const std::vector<MemcpyRow>& rows);
void write_graph_csv(std::ostream& out, const std::vector<GraphRow>& rows);
/// `# key: value` lines with per-strategy fits and length ranges.
std::string graph_summary(const std::vector<GraphRow>& rows);

} // namespace pushtrace
