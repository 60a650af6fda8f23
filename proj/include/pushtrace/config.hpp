#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "pushtrace/driver.hpp"
#include "pushtrace/pbdma.hpp"

namespace pushtrace {

struct SizeSweep {
    std::uint64_t start = 0;
    std::uint64_t end = 0;
    std::uint64_t step = 0;   // linear step; 0 for geometric sweeps
    std::uint64_t factor = 0; // geometric factor; 0 for linear sweeps

    void validate(std::string_view name) const; // throws Config
};

/// Everything a sweep or scenario needs, loadable from `key = value` text.
struct ScenarioConfig {
    DriverConfig driver;
    CostModel cost;
    LaunchStrategy legacy118 = LaunchStrategy::legacy118();
    LaunchStrategy modern130 = LaunchStrategy::modern130();
    std::uint32_t node_cost_ns = 0;

    SizeSweep memcpy_exp{4, 32ull << 20, 0, 2};
    SizeSweep memcpy_linear{1024, 31 * 1024, 1024, 0};
    std::uint32_t warmup_iters = 1;
    std::uint32_t test_iters = 10;
    SizeSweep graph_lengths{1, 2000, 1, 0};
    int threads = 0; // 0 lets OpenMP decide

    void validate() const;

    /// Keys not listed in `describe()` are rejected. Sizes accept K/M/G
    /// (binary) suffixes, integers accept 0x prefixes.
    static ScenarioConfig parse(std::string_view text);
    static ScenarioConfig load(const std::filesystem::path& path); // Io / Config
    /// Every key with its current value, one `key = value` line each.
    std::string describe() const;
};

} // namespace pushtrace
