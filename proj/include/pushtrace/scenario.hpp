#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pushtrace/capture.hpp"
#include "pushtrace/pbdma.hpp"

namespace pushtrace {

/// Parameters of the reference capture: one stream, its init segment, then a
/// 64 MiB host-to-device copy observed at the doorbell.
struct ListingParams {
    std::uint64_t pid = 219092;
    std::uint32_t channel_id = 0x10011;
    std::uint64_t channel_handle = 0xFF4A64B8958C3808ull;
    VirtAddr gp_base = 0x20021b000ull;
    VirtAddr pb_base = 0x202600000ull;
    VirtAddr src = 0x7fa820000000ull;
    VirtAddr dst = 0x7fa80e000000ull;
    std::uint64_t bytes = 64ull << 20;
};

struct ListingResult {
    std::vector<TraceRecord> records; // [0] init segment, [1] the copy
    std::vector<ExecutionReport> reports;
    bool destination_matches = false;
    std::string rendered; // render_trace(records[1])
};

ListingResult run_listing_scenario(const ListingParams& p = {});

} // namespace pushtrace
