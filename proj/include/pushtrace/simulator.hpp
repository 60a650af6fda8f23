#pragma once

#include "pushtrace/channel.hpp"
#include "pushtrace/pbdma.hpp"
#include "pushtrace/vmem.hpp"

namespace pushtrace {

/// One simulated GPU: memory, the channel table and a PBDMA consuming it.
struct Simulator {
    explicit Simulator(CostModel cost = {}, DomainCapacities caps = {}, ChannelTableConfig chcfg = {})
        : mem(caps), channels(mem, chcfg), pbdma(mem, channels, cost)
    {
    }

    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    AddressSpace mem;
    ChannelTable channels;
    Pbdma pbdma;
};

} // namespace pushtrace
