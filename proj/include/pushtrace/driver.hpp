#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pushtrace/channel.hpp"
#include "pushtrace/method_codec.hpp"
#include "pushtrace/pbdma.hpp"
#include "pushtrace/simulator.hpp"

namespace pushtrace {

enum class Direction : std::uint8_t { H2D, D2H };
const char* to_string(Direction d) noexcept;

struct DriverConfig {
    std::uint64_t inline_switch_bytes = 24 * 1024;
    std::uint32_t max_segment_dwords = kMaxGpLengthDw;
    std::uint64_t pushbuffer_bytes = 32ull << 20;
    std::uint32_t ring_len = kDefaultRingLen;
    std::uint32_t semaphore_slots = 4096; // 16 bytes each
    VirtAddr driver_va_base = 0x400000000ull; // where streams get their rings/buffers by default
    GpEntryFlags entry_flags{false, GpEntryLevel::Subroutine, false};

    void validate() const; // throws Config
};

/// Protocol switch: ComputeInline iff H2D and len < inline_switch_bytes.
EngineKind memcpy_path(std::uint64_t len, Direction dir, std::uint64_t inline_switch_bytes = 24 * 1024) noexcept;

/// Placement of a stream's driver objects. Unset addresses are allocated from
/// DriverConfig::driver_va_base upwards.
struct StreamLayout {
    std::optional<VirtAddr> gp_base;    // DeviceVram
    std::optional<VirtAddr> pb_base;    // HostRam
    std::optional<VirtAddr> sem_base;   // HostRam
    ChannelOptions channel;
};

struct CompletionToken {
    std::uint32_t channel_id = 0;
    VirtAddr sem_addr = 0;
    std::uint32_t payload = 0;
};

class Driver;

/// A channel plus its pushbuffer, semaphore slots and payload counter.
class Stream {
public:
    ChannelContext& channel() const noexcept { return *channel_; }
    VirtAddr pb_base() const noexcept { return pb_base_; }
    VirtAddr pb_cursor() const noexcept { return pb_cursor_; }
    VirtAddr sem_base() const noexcept { return sem_base_; }
    std::uint32_t next_payload() const noexcept { return next_payload_; }

private:
    friend class Driver;

    ChannelContext* channel_ = nullptr;
    VirtAddr pb_base_ = 0;
    VirtAddr pb_cursor_ = 0;
    VirtAddr sem_base_ = 0;
    std::uint32_t next_payload_ = 1;
};

struct CoalescedBenchmark {
    std::vector<std::uint32_t> segment;
    CompletionToken warmup_tracker;
    CompletionToken test_tracker;
    std::uint32_t warmup_iters = 0;
    std::uint32_t test_iters = 0;
};

struct BenchmarkResult {
    std::uint64_t ts_warmup_ns = 0;
    std::uint64_t ts_test_ns = 0;
    double per_iter_ns = 0;
    std::uint64_t doorbells = 0;
};

// ---------------------------------------------------------------------------
// Graph launch

enum class GraphStrategyKind : std::uint8_t { Legacy118, Modern130 };
const char* to_string(GraphStrategyKind k) noexcept;

struct GraphSpec {
    std::uint32_t chain_length = 1;
    std::uint32_t node_cost_ns = 0;
};

/// Command-size and CPU cost parameters for one launch strategy.
///
/// emitted = base + ceil(n / chunk) * (chunk * per_node + per_chunk_overhead)
/// launch  = base_launch_ns + emitted / effective_write_bw
struct LaunchStrategy {
    GraphStrategyKind kind = GraphStrategyKind::Legacy118;
    std::uint32_t base_bytes = 0;
    std::uint32_t per_node_bytes = 0; // 0: nodes are described per chunk, not per node
    std::uint32_t per_chunk_overhead_bytes = 0;
    std::uint32_t chunk_nodes = 1;
    double effective_write_bw_mibps = 0;
    double base_launch_ns = 0;

    static LaunchStrategy legacy118();
    static LaunchStrategy modern130();
    static LaunchStrategy defaults(GraphStrategyKind kind);

    void validate() const; // throws Config

    std::uint32_t chunks(std::uint32_t chain_length) const noexcept;
    std::uint64_t emitted_bytes(std::uint32_t chain_length) const noexcept;
    std::uint32_t doorbells(std::uint32_t chain_length) const noexcept;
    double launch_time_ns(std::uint64_t emitted_bytes) const noexcept;
};

/// Pre-encoded submissions for one graph, one segment per doorbell.
struct GraphExec {
    GraphSpec spec;
    LaunchStrategy strategy;
    std::vector<std::vector<std::uint32_t>> segments;

    std::uint64_t emitted_bytes() const noexcept;
};

struct LaunchStats {
    std::uint64_t emitted_bytes = 0;
    std::uint64_t doorbell_writes = 0;
    std::uint64_t gpfifo_entries = 0;
    std::uint64_t nodes_executed = 0;
    double launch_time_ns = 0;
};

GraphExec graph_upload(const GraphSpec& g, const LaunchStrategy& s);

// ---------------------------------------------------------------------------

/// Userspace-driver emulation on top of a Simulator.
class Driver {
public:
    explicit Driver(Simulator& sim, DriverConfig cfg = {});

    /// Maps the ring/pushbuffer/semaphore buffer, creates the channel and
    /// submits the stream init segment (one entry, one doorbell).
    Stream& create_stream(StreamLayout layout = {});

    /// Copies `words` into the pushbuffer and submits one GPFIFO entry.
    GpFifoEntry submit_segment(Stream& s, std::span<const std::uint32_t> words, bool ring = true);
    void ring(Stream& s);

    CompletionToken memcpy(Stream& s, VirtAddr dst, VirtAddr src, std::uint64_t len, Direction dir);

    /// Appends the transfer's method groups.
    void encode_transfer(PushbufferBuilder& pb, const TransferDescriptor& t) const;
    /// Appends a timestamped semaphore release and returns its token.
    CompletionToken encode_tracker(Stream& s, PushbufferBuilder& pb);

    bool completed(const CompletionToken& tok) const;
    /// Timestamp of the release; BadState if the payload has not landed.
    std::uint64_t completion_ns(const CompletionToken& tok) const;

    /// Throws SegmentTooLarge / ZeroLength (iters == 0).
    CoalescedBenchmark build_coalesced_benchmark(Stream& s, const TransferDescriptor& t, std::uint32_t warmup_iters,
                                                 std::uint32_t test_iters);
    BenchmarkResult run_coalesced_benchmark(Stream& s, const CoalescedBenchmark& b);

    LaunchStats graph_launch(const GraphExec& exec, Stream& s);

    const DriverConfig& config() const noexcept { return cfg_; }
    Simulator& simulator() noexcept { return sim_; }

private:
    VirtAddr reserve_va(std::uint64_t len);
    VirtAddr reserve_pb(Stream& s, std::size_t dwords);
    VirtAddr sem_slot(const Stream& s, std::uint32_t payload) const noexcept;

    Simulator& sim_;
    DriverConfig cfg_;
    VirtAddr va_cursor_;
    std::vector<std::unique_ptr<Stream>> streams_;
};

} // namespace pushtrace
