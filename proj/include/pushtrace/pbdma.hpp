#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pushtrace/channel.hpp"
#include "pushtrace/method_codec.hpp"
#include "pushtrace/vmem.hpp"

namespace pushtrace {

enum class EngineKind : std::uint8_t {
    ComputeInline, // data staged in the pushbuffer, written by the compute engine
    CopyDirect,    // copy engine reading from OFFSET_IN
};
const char* to_string(EngineKind e) noexcept;

inline constexpr double kBytesPerGiB = 1073741824.0;

struct EngineCost {
    double startup_ns = 0;
    double sat_gibps = 0;
    std::uint64_t tick_ns = 1; // completion times are rounded up to this granularity
};

/// Per-engine cost: latency = ceil_tick(startup + bytes / saturation_bw).
///
/// The inline engine's defaults are calibrated so that the minimum latency is
/// one 8 ns tick above an 18 ns startup, i.e. 24 ns, and the curve is
/// stepped. The copy engine is effectively affine (1 ns ticks).
struct CostModel {
    EngineCost inline_engine{18.0, 17.5, 8};
    EngineCost copy_engine{500.0, 22.0, 1};
    std::uint64_t inline_max_bytes = 31 * 1024;

    /// Throws ConfigError unless every field is strictly positive.
    void validate() const;

    const EngineCost& engine(EngineKind e) const noexcept
    {
        return e == EngineKind::ComputeInline ? inline_engine : copy_engine;
    }

    /// Unquantised startup + size/bandwidth, strictly increasing in size.
    double analytic_latency_ns(EngineKind e, std::uint64_t bytes) const noexcept;
    /// Quantised latency used by the simulated clock.
    std::uint64_t latency_ns(EngineKind e, std::uint64_t bytes) const noexcept;
    double bandwidth_gibps(EngineKind e, std::uint64_t bytes) const noexcept;
};

struct TransferDescriptor {
    EngineKind engine = EngineKind::CopyDirect;
    VirtAddr src = 0;                      // CopyDirect only
    std::vector<std::byte> inline_bytes;   // ComputeInline only
    VirtAddr dst = 0;
    std::uint64_t length = 0;
    CopyLaunchDma launch_flags;
};

enum class CommandKind : std::uint8_t { Transfer, SemaphoreRelease, KernelNode };
const char* to_string(CommandKind k) noexcept;

struct CommandRecord {
    CommandKind kind = CommandKind::Transfer;
    std::optional<EngineKind> engine;
    std::uint64_t bytes = 0;
    std::uint64_t start_ns = 0;
    std::uint64_t end_ns = 0;
    VirtAddr src = 0;
    VirtAddr dst = 0;            // transfer destination or semaphore address
    std::uint32_t payload = 0;   // semaphore payload, or node count for KernelNode
    bool timestamped = false;
};

struct ExecutionReport {
    std::uint32_t channel_id = 0;
    std::uint32_t entries_consumed = 0;
    std::uint64_t start_ns = 0;
    std::uint64_t end_ns = 0;
    std::vector<CommandRecord> commands;

    std::uint64_t elapsed_ns() const noexcept { return end_ns - start_ns; }
    std::size_t transfer_count() const;
    /// One JSON object per executed command.
    std::string to_jsonl() const;
};

using CommandObserver = std::function<void(const ChannelContext& ch, const CommandRecord& cmd)>;

/// Simulated PBDMA: fetches GPFIFO entries, reads and decodes pushbuffer
/// segments through the page table, and executes them on the two DMA engines
/// and the semaphore unit against a per-channel nanosecond clock.
///
/// Registers itself as the ChannelTable consumer: every forwarded doorbell
/// consumes the channel synchronously.
class Pbdma {
public:
    Pbdma(AddressSpace& mem, ChannelTable& channels, CostModel cost = {},
          ClassBinding bindings = ClassBinding::defaults(),
          const ClassTable& table = ClassTable::builtin());
    ~Pbdma();

    Pbdma(const Pbdma&) = delete;
    Pbdma& operator=(const Pbdma&) = delete;

    /// Executes every entry in [gp_get, loaded gp_put).
    ExecutionReport consume(ChannelContext& ch);

    /// Returns the completion time. Throws InlineTooLarge / PageFault.
    std::uint64_t exec_transfer(const TransferDescriptor& t, std::uint64_t clock_ns);

    /// Timestamp (u64 at addr+8) is stored before the payload (u32 at addr).
    void exec_semaphore_release(VirtAddr addr, std::uint32_t payload, std::uint64_t clock_ns,
                                bool timestamp = true);

    std::uint64_t clock_ns(std::uint32_t channel_id) const;

    const CostModel& cost_model() const noexcept { return cost_; }
    void set_cost_model(const CostModel& cost);

    void set_observer(CommandObserver obs) { observer_ = std::move(obs); }

    /// Reports of every consume() triggered via the doorbell, per channel.
    std::vector<ExecutionReport> reports(std::uint32_t channel_id) const;
    void clear_reports();

private:
    struct ExecState;

    ExecState& state_for(std::uint32_t channel_id);
    void execute_segment(ChannelContext& ch, ExecState& st, std::span<const std::uint32_t> dwords,
                         ExecutionReport& report);
    void execute_method(ChannelContext& ch, ExecState& st, const DecodedMethod& m, ExecutionReport& report);
    void finish(const ChannelContext& ch, ExecutionReport& report, const CommandRecord& rec);

    AddressSpace& mem_;
    ChannelTable& channels_;
    CostModel cost_;
    ClassBinding bindings_;
    const ClassTable& table_;
    CommandObserver observer_;

    // Method offsets resolved from the class table.
    struct Offsets {
        std::uint32_t copy_launch, copy_in_upper, copy_in_lower, copy_out_upper, copy_out_lower, copy_line_length;
        std::uint32_t sem_addr_hi, sem_addr_lo, sem_payload, sem_execute;
        std::uint32_t cmp_line_length, cmp_offset_out_upper, cmp_offset_out, cmp_launch, cmp_inline_data;
        std::uint32_t node_launch, node_batch_first, node_batch_count, node_cost;
    } off_{};

    mutable std::mutex state_mutex_;
    std::unordered_map<std::uint32_t, std::unique_ptr<ExecState>> states_;
    std::unordered_map<std::uint32_t, std::vector<ExecutionReport>> reports_;
};

} // namespace pushtrace
