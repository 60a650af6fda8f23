#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pushtrace/method_codec.hpp"
#include "pushtrace/vmem.hpp"

namespace pushtrace {

inline constexpr std::uint32_t kDefaultRingLen = 1024;

enum class ChannelState : std::uint8_t { Idle, Running, SwitchedOut };
const char* to_string(ChannelState s) noexcept;

// Ring indices are free-running counters; slot = index % ring_len.

struct UserdReplica {
    std::uint32_t gp_put = 0; // freshest producer index
    std::uint32_t gp_get = 0; // consumer index as last written back
};

/// Saved context. RAMIN is modelled only as the container of this block.
struct RamfcReplica {
    std::uint32_t gp_put = 0;
    std::uint32_t gp_get = 0;
    VirtAddr gp_base = 0;
    std::uint32_t gp_ring_len = 0;
};

struct PbdmaRegs {
    std::uint32_t gp_put = 0;
    std::uint32_t gp_get = 0;
    VirtAddr gp_base = 0;

    friend bool operator==(const PbdmaRegs&, const PbdmaRegs&) = default;
};

enum class WritebackMode : std::uint8_t {
    Disabled,        // userd.gp_get is never updated
    Explicit,        // only writeback_gp_get() updates it
    AfterEveryEntry, // updated after each consumed GPFIFO entry
};

struct ChannelSnapshot {
    std::uint32_t channel_id = 0;
    std::uint64_t handle = 0;
    UserdReplica userd;
    RamfcReplica ramfc;
    std::optional<PbdmaRegs> pbdma;
    ChannelState state = ChannelState::Idle;
};

class ChannelTable;

/// Per-channel state: USERD replica, RAMFC replica, live PBDMA registers.
/// All mutation goes through ChannelTable, which holds mutex() while doing so.
class ChannelContext {
public:
    std::uint32_t id() const noexcept { return channel_id_; }
    std::uint64_t handle() const noexcept { return handle_; }
    const UserdReplica& userd() const noexcept { return userd_; }
    const RamfcReplica& ramfc() const noexcept { return ramfc_; }
    const std::optional<PbdmaRegs>& pbdma() const noexcept { return pbdma_; }
    ChannelState state() const noexcept { return state_; }
    WritebackMode writeback_mode() const noexcept { return writeback_; }
    bool doorbell_pending() const noexcept { return doorbell_pending_; }

    std::uint32_t ring_len() const noexcept { return ramfc_.gp_ring_len; }
    VirtAddr entry_va(std::uint32_t index) const noexcept
    {
        return ramfc_.gp_base + std::uint64_t{index % ramfc_.gp_ring_len} * kGpEntrySize;
    }

    ChannelSnapshot snapshot() const;

    /// Serialises producer writes, hook execution and consumption on this
    /// channel. Recursive so that the doorbell path can nest.
    std::recursive_mutex& mutex() const noexcept { return mutex_; }

private:
    friend class ChannelTable;

    std::uint32_t channel_id_ = 0;
    std::uint64_t handle_ = 0;
    UserdReplica userd_;
    RamfcReplica ramfc_;
    std::optional<PbdmaRegs> pbdma_;
    ChannelState state_ = ChannelState::Idle;
    WritebackMode writeback_ = WritebackMode::AfterEveryEntry;
    bool doorbell_pending_ = false;
    mutable std::recursive_mutex mutex_;
};

struct ChannelOptions {
    std::optional<std::uint32_t> channel_id; // default: next free id
    std::optional<std::uint64_t> handle;     // opaque kernel-object handle; default derived from id
    WritebackMode writeback = WritebackMode::AfterEveryEntry;
};

struct ChannelTableConfig {
    VirtAddr doorbell_va = 0x7f0000000000ull;        // one global MMIO doorbell register
    VirtAddr shadow_doorbell_va = 0x7f0000001000ull; // shadow page receiving redirected writes
};

/// Runs inside the doorbell path before the value is forwarded. `ch` is null
/// when the written value names no registered channel.
using DoorbellHook = std::function<void(const ChannelContext* ch, std::uint32_t value)>;
/// PBDMA side, invoked after the doorbell loaded GP_PUT into the live registers.
using ChannelConsumer = std::function<void(ChannelContext& ch)>;

/// Kernel-side channel registry plus the global doorbell.
class ChannelTable {
public:
    explicit ChannelTable(AddressSpace& mem, ChannelTableConfig cfg = {});

    ChannelTable(const ChannelTable&) = delete;
    ChannelTable& operator=(const ChannelTable&) = delete;

    /// The GPFIFO ring [gp_base, gp_base + ring_len*8) must be mapped.
    ChannelContext& create_channel(VirtAddr gp_base, std::uint32_t ring_len = kDefaultRingLen,
                                   ChannelOptions opts = {});
    ChannelContext* lookup(std::uint32_t channel_id) const;
    std::vector<ChannelContext*> channels() const;

    /// Driver side: write the entry at slot gp_put and advance USERD.gp_put.
    void submit_entry(ChannelContext& ch, const GpFifoEntry& entry);

    /// Host store of `value` to the doorbell. Stored to the shadow page, the
    /// hook (if any) runs to completion, then the value is forwarded to the
    /// real register, which triggers the PBDMA load and the consumer.
    void ring_doorbell(std::uint32_t value);

    void context_save(ChannelContext& ch);
    void context_restore(ChannelContext& ch);
    void writeback_gp_get(ChannelContext& ch);
    void set_writeback_mode(ChannelContext& ch, WritebackMode mode);

    /// PBDMA side: advance the live consumer index by one entry.
    void advance_gp_get(ChannelContext& ch);

    void install_hook(DoorbellHook hook); // throws AlreadyInstalled
    void remove_hook();
    bool hook_installed() const;

    void set_consumer(ChannelConsumer consumer) { consumer_ = std::move(consumer); }

    VirtAddr doorbell_va() const noexcept { return cfg_.doorbell_va; }
    VirtAddr shadow_doorbell_va() const noexcept { return cfg_.shadow_doorbell_va; }
    std::uint32_t shadow_value() const { return mem_.read32(cfg_.shadow_doorbell_va); }
    std::uint64_t doorbell_writes() const noexcept { return doorbell_writes_; }

    AddressSpace& memory() noexcept { return mem_; }
    const AddressSpace& memory() const noexcept { return mem_; }

private:
    void on_doorbell_register(std::uint32_t value);
    std::uint32_t consumer_get(const ChannelContext& ch) const;

    AddressSpace& mem_;
    ChannelTableConfig cfg_;
    mutable std::mutex table_mutex_;
    std::map<std::uint32_t, std::unique_ptr<ChannelContext>> channels_;
    std::uint32_t next_id_ = 1;

    mutable std::mutex hook_mutex_;
    DoorbellHook hook_;
    ChannelConsumer consumer_;
    std::atomic<std::uint64_t> doorbell_writes_{0};
};

struct GpfifoSummary {
    std::uint32_t gp_get = 0;
    std::uint32_t gp_put = 0;
    VirtAddr gp_base = 0;
    std::optional<VirtAddr> newest_entry_va;
    std::optional<std::uint64_t> newest_entry_raw;
};

/// The "GPFIFO SUMMARY" block, one line per field, each line '\n'-terminated.
/// The newest-entry lines are omitted when absent.
std::string render_gpfifo_summary(const GpfifoSummary& s);

} // namespace pushtrace
