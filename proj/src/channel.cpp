#include "pushtrace/channel.hpp"

#include <fmt/format.h>

#include "pushtrace/error.hpp"

namespace pushtrace {

const char* to_string(ChannelState s) noexcept
{
    switch (s) {
    case ChannelState::Idle: return "Idle";
    case ChannelState::Running: return "Running";
    case ChannelState::SwitchedOut: return "SwitchedOut";
    }
    return "?";
}

ChannelSnapshot ChannelContext::snapshot() const
{
    std::lock_guard lock(mutex_);
    return ChannelSnapshot{channel_id_, handle_, userd_, ramfc_, pbdma_, state_};
}

ChannelTable::ChannelTable(AddressSpace& mem, ChannelTableConfig cfg)
    : mem_(mem), cfg_(cfg)
{
    AllocRecord reg = mem_.map(cfg_.doorbell_va, kPageSize, DomainKind::Mmio, AllocTag::Unknown);
    mem_.map(cfg_.shadow_doorbell_va, kPageSize, DomainKind::Mmio, AllocTag::Unknown);
    mem_.set_mmio_register(reg.pa_base, [this](PhysAddr, std::uint32_t value) { on_doorbell_register(value); });
}

ChannelContext& ChannelTable::create_channel(VirtAddr gp_base, std::uint32_t ring_len, ChannelOptions opts)
{
    if (ring_len == 0)
        throw Error(ErrorCode::BadState, "ring length must be positive");
    if (!mem_.range_mapped(gp_base, std::uint64_t{ring_len} * kGpEntrySize))
        throw Error(ErrorCode::VaUnmapped, fmt::format("GPFIFO ring at 0x{:x} (x{}) is not mapped", gp_base, ring_len));

    std::lock_guard lock(table_mutex_);
    std::uint32_t id = 0;
    if (opts.channel_id) {
        id = *opts.channel_id;
        if (channels_.count(id))
            throw Error(ErrorCode::BadState, fmt::format("channel id 0x{:x} already registered", id));
    } else {
        while (channels_.count(next_id_))
            ++next_id_;
        id = next_id_++;
    }

    auto ch = std::make_unique<ChannelContext>();
    ch->channel_id_ = id;
    ch->handle_ = opts.handle.value_or(0xffff800000000000ull | (std::uint64_t{id} << 12));
    ch->ramfc_.gp_base = gp_base;
    ch->ramfc_.gp_ring_len = ring_len;
    ch->writeback_ = opts.writeback;
    auto& ref = *ch;
    channels_.emplace(id, std::move(ch));
    return ref;
}

ChannelContext* ChannelTable::lookup(std::uint32_t channel_id) const
{
    std::lock_guard lock(table_mutex_);
    auto it = channels_.find(channel_id);
    return it == channels_.end() ? nullptr : it->second.get();
}

std::vector<ChannelContext*> ChannelTable::channels() const
{
    std::lock_guard lock(table_mutex_);
    std::vector<ChannelContext*> out;
    for (const auto& [id, ch] : channels_)
        out.push_back(ch.get());
    return out;
}

std::uint32_t ChannelTable::consumer_get(const ChannelContext& ch) const
{
    return ch.pbdma_ ? ch.pbdma_->gp_get : ch.ramfc_.gp_get;
}

void ChannelTable::submit_entry(ChannelContext& ch, const GpFifoEntry& entry)
{
    std::lock_guard lock(ch.mutex_);
    std::uint32_t in_flight = ch.userd_.gp_put - consumer_get(ch);
    if (in_flight >= ch.ramfc_.gp_ring_len)
        throw Error(ErrorCode::RingFull,
                    fmt::format("channel 0x{:x}: {} entries pending in a ring of {}", ch.channel_id_, in_flight,
                                ch.ramfc_.gp_ring_len));
    std::uint64_t raw = encode_gpfifo_entry(entry.pb_va, entry.length_dw, entry.flags);
    mem_.write64(ch.entry_va(ch.userd_.gp_put), raw);
    ++ch.userd_.gp_put;
}

void ChannelTable::ring_doorbell(std::uint32_t value)
{
    ++doorbell_writes_;
    mem_.write32(cfg_.shadow_doorbell_va, value);

    ChannelContext* ch = lookup(value);
    std::unique_lock<std::recursive_mutex> ch_lock;
    if (ch)
        ch_lock = std::unique_lock(ch->mutex_);

    DoorbellHook hook;
    {
        std::lock_guard lock(hook_mutex_);
        hook = hook_;
    }
    if (hook)
        hook(ch, value);

    mem_.write32(cfg_.doorbell_va, value);
}

void ChannelTable::on_doorbell_register(std::uint32_t value)
{
    ChannelContext* ch = lookup(value);
    if (!ch)
        throw Error(ErrorCode::NoSuchChannel, fmt::format("doorbell value 0x{:x} names no channel", value));
    std::lock_guard lock(ch->mutex_);
    switch (ch->state_) {
    case ChannelState::SwitchedOut:
        ch->doorbell_pending_ = true;
        return;
    case ChannelState::Idle:
        ch->pbdma_ = PbdmaRegs{ch->userd_.gp_put, ch->ramfc_.gp_get, ch->ramfc_.gp_base};
        ch->state_ = ChannelState::Running;
        break;
    case ChannelState::Running:
        ch->pbdma_->gp_put = ch->userd_.gp_put;
        break;
    }
    ch->doorbell_pending_ = false;
    if (consumer_)
        consumer_(*ch);
}

void ChannelTable::context_save(ChannelContext& ch)
{
    std::lock_guard lock(ch.mutex_);
    if (ch.state_ != ChannelState::Running)
        throw Error(ErrorCode::BadState,
                    fmt::format("context_save on channel 0x{:x} in state {}", ch.channel_id_, to_string(ch.state_)));
    ch.ramfc_.gp_put = ch.pbdma_->gp_put;
    ch.ramfc_.gp_get = ch.pbdma_->gp_get;
    ch.ramfc_.gp_base = ch.pbdma_->gp_base;
    ch.pbdma_.reset();
    ch.state_ = ChannelState::SwitchedOut;
}

void ChannelTable::context_restore(ChannelContext& ch)
{
    std::lock_guard lock(ch.mutex_);
    if (ch.state_ != ChannelState::SwitchedOut)
        throw Error(ErrorCode::BadState,
                    fmt::format("context_restore on channel 0x{:x} in state {}", ch.channel_id_, to_string(ch.state_)));
    ch.pbdma_ = PbdmaRegs{ch.ramfc_.gp_put, ch.ramfc_.gp_get, ch.ramfc_.gp_base};
    ch.state_ = ChannelState::Running;
}

void ChannelTable::writeback_gp_get(ChannelContext& ch)
{
    std::lock_guard lock(ch.mutex_);
    if (ch.state_ != ChannelState::Running)
        throw Error(ErrorCode::BadState,
                    fmt::format("writeback on channel 0x{:x} in state {}", ch.channel_id_, to_string(ch.state_)));
    if (ch.writeback_ == WritebackMode::Disabled)
        return;
    ch.userd_.gp_get = ch.pbdma_->gp_get;
}

void ChannelTable::set_writeback_mode(ChannelContext& ch, WritebackMode mode)
{
    std::lock_guard lock(ch.mutex_);
    ch.writeback_ = mode;
}

void ChannelTable::advance_gp_get(ChannelContext& ch)
{
    std::lock_guard lock(ch.mutex_);
    if (ch.state_ != ChannelState::Running)
        throw Error(ErrorCode::BadState, fmt::format("channel 0x{:x} is not running", ch.channel_id_));
    if (ch.pbdma_->gp_get == ch.pbdma_->gp_put)
        throw Error(ErrorCode::BadState, fmt::format("channel 0x{:x}: nothing left to consume", ch.channel_id_));
    ++ch.pbdma_->gp_get;
    if (ch.writeback_ == WritebackMode::AfterEveryEntry)
        ch.userd_.gp_get = ch.pbdma_->gp_get;
}

void ChannelTable::install_hook(DoorbellHook hook)
{
    std::lock_guard lock(hook_mutex_);
    if (hook_)
        throw Error(ErrorCode::AlreadyInstalled, "a doorbell hook is already installed");
    hook_ = std::move(hook);
}

void ChannelTable::remove_hook()
{
    std::lock_guard lock(hook_mutex_);
    hook_ = nullptr;
}

bool ChannelTable::hook_installed() const
{
    std::lock_guard lock(hook_mutex_);
    return static_cast<bool>(hook_);
}

std::string render_gpfifo_summary(const GpfifoSummary& s)
{
    std::string out = "=====   GPFIFO SUMMARY   =====\n";
    out += fmt::format("GP_GET      (index)   : {}\n", s.gp_get);
    out += fmt::format("GP_PUT      (index)   : {}\n", s.gp_put);
    out += fmt::format("GP_base     (VA)      : 0x{:x}\n", s.gp_base);
    if (s.newest_entry_va)
        out += fmt::format("GP_NEWENTRY (VA)      : 0x{:x}\n", *s.newest_entry_va);
    if (s.newest_entry_raw)
        out += fmt::format("GP_NEWENTRY           : 0x{:016x}\n", *s.newest_entry_raw);
    out += "===== END GPFIFO SUMMARY =====\n";
    return out;
}

} // namespace pushtrace
