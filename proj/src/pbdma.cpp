#include "pushtrace/pbdma.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pushtrace/error.hpp"

namespace pushtrace {

const char* to_string(EngineKind e) noexcept
{
    switch (e) {
    case EngineKind::ComputeInline: return "ComputeInline";
    case EngineKind::CopyDirect: return "CopyDirect";
    }
    return "?";
}

const char* to_string(CommandKind k) noexcept
{
    switch (k) {
    case CommandKind::Transfer: return "transfer";
    case CommandKind::SemaphoreRelease: return "semaphore_release";
    case CommandKind::KernelNode: return "kernel_node";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// CostModel

void CostModel::validate() const
{
    for (const EngineCost* e : {&inline_engine, &copy_engine}) {
        if (!(e->startup_ns > 0) || !(e->sat_gibps > 0) || e->tick_ns == 0)
            throw Error(ErrorCode::Config, "cost model fields must be strictly positive");
    }
    if (inline_max_bytes == 0)
        throw Error(ErrorCode::Config, "inline_max_bytes must be positive");
}

double CostModel::analytic_latency_ns(EngineKind e, std::uint64_t bytes) const noexcept
{
    const EngineCost& c = engine(e);
    double bytes_per_ns = c.sat_gibps * kBytesPerGiB / 1e9;
    return c.startup_ns + static_cast<double>(bytes) / bytes_per_ns;
}

std::uint64_t CostModel::latency_ns(EngineKind e, std::uint64_t bytes) const noexcept
{
    const EngineCost& c = engine(e);
    double ticks = std::ceil(analytic_latency_ns(e, bytes) / static_cast<double>(c.tick_ns) - 1e-9);
    return static_cast<std::uint64_t>(ticks) * c.tick_ns;
}

double CostModel::bandwidth_gibps(EngineKind e, std::uint64_t bytes) const noexcept
{
    return static_cast<double>(bytes) / static_cast<double>(latency_ns(e, bytes)) * 1e9 / kBytesPerGiB;
}

// ---------------------------------------------------------------------------
// ExecutionReport

std::size_t ExecutionReport::transfer_count() const
{
    std::size_t n = 0;
    for (const auto& c : commands)
        n += c.kind == CommandKind::Transfer;
    return n;
}

std::string ExecutionReport::to_jsonl() const
{
    std::string out;
    for (const auto& c : commands) {
        nlohmann::ordered_json j;
        j["kind"] = to_string(c.kind);
        j["engine"] = c.engine ? nlohmann::ordered_json(to_string(*c.engine)) : nlohmann::ordered_json(nullptr);
        j["bytes"] = c.bytes;
        j["start_ns"] = c.start_ns;
        j["end_ns"] = c.end_ns;
        j["channel_id"] = fmt::format("0x{:x}", channel_id);
        if (c.kind == CommandKind::Transfer) {
            j["src"] = fmt::format("0x{:x}", c.src);
            j["dst"] = fmt::format("0x{:x}", c.dst);
        } else if (c.kind == CommandKind::SemaphoreRelease) {
            j["addr"] = fmt::format("0x{:x}", c.dst);
            j["payload"] = fmt::format("0x{:x}", c.payload);
            j["timestamp"] = c.timestamped;
        } else {
            j["nodes"] = c.payload;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pbdma

namespace {
constexpr std::size_t kRegsPerSubch = kMaxMethodAddrDw + 1;
}

struct Pbdma::ExecState {
    std::uint64_t clock_ns = 0;
    std::vector<std::uint32_t> regs = std::vector<std::uint32_t>(8 * kRegsPerSubch);
    std::vector<std::uint8_t> written = std::vector<std::uint8_t>(8 * kRegsPerSubch);
    std::uint64_t node_cost_ns = 0;

    struct PendingInline {
        VirtAddr dst = 0;
        std::uint64_t length = 0;
        std::vector<std::byte> bytes;
    };
    std::optional<PendingInline> pending_inline;

    void set(std::uint8_t subch, std::uint32_t byte_offset, std::uint32_t v)
    {
        std::size_t i = subch * kRegsPerSubch + byte_offset / 4;
        regs[i] = v;
        written[i] = 1;
    }
    std::optional<std::uint32_t> get(std::uint8_t subch, std::uint32_t byte_offset) const
    {
        std::size_t i = subch * kRegsPerSubch + byte_offset / 4;
        if (!written[i])
            return std::nullopt;
        return regs[i];
    }
};

Pbdma::Pbdma(AddressSpace& mem, ChannelTable& channels, CostModel cost, ClassBinding bindings,
             const ClassTable& table)
    : mem_(mem), channels_(channels), cost_(cost), bindings_(bindings), table_(table)
{
    cost_.validate();
    auto copy = [&](std::string_view n) { return table_.offset_of(kAmpereDmaCopyB, n); };
    auto cmp = [&](std::string_view n) { return table_.offset_of(kAmpereComputeB, n); };
    off_.copy_launch = copy("LAUNCH_DMA");
    off_.copy_in_upper = copy("OFFSET_IN_UPPER");
    off_.copy_in_lower = copy("OFFSET_IN_LOWER");
    off_.copy_out_upper = copy("OFFSET_OUT_UPPER");
    off_.copy_out_lower = copy("OFFSET_OUT_LOWER");
    off_.copy_line_length = copy("LINE_LENGTH_IN");
    off_.sem_addr_hi = copy("SEM_ADDR_HI");
    off_.sem_addr_lo = copy("SEM_ADDR_LO");
    off_.sem_payload = copy("SEM_PAYLOAD");
    off_.sem_execute = copy("SEM_EXECUTE");
    off_.cmp_line_length = cmp("LINE_LENGTH_IN");
    off_.cmp_offset_out_upper = cmp("OFFSET_OUT_UPPER");
    off_.cmp_offset_out = cmp("OFFSET_OUT");
    off_.cmp_launch = cmp("LAUNCH_DMA");
    off_.cmp_inline_data = cmp("LOAD_INLINE_DATA");
    off_.node_launch = cmp("NODE_LAUNCH");
    off_.node_batch_first = cmp("NODE_BATCH_FIRST");
    off_.node_batch_count = cmp("NODE_BATCH_COUNT");
    off_.node_cost = cmp("NODE_COST_NS");

    channels_.set_consumer([this](ChannelContext& ch) {
        ExecutionReport r = consume(ch);
        std::lock_guard lock(state_mutex_);
        reports_[ch.id()].push_back(std::move(r));
    });
}

Pbdma::~Pbdma()
{
    channels_.set_consumer(nullptr);
}

void Pbdma::set_cost_model(const CostModel& cost)
{
    cost.validate();
    cost_ = cost;
}

Pbdma::ExecState& Pbdma::state_for(std::uint32_t channel_id)
{
    std::lock_guard lock(state_mutex_);
    auto& p = states_[channel_id];
    if (!p)
        p = std::make_unique<ExecState>();
    return *p;
}

std::uint64_t Pbdma::clock_ns(std::uint32_t channel_id) const
{
    std::lock_guard lock(state_mutex_);
    auto it = states_.find(channel_id);
    return it == states_.end() ? 0 : it->second->clock_ns;
}

std::vector<ExecutionReport> Pbdma::reports(std::uint32_t channel_id) const
{
    std::lock_guard lock(state_mutex_);
    auto it = reports_.find(channel_id);
    return it == reports_.end() ? std::vector<ExecutionReport>{} : it->second;
}

void Pbdma::clear_reports()
{
    std::lock_guard lock(state_mutex_);
    reports_.clear();
}

std::uint64_t Pbdma::exec_transfer(const TransferDescriptor& t, std::uint64_t clock_ns)
{
    if (t.engine == EngineKind::ComputeInline) {
        if (t.length > cost_.inline_max_bytes)
            throw Error(ErrorCode::InlineTooLarge,
                        fmt::format("inline transfer of {} bytes exceeds the {} byte engine limit", t.length,
                                    cost_.inline_max_bytes));
        if (t.inline_bytes.size() < t.length)
            throw Error(ErrorCode::MalformedDescriptor, "inline payload shorter than the transfer length");
    }
    if (t.length > 0) {
        if (!mem_.range_mapped(t.dst, t.length))
            throw Error(ErrorCode::PageFault, fmt::format("transfer destination 0x{:x} +0x{:x} not mapped", t.dst, t.length));
        if (t.engine == EngineKind::CopyDirect) {
            if (!mem_.range_mapped(t.src, t.length))
                throw Error(ErrorCode::PageFault, fmt::format("transfer source 0x{:x} +0x{:x} not mapped", t.src, t.length));
            mem_.copy(t.dst, t.src, t.length);
        } else {
            mem_.gpu_write(t.dst, std::span{t.inline_bytes}.first(t.length));
        }
    }
    return clock_ns + cost_.latency_ns(t.engine, t.length);
}

void Pbdma::exec_semaphore_release(VirtAddr addr, std::uint32_t payload, std::uint64_t clock_ns, bool timestamp)
{
    if (!mem_.range_mapped(addr, 16))
        throw Error(ErrorCode::PageFault, fmt::format("semaphore slot 0x{:x} not mapped", addr));
    if (timestamp) {
        std::uint64_t ts = clock_ns;
        mem_.gpu_write(addr + 8, std::as_bytes(std::span{&ts, 1}));
    }
    mem_.gpu_write(addr, std::as_bytes(std::span{&payload, 1}));
}

void Pbdma::finish(const ChannelContext& ch, ExecutionReport& report, const CommandRecord& rec)
{
    report.commands.push_back(rec);
    if (observer_)
        observer_(ch, rec);
}

ExecutionReport Pbdma::consume(ChannelContext& ch)
{
    std::lock_guard lock(ch.mutex());
    ExecState& st = state_for(ch.id());
    ExecutionReport report;
    report.channel_id = ch.id();
    report.start_ns = st.clock_ns;

    if (!ch.pbdma())
        throw Error(ErrorCode::BadState, fmt::format("channel 0x{:x} has no live PBDMA context", ch.id()));

    while (ch.pbdma()->gp_get != ch.pbdma()->gp_put) {
        std::uint32_t idx = ch.pbdma()->gp_get;
        VirtAddr entry_va = ch.pbdma()->gp_base + std::uint64_t{idx % ch.ring_len()} * kGpEntrySize;
        std::uint64_t raw = 0;
        mem_.gpu_read(entry_va, std::as_writable_bytes(std::span{&raw, 1}));
        GpFifoEntry entry = decode_gpfifo_entry(raw);
        std::vector<std::uint32_t> dwords = mem_.read_dwords(entry.pb_va, entry.length_dw);
        execute_segment(ch, st, dwords, report);
        channels_.advance_gp_get(ch);
        ++report.entries_consumed;
    }
    report.end_ns = st.clock_ns;
    return report;
}

void Pbdma::execute_segment(ChannelContext& ch, ExecState& st, std::span<const std::uint32_t> dwords,
                            ExecutionReport& report)
{
    for (const DecodedMethod& m : decode_stream(dwords, bindings_, table_))
        execute_method(ch, st, m, report);
    if (st.pending_inline)
        throw Error(ErrorCode::MalformedDescriptor,
                    fmt::format("segment ended with {} of {} inline bytes", st.pending_inline->bytes.size(),
                                st.pending_inline->length));
}

void Pbdma::execute_method(ChannelContext& ch, ExecState& st, const DecodedMethod& m, ExecutionReport& report)
{
    if (!m.class_id)
        return;
    const std::uint32_t off = m.byte_offset;

    auto require = [&](std::uint32_t reg_off, const char* what) {
        auto v = st.get(m.subchannel, reg_off);
        if (!v)
            throw Error(ErrorCode::MalformedDescriptor, fmt::format("LAUNCH_DMA without {}", what));
        return *v;
    };

    auto release = [&](bool timestamp) {
        VirtAddr addr = (std::uint64_t{require(off_.sem_addr_hi, "SEM_ADDR_HI")} << 32) |
                        require(off_.sem_addr_lo, "SEM_ADDR_LO");
        std::uint32_t payload = require(off_.sem_payload, "SEM_PAYLOAD");
        exec_semaphore_release(addr, payload, st.clock_ns, timestamp);
        CommandRecord rec;
        rec.kind = CommandKind::SemaphoreRelease;
        rec.start_ns = rec.end_ns = st.clock_ns;
        rec.dst = addr;
        rec.payload = payload;
        rec.timestamped = timestamp;
        finish(ch, report, rec);
    };

    auto run_transfer = [&](TransferDescriptor&& t) {
        std::uint64_t start = st.clock_ns;
        st.clock_ns = exec_transfer(t, start);
        CommandRecord rec;
        rec.kind = CommandKind::Transfer;
        rec.engine = t.engine;
        rec.bytes = t.length;
        rec.start_ns = start;
        rec.end_ns = st.clock_ns;
        rec.src = t.src;
        rec.dst = t.dst;
        finish(ch, report, rec);
    };

    if (*m.class_id == kAmpereDmaCopyB) {
        if (off == off_.copy_launch) {
            CopyLaunchDma flags = CopyLaunchDma::decode(m.data);
            if (flags.data_transfer_type != 0) {
                TransferDescriptor t;
                t.engine = EngineKind::CopyDirect;
                t.src = (std::uint64_t{require(off_.copy_in_upper, "OFFSET_IN_UPPER")} << 32) |
                        require(off_.copy_in_lower, "OFFSET_IN_LOWER");
                t.dst = (std::uint64_t{require(off_.copy_out_upper, "OFFSET_OUT_UPPER")} << 32) |
                        require(off_.copy_out_lower, "OFFSET_OUT_LOWER");
                t.length = require(off_.copy_line_length, "LINE_LENGTH_IN");
                t.launch_flags = flags;
                run_transfer(std::move(t));
            }
            if (flags.semaphore_type == 1 || flags.semaphore_type == 2)
                release(flags.semaphore_type == 2);
        } else if (off == off_.sem_execute) {
            if ((m.data & 0x3) == 1)
                release(((m.data >> 3) & 1) != 0);
        } else {
            st.set(m.subchannel, off, m.data);
        }
        return;
    }

    if (*m.class_id == kAmpereComputeB) {
        if (off == off_.cmp_launch) {
            if (st.pending_inline)
                throw Error(ErrorCode::MalformedDescriptor, "LAUNCH_DMA while an inline transfer is still loading");
            std::uint64_t len = require(off_.cmp_line_length, "LINE_LENGTH_IN");
            if (len > cost_.inline_max_bytes)
                throw Error(ErrorCode::InlineTooLarge,
                            fmt::format("inline transfer of {} bytes exceeds the {} byte engine limit", len,
                                        cost_.inline_max_bytes));
            VirtAddr dst = (std::uint64_t{require(off_.cmp_offset_out_upper, "OFFSET_OUT_UPPER")} << 32) |
                           require(off_.cmp_offset_out, "OFFSET_OUT");
            if (len == 0)
                return;
            st.pending_inline = ExecState::PendingInline{dst, len, {}};
            st.pending_inline->bytes.reserve((len + 3) / 4 * 4);
        } else if (off == off_.cmp_inline_data) {
            if (!st.pending_inline)
                throw Error(ErrorCode::MalformedDescriptor, "LOAD_INLINE_DATA without a pending LAUNCH_DMA");
            auto& p = *st.pending_inline;
            auto word = std::as_bytes(std::span{&m.data, 1});
            p.bytes.insert(p.bytes.end(), word.begin(), word.end());
            if (p.bytes.size() >= p.length) {
                TransferDescriptor t;
                t.engine = EngineKind::ComputeInline;
                t.dst = p.dst;
                t.length = p.length;
                t.inline_bytes = std::move(p.bytes);
                st.pending_inline.reset();
                run_transfer(std::move(t));
            }
        } else if (off == off_.node_cost) {
            st.node_cost_ns = m.data;
        } else if (off == off_.node_launch || off == off_.node_batch_count) {
            std::uint32_t nodes = off == off_.node_launch ? (m.data & 1) : m.data;
            if (nodes == 0)
                return;
            CommandRecord rec;
            rec.kind = CommandKind::KernelNode;
            rec.start_ns = st.clock_ns;
            st.clock_ns += st.node_cost_ns * nodes;
            rec.end_ns = st.clock_ns;
            rec.payload = nodes;
            finish(ch, report, rec);
        } else {
            st.set(m.subchannel, off, m.data);
        }
    }
}

} // namespace pushtrace
