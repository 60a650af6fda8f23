#include "pushtrace/driver.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include <fmt/format.h>

#include "pushtrace/error.hpp"

namespace pushtrace {

const char* to_string(Direction d) noexcept
{
    return d == Direction::H2D ? "H2D" : "D2H";
}

const char* to_string(GraphStrategyKind k) noexcept
{
    return k == GraphStrategyKind::Legacy118 ? "Legacy118" : "Modern130";
}

void DriverConfig::validate() const
{
    if (inline_switch_bytes == 0)
        throw Error(ErrorCode::Config, "inline_switch_bytes must be positive");
    if (max_segment_dwords == 0 || max_segment_dwords > kMaxGpLengthDw)
        throw Error(ErrorCode::Config, fmt::format("max_segment_dwords must be in [1, {}]", kMaxGpLengthDw));
    if (pushbuffer_bytes < kPageSize || pushbuffer_bytes % kPageSize != 0)
        throw Error(ErrorCode::Config, "pushbuffer_bytes must be a positive multiple of the page size");
    if (ring_len < 2)
        throw Error(ErrorCode::Config, "ring_len must be at least 2");
    if (semaphore_slots == 0)
        throw Error(ErrorCode::Config, "semaphore_slots must be positive");
    if (driver_va_base % kPageSize != 0)
        throw Error(ErrorCode::Config, "driver_va_base must be page aligned");
}

EngineKind memcpy_path(std::uint64_t len, Direction dir, std::uint64_t inline_switch_bytes) noexcept
{
    return dir == Direction::H2D && len < inline_switch_bytes ? EngineKind::ComputeInline : EngineKind::CopyDirect;
}

namespace {

std::uint64_t page_round(std::uint64_t n)
{
    return (n + kPageSize - 1) / kPageSize * kPageSize;
}

struct Methods {
    std::uint32_t set_object, sem_addr_hi, sem_execute, copy_launch, copy_in_upper, copy_line_length;
    std::uint32_t cmp_set_object, cmp_line_length, cmp_offset_out_upper, cmp_launch, cmp_inline_data;
    std::uint32_t node_launch, node_batch_first, node_cost, node_metadata;

    static const Methods& get()
    {
        static const Methods m = [] {
            const ClassTable& t = ClassTable::builtin();
            auto c = [&](std::string_view n) { return t.offset_of(kAmpereDmaCopyB, n); };
            auto k = [&](std::string_view n) { return t.offset_of(kAmpereComputeB, n); };
            return Methods{c("SET_OBJECT"), c("SEM_ADDR_HI"), c("SEM_EXECUTE"), c("LAUNCH_DMA"),
                           c("OFFSET_IN_UPPER"), c("LINE_LENGTH_IN"), k("SET_OBJECT"), k("LINE_LENGTH_IN"),
                           k("OFFSET_OUT_UPPER"), k("LAUNCH_DMA"), k("LOAD_INLINE_DATA"), k("NODE_LAUNCH"),
                           k("NODE_BATCH_FIRST"), k("NODE_COST_NS"), k("NODE_METADATA")};
        }();
        return m;
    }
};

constexpr std::uint32_t kSemExecuteReleaseTs = 0x9; // OPERATION=RELEASE, TIMESTAMP=TRUE
constexpr std::uint32_t kCopyLaunchNonPipelinedPitch = 0x182;
constexpr std::uint32_t kInlineLaunchPitch = 0x1;
constexpr std::uint64_t kMaxCopyLine = 1ull << 31;

std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }
std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v); }

// Opaque NODE_METADATA words filling exactly `bytes`.
void metadata_filler(PushbufferBuilder& pb, std::uint32_t bytes)
{
    std::uint32_t words = bytes / 4;
    const auto addr = static_cast<std::uint16_t>(Methods::get().node_metadata / 4);
    while (words > 0) {
        std::uint32_t n = std::min(words, kMaxMethodCount + 1);
        std::uint32_t hdr = encode_header(
            MethodHeader{MethodOp::NonInc, static_cast<std::uint16_t>(n - 1), kComputeSubchannel, addr});
        pb.append(std::span{&hdr, 1});
        std::vector<std::uint32_t> pad(n - 1, 0);
        pb.append(pad);
        words -= n;
    }
}

} // namespace

// ---------------------------------------------------------------------------
// LaunchStrategy

LaunchStrategy LaunchStrategy::legacy118()
{
    return LaunchStrategy{GraphStrategyKind::Legacy118, 148, 20, 20, 8, 220.0, 378.0};
}

LaunchStrategy LaunchStrategy::modern130()
{
    return LaunchStrategy{GraphStrategyKind::Modern130, 280, 0, 60, 64, 440.0, 1163.0};
}

LaunchStrategy LaunchStrategy::defaults(GraphStrategyKind kind)
{
    return kind == GraphStrategyKind::Legacy118 ? legacy118() : modern130();
}

void LaunchStrategy::validate() const
{
    auto fail = [&](const std::string& what) {
        throw Error(ErrorCode::Config, fmt::format("{} strategy: {}", to_string(kind), what));
    };
    if (base_bytes % 4 || per_node_bytes % 4 || per_chunk_overhead_bytes % 4)
        fail("byte parameters must be multiples of 4");
    if (base_bytes < 8)
        fail("base_bytes must be at least 8");
    if (chunk_nodes == 0)
        fail("chunk_nodes must be positive");
    if (per_node_bytes == 0 && per_chunk_overhead_bytes < 12)
        fail("per_chunk_overhead_bytes must be at least 12 when per_node_bytes is 0");
    if (per_node_bytes != 0 && per_node_bytes < 8)
        fail("per_node_bytes must be 0 or at least 8");
    if (!(effective_write_bw_mibps > 0))
        fail("effective_write_bw_mibps must be positive");
    if (!(base_launch_ns >= 0))
        fail("base_launch_ns must be non-negative");
}

std::uint32_t LaunchStrategy::chunks(std::uint32_t chain_length) const noexcept
{
    return (chain_length + chunk_nodes - 1) / chunk_nodes;
}

std::uint64_t LaunchStrategy::emitted_bytes(std::uint32_t chain_length) const noexcept
{
    return base_bytes + std::uint64_t{chunks(chain_length)} *
                            (std::uint64_t{chunk_nodes} * per_node_bytes + per_chunk_overhead_bytes);
}

std::uint32_t LaunchStrategy::doorbells(std::uint32_t chain_length) const noexcept
{
    return kind == GraphStrategyKind::Legacy118 ? chunks(chain_length) : 1;
}

double LaunchStrategy::launch_time_ns(std::uint64_t emitted) const noexcept
{
    double bytes_per_ns = effective_write_bw_mibps * 1048576.0 / 1e9;
    return base_launch_ns + static_cast<double>(emitted) / bytes_per_ns;
}

std::uint64_t GraphExec::emitted_bytes() const noexcept
{
    std::uint64_t n = 0;
    for (const auto& s : segments)
        n += s.size() * 4;
    return n;
}

GraphExec graph_upload(const GraphSpec& g, const LaunchStrategy& s)
{
    s.validate();
    if (g.chain_length == 0)
        throw Error(ErrorCode::Config, "graph chain_length must be at least 1");
    const Methods& m = Methods::get();
    const std::uint8_t sc = kComputeSubchannel;

    GraphExec exec{g, s, {}};
    PushbufferBuilder pb;
    pb.inc(sc, m.node_cost, {g.node_cost_ns});
    metadata_filler(pb, s.base_bytes - 8);

    const std::uint32_t n_chunks = s.chunks(g.chain_length);
    for (std::uint32_t c = 0; c < n_chunks; ++c) {
        std::uint32_t first = c * s.chunk_nodes;
        std::uint32_t in_chunk = std::min(s.chunk_nodes, g.chain_length - first);
        if (s.per_node_bytes == 0) {
            pb.inc(sc, m.node_batch_first, {first, in_chunk});
            metadata_filler(pb, s.per_chunk_overhead_bytes - 12);
        } else {
            if (s.per_chunk_overhead_bytes >= 8) {
                pb.inc(sc, m.node_batch_first, {first});
                metadata_filler(pb, s.per_chunk_overhead_bytes - 8);
            } else {
                metadata_filler(pb, s.per_chunk_overhead_bytes);
            }
            // Every slot of the chunk is written; unused ones carry an empty launch.
            const std::uint32_t words = s.per_node_bytes / 4;
            const std::uint32_t k = std::min<std::uint32_t>(words - 1, 4);
            for (std::uint32_t slot = 0; slot < s.chunk_nodes; ++slot) {
                std::uint32_t i = first + slot;
                bool live = slot < in_chunk;
                std::array<std::uint32_t, 4> node{0, live ? i << 8 : 0, live ? (i == 0 ? 0xffffffffu : i - 1) : 0,
                                                  live ? 1u : 0u};
                metadata_filler(pb, (words - 1 - k) * 4);
                pb.inc(sc, m.node_launch - 4 * (k - 1), std::span{node}.last(k));
            }
        }
        if (s.kind == GraphStrategyKind::Legacy118)
            exec.segments.push_back(pb.take());
    }
    if (s.kind == GraphStrategyKind::Modern130)
        exec.segments.push_back(pb.take());
    return exec;
}

// ---------------------------------------------------------------------------
// Driver

Driver::Driver(Simulator& sim, DriverConfig cfg)
    : sim_(sim), cfg_(cfg), va_cursor_(cfg.driver_va_base)
{
    cfg_.validate();
}

VirtAddr Driver::reserve_va(std::uint64_t len)
{
    VirtAddr va = va_cursor_;
    va_cursor_ += page_round(len) + kPageSize; // guard page between objects
    return va;
}

Stream& Driver::create_stream(StreamLayout layout)
{
    AddressSpace& mem = sim_.mem;
    const std::uint64_t ring_bytes = page_round(std::uint64_t{cfg_.ring_len} * kGpEntrySize);
    const std::uint64_t sem_bytes = page_round(std::uint64_t{cfg_.semaphore_slots} * 16);

    VirtAddr gp = layout.gp_base ? *layout.gp_base : reserve_va(ring_bytes);
    VirtAddr pbva = layout.pb_base ? *layout.pb_base : reserve_va(cfg_.pushbuffer_bytes);
    VirtAddr sem = layout.sem_base ? *layout.sem_base : reserve_va(sem_bytes);
    mem.map(gp, ring_bytes, DomainKind::DeviceVram, AllocTag::Gpfifo);
    mem.map(pbva, cfg_.pushbuffer_bytes, DomainKind::HostRam, AllocTag::Pushbuffer);
    mem.map(sem, sem_bytes, DomainKind::HostRam, AllocTag::SemaphoreBuf);

    auto s = std::make_unique<Stream>();
    s->channel_ = &sim_.channels.create_channel(gp, cfg_.ring_len, layout.channel);
    s->pb_base_ = s->pb_cursor_ = pbva;
    s->sem_base_ = sem;
    Stream& ref = *s;
    streams_.push_back(std::move(s));

    const Methods& m = Methods::get();
    PushbufferBuilder pb;
    pb.inc(kCopySubchannel, m.set_object, {kAmpereDmaCopyB});
    pb.inc(kComputeSubchannel, m.cmp_set_object, {kAmpereComputeB});
    pb.inc(kCopySubchannel, m.sem_addr_hi, {hi32(sem), lo32(sem), 0});
    submit_segment(ref, pb.words());
    return ref;
}

VirtAddr Driver::reserve_pb(Stream& s, std::size_t dwords)
{
    const std::uint64_t bytes = std::uint64_t{dwords} * 4;
    if (dwords > cfg_.max_segment_dwords || bytes > cfg_.pushbuffer_bytes)
        throw Error(ErrorCode::SegmentTooLarge,
                    fmt::format("segment of {} dwords exceeds the limit ({} dwords, {} byte pushbuffer)", dwords,
                                cfg_.max_segment_dwords, cfg_.pushbuffer_bytes));
    if (s.pb_cursor_ + bytes > s.pb_base_ + cfg_.pushbuffer_bytes)
        s.pb_cursor_ = s.pb_base_;
    VirtAddr va = s.pb_cursor_;
    s.pb_cursor_ += bytes;
    return va;
}

GpFifoEntry Driver::submit_segment(Stream& s, std::span<const std::uint32_t> words, bool ring_it)
{
    if (words.empty())
        throw Error(ErrorCode::ZeroLength, "empty pushbuffer segment");
    GpFifoEntry entry;
    {
        std::lock_guard lock(s.channel().mutex());
        VirtAddr va = reserve_pb(s, words.size());
        sim_.mem.write_dwords(va, words);
        entry.pb_va = va;
        entry.length_dw = static_cast<std::uint32_t>(words.size());
        entry.flags = cfg_.entry_flags;
        entry.raw = encode_gpfifo_entry(va, entry.length_dw, entry.flags);
        sim_.channels.submit_entry(s.channel(), entry);
    }
    if (ring_it)
        ring(s);
    return entry;
}

void Driver::ring(Stream& s)
{
    sim_.channels.ring_doorbell(s.channel().id());
}

VirtAddr Driver::sem_slot(const Stream& s, std::uint32_t payload) const noexcept
{
    return s.sem_base_ + std::uint64_t{payload % cfg_.semaphore_slots} * 16;
}

void Driver::encode_transfer(PushbufferBuilder& pb, const TransferDescriptor& t) const
{
    const Methods& m = Methods::get();
    if (t.engine == EngineKind::CopyDirect) {
        for (std::uint64_t done = 0; done < t.length; done += kMaxCopyLine) {
            std::uint64_t n = std::min(t.length - done, kMaxCopyLine);
            VirtAddr src = t.src + done, dst = t.dst + done;
            pb.inc(kCopySubchannel, m.copy_in_upper, {hi32(src), lo32(src), hi32(dst), lo32(dst)});
            pb.inc(kCopySubchannel, m.copy_line_length, {static_cast<std::uint32_t>(n)});
            pb.inc(kCopySubchannel, m.copy_launch, {kCopyLaunchNonPipelinedPitch});
        }
        return;
    }
    if (t.inline_bytes.size() < t.length)
        throw Error(ErrorCode::MalformedDescriptor, "inline payload shorter than the transfer length");
    if (t.length > 0xffffffffull)
        throw Error(ErrorCode::InlineTooLarge, "inline transfer length overflows LINE_LENGTH_IN");
    pb.inc(kComputeSubchannel, m.cmp_line_length, {static_cast<std::uint32_t>(t.length), 1});
    pb.inc(kComputeSubchannel, m.cmp_offset_out_upper, {hi32(t.dst), lo32(t.dst)});
    pb.inc(kComputeSubchannel, m.cmp_launch, {kInlineLaunchPitch});
    std::vector<std::uint32_t> words((t.length + 3) / 4, 0);
    std::memcpy(words.data(), t.inline_bytes.data(), t.length);
    pb.non_inc(kComputeSubchannel, m.cmp_inline_data, words);
}

CompletionToken Driver::encode_tracker(Stream& s, PushbufferBuilder& pb)
{
    const Methods& m = Methods::get();
    if (s.next_payload_ == 0)
        s.next_payload_ = 1;
    std::uint32_t payload = s.next_payload_++;
    VirtAddr addr = sem_slot(s, payload);
    pb.inc(kCopySubchannel, m.sem_addr_hi, {hi32(addr), lo32(addr), payload});
    pb.inc(kCopySubchannel, m.sem_execute, {kSemExecuteReleaseTs});
    return CompletionToken{s.channel().id(), addr, payload};
}

CompletionToken Driver::memcpy(Stream& s, VirtAddr dst, VirtAddr src, std::uint64_t len, Direction dir)
{
    if (len == 0)
        throw Error(ErrorCode::ZeroLength, "memcpy of zero bytes");
    if (!sim_.mem.range_mapped(src, len))
        throw Error(ErrorCode::PageFault, fmt::format("memcpy source 0x{:x} +0x{:x} not mapped", src, len));
    if (!sim_.mem.range_mapped(dst, len))
        throw Error(ErrorCode::PageFault, fmt::format("memcpy destination 0x{:x} +0x{:x} not mapped", dst, len));

    TransferDescriptor t;
    t.engine = memcpy_path(len, dir, cfg_.inline_switch_bytes);
    t.dst = dst;
    t.length = len;
    if (t.engine == EngineKind::ComputeInline) {
        t.inline_bytes.resize(len);
        sim_.mem.read(src, t.inline_bytes);
    } else {
        t.src = src;
    }
    PushbufferBuilder pb;
    encode_transfer(pb, t);
    CompletionToken tok = encode_tracker(s, pb);
    submit_segment(s, pb.words());
    return tok;
}

bool Driver::completed(const CompletionToken& tok) const
{
    return sim_.mem.read32(tok.sem_addr) == tok.payload;
}

std::uint64_t Driver::completion_ns(const CompletionToken& tok) const
{
    if (!completed(tok))
        throw Error(ErrorCode::BadState, fmt::format("tracker payload {} has not been released", tok.payload));
    return sim_.mem.read64(tok.sem_addr + 8);
}

CoalescedBenchmark Driver::build_coalesced_benchmark(Stream& s, const TransferDescriptor& t,
                                                     std::uint32_t warmup_iters, std::uint32_t test_iters)
{
    if (warmup_iters == 0 || test_iters == 0)
        throw Error(ErrorCode::ZeroLength, "coalesced benchmark needs at least one warmup and one test iteration");
    PushbufferBuilder one;
    encode_transfer(one, t);
    const std::uint64_t tracker_dw = 6;
    const std::uint64_t total = one.size_dw() * (std::uint64_t{warmup_iters} + test_iters) + 2 * tracker_dw;
    if (total > cfg_.max_segment_dwords || total * 4 > cfg_.pushbuffer_bytes)
        throw Error(ErrorCode::SegmentTooLarge,
                    fmt::format("coalesced segment of {} dwords exceeds the limit of {}", total,
                                std::min<std::uint64_t>(cfg_.max_segment_dwords, cfg_.pushbuffer_bytes / 4)));

    CoalescedBenchmark b;
    b.warmup_iters = warmup_iters;
    b.test_iters = test_iters;
    PushbufferBuilder pb;
    for (std::uint32_t i = 0; i < warmup_iters; ++i)
        pb.append(one.words());
    b.warmup_tracker = encode_tracker(s, pb);
    for (std::uint32_t i = 0; i < test_iters; ++i)
        pb.append(one.words());
    b.test_tracker = encode_tracker(s, pb);
    b.segment = pb.take();
    return b;
}

BenchmarkResult Driver::run_coalesced_benchmark(Stream& s, const CoalescedBenchmark& b)
{
    std::uint64_t before = sim_.channels.doorbell_writes();
    submit_segment(s, b.segment);
    BenchmarkResult r;
    r.doorbells = sim_.channels.doorbell_writes() - before;
    r.ts_warmup_ns = completion_ns(b.warmup_tracker);
    r.ts_test_ns = completion_ns(b.test_tracker);
    r.per_iter_ns = static_cast<double>(r.ts_test_ns - r.ts_warmup_ns) / b.test_iters;
    return r;
}

LaunchStats Driver::graph_launch(const GraphExec& exec, Stream& s)
{
    const std::uint32_t id = s.channel().id();
    const std::size_t reports_before = sim_.pbdma.reports(id).size();
    const std::uint64_t doorbells_before = sim_.channels.doorbell_writes();

    LaunchStats st;
    for (const auto& seg : exec.segments) {
        submit_segment(s, seg);
        ++st.gpfifo_entries;
        st.emitted_bytes += seg.size() * 4;
    }
    st.doorbell_writes = sim_.channels.doorbell_writes() - doorbells_before;
    auto reports = sim_.pbdma.reports(id);
    for (std::size_t i = reports_before; i < reports.size(); ++i)
        for (const auto& c : reports[i].commands)
            if (c.kind == CommandKind::KernelNode)
                st.nodes_executed += c.payload;
    st.launch_time_ns = exec.strategy.launch_time_ns(st.emitted_bytes);
    return st;
}

} // namespace pushtrace
