#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "pushtrace/simulator.hpp"
#include "table2.hpp"
#include "util.hpp"

using namespace pushtrace;

namespace {

constexpr VirtAddr kRing = 0x20021b000;
constexpr VirtAddr kPb = 0x202600000;
constexpr VirtAddr kSrc = 0x7fa820000000;
constexpr VirtAddr kDst = 0x7fa80e000000;
constexpr VirtAddr kSem = 0x400000000;

struct Rig : ::testing::Test {
    Simulator sim;
    ChannelContext* ch = nullptr;
    VirtAddr cursor = kPb;

    void SetUp() override
    {
        sim.mem.map(kRing, kPageSize, DomainKind::DeviceVram, AllocTag::Gpfifo);
        sim.mem.map(kPb, 64 * kPageSize, DomainKind::HostRam, AllocTag::Pushbuffer);
        sim.mem.map(kSrc, 1 << 20, DomainKind::HostRam, AllocTag::UserData);
        sim.mem.map(kDst, 1 << 20, DomainKind::DeviceVram, AllocTag::UserData);
        sim.mem.map(kSem, kPageSize, DomainKind::HostRam, AllocTag::SemaphoreBuf);
        ch = &sim.channels.create_channel(kRing, 64);
    }

    void submit(const PushbufferBuilder& pb, bool ring = true)
    {
        sim.mem.write_dwords(cursor, pb.words());
        sim.channels.submit_entry(*ch, decode_gpfifo_entry(encode_gpfifo_entry(cursor, static_cast<std::uint32_t>(pb.size_dw()))));
        cursor += pb.size_dw() * 4;
        if (ring)
            sim.channels.ring_doorbell(ch->id());
    }

    static void copy(PushbufferBuilder& pb, VirtAddr dst, VirtAddr src, std::uint32_t len, std::uint32_t launch = 0x182)
    {
        pb.inc(kCopySubchannel, 0x400,
               {static_cast<std::uint32_t>(src >> 32), static_cast<std::uint32_t>(src),
                static_cast<std::uint32_t>(dst >> 32), static_cast<std::uint32_t>(dst)});
        pb.inc(kCopySubchannel, 0x418, {len});
        pb.inc(kCopySubchannel, 0x300, {launch});
    }

    static void tracker(PushbufferBuilder& pb, VirtAddr addr, std::uint32_t payload, bool ts = true)
    {
        pb.inc(kCopySubchannel, 0x240, {static_cast<std::uint32_t>(addr >> 32), static_cast<std::uint32_t>(addr), payload});
        pb.inc(kCopySubchannel, 0x250, {ts ? 0x9u : 0x1u});
    }

    static void inline_write(PushbufferBuilder& pb, VirtAddr dst, const std::vector<std::uint32_t>& words,
                             std::uint32_t len)
    {
        pb.inc(kComputeSubchannel, 0x180, {len, 1});
        pb.inc(kComputeSubchannel, 0x188, {static_cast<std::uint32_t>(dst >> 32), static_cast<std::uint32_t>(dst)});
        pb.inc(kComputeSubchannel, 0x1b0, {1});
        pb.non_inc(kComputeSubchannel, 0x1b4, words);
    }
};

using PbdmaTest = Rig;

} // namespace

TEST(CostModel, MatchesRawColumnWithinFivePercent)
{
    CostModel c;
    for (const auto& r : kTable2) {
        EngineKind e = r.inline_engine ? EngineKind::ComputeInline : EngineKind::CopyDirect;
        double got = static_cast<double>(c.latency_ns(e, r.bytes));
        EXPECT_LE(std::abs(got - r.raw_ns) / r.raw_ns, 0.05) << r.bytes << " B: " << got << " vs " << r.raw_ns;
    }
}

TEST(CostModel, InlineMinimumAndBandwidth)
{
    CostModel c;
    EXPECT_EQ(c.latency_ns(EngineKind::ComputeInline, 8), 24u);
    EXPECT_EQ(c.latency_ns(EngineKind::ComputeInline, 32), 24u);
    EXPECT_NEAR(c.bandwidth_gibps(EngineKind::ComputeInline, 8192), 17.5, 17.5 * 0.05);
}

TEST(CostModel, MonotoneAndBounded)
{
    CostModel c;
    for (EngineKind e : {EngineKind::ComputeInline, EngineKind::CopyDirect}) {
        double prev_a = 0;
        std::uint64_t prev_q = 0;
        for (std::uint64_t b = 1; b <= (64ull << 20); b = b * 3 / 2 + 1) {
            double a = c.analytic_latency_ns(e, b);
            std::uint64_t q = c.latency_ns(e, b);
            EXPECT_GT(a, prev_a);
            EXPECT_GE(q, prev_q);
            EXPECT_GE(static_cast<double>(q) + 1e-9, a);
            EXPECT_EQ(q % c.engine(e).tick_ns, 0u);
            EXPECT_LE(c.bandwidth_gibps(e, b), c.engine(e).sat_gibps);
            prev_a = a;
            prev_q = q;
        }
    }
}

TEST(CostModel, Validate)
{
    CostModel c;
    c.validate();
    c.copy_engine.sat_gibps = 0;
    EXPECT_PT_ERROR(c.validate(), ErrorCode::Config);
    c = {};
    c.inline_engine.tick_ns = 0;
    EXPECT_PT_ERROR(c.validate(), ErrorCode::Config);
}

TEST_F(PbdmaTest, CopyTransferMovesBytesAndAdvancesClock)
{
    for (std::uint32_t i = 0; i < 1024; ++i)
        sim.mem.write32(kSrc + 4 * i, i ^ 0xa5a5a5a5);
    PushbufferBuilder pb;
    copy(pb, kDst, kSrc, 4096);
    submit(pb);

    for (std::uint32_t i = 0; i < 1024; ++i)
        ASSERT_EQ(sim.mem.read32(kDst + 4 * i), i ^ 0xa5a5a5a5);
    auto reps = sim.pbdma.reports(ch->id());
    ASSERT_EQ(reps.size(), 1u);
    ASSERT_EQ(reps[0].commands.size(), 1u);
    const auto& c = reps[0].commands[0];
    EXPECT_EQ(c.kind, CommandKind::Transfer);
    EXPECT_EQ(c.engine, EngineKind::CopyDirect);
    EXPECT_EQ(c.bytes, 4096u);
    EXPECT_EQ(c.end_ns - c.start_ns, sim.pbdma.cost_model().latency_ns(EngineKind::CopyDirect, 4096));
    EXPECT_EQ(sim.pbdma.clock_ns(ch->id()), c.end_ns);
    EXPECT_EQ(ch->pbdma()->gp_get, 1u);
    EXPECT_EQ(ch->userd().gp_get, 1u);
}

TEST_F(PbdmaTest, SemaphoreReleaseWithTimestamp)
{
    PushbufferBuilder pb;
    copy(pb, kDst, kSrc, 512);
    tracker(pb, kSem + 0x10, 7);
    tracker(pb, kSem + 0x20, 8, false);
    submit(pb);
    EXPECT_EQ(sim.mem.read32(kSem + 0x10), 7u);
    EXPECT_EQ(sim.mem.read64(kSem + 0x18), sim.pbdma.cost_model().latency_ns(EngineKind::CopyDirect, 512));
    EXPECT_EQ(sim.mem.read32(kSem + 0x20), 8u);
    EXPECT_EQ(sim.mem.read64(kSem + 0x28), 0u);
}

TEST_F(PbdmaTest, LaunchDmaSemaphoreType)
{
    PushbufferBuilder pb;
    pb.inc(kCopySubchannel, 0x240, {static_cast<std::uint32_t>(kSem >> 32), static_cast<std::uint32_t>(kSem), 42});
    copy(pb, kDst, kSrc, 64, 0x182 | (2u << 3));
    submit(pb);
    EXPECT_EQ(sim.mem.read32(kSem), 42u);
    EXPECT_EQ(sim.mem.read64(kSem + 8), sim.pbdma.clock_ns(ch->id()));
}

TEST_F(PbdmaTest, BracketingTrackersMeasurePrefixSum)
{
    const std::uint32_t sizes[] = {100, 4096, 65536, 8, 777};
    PushbufferBuilder pb;
    tracker(pb, kSem, 1);
    std::uint64_t expected = 0;
    for (std::uint32_t s : sizes) {
        copy(pb, kDst, kSrc, s);
        expected += sim.pbdma.cost_model().latency_ns(EngineKind::CopyDirect, s);
    }
    inline_write(pb, kDst, {1, 2, 3}, 12);
    expected += sim.pbdma.cost_model().latency_ns(EngineKind::ComputeInline, 12);
    tracker(pb, kSem + 16, 2);
    submit(pb);
    EXPECT_EQ(sim.mem.read64(kSem + 24) - sim.mem.read64(kSem + 8), expected);
}

TEST_F(PbdmaTest, InlineTransferWritesPayload)
{
    PushbufferBuilder pb;
    inline_write(pb, kDst + 0x100, {0x04030201, 0x08070605, 0x0c0b0a09}, 10);
    submit(pb);
    std::vector<std::byte> out(12);
    sim.mem.read(kDst + 0x100, out);
    for (int i = 0; i < 10; ++i)
        EXPECT_EQ(std::to_integer<int>(out[i]), i + 1);
    EXPECT_EQ(std::to_integer<int>(out[10]), 0); // length honoured
    auto reps = sim.pbdma.reports(ch->id());
    EXPECT_EQ(reps.back().commands.back().engine, EngineKind::ComputeInline);
}

TEST_F(PbdmaTest, InlineTooLargeRejected)
{
    PushbufferBuilder pb;
    inline_write(pb, kDst, {}, 31 * 1024 + 1);
    EXPECT_PT_ERROR(submit(pb), ErrorCode::InlineTooLarge);

    TransferDescriptor t;
    t.engine = EngineKind::ComputeInline;
    t.dst = kDst;
    t.length = 31 * 1024 + 1;
    t.inline_bytes.resize(t.length);
    EXPECT_PT_ERROR(sim.pbdma.exec_transfer(t, 0), ErrorCode::InlineTooLarge);
    t.length = 31 * 1024;
    EXPECT_NO_THROW(sim.pbdma.exec_transfer(t, 0));
}

TEST_F(PbdmaTest, IncompleteInlineIsMalformed)
{
    PushbufferBuilder pb;
    inline_write(pb, kDst, {1}, 64);
    EXPECT_PT_ERROR(submit(pb), ErrorCode::MalformedDescriptor);
}

TEST_F(PbdmaTest, MissingRegistersAreMalformed)
{
    PushbufferBuilder pb;
    pb.inc(kCopySubchannel, 0x300, {0x182});
    EXPECT_PT_ERROR(submit(pb), ErrorCode::MalformedDescriptor);
}

TEST_F(PbdmaTest, UnmappedDestinationFaults)
{
    PushbufferBuilder pb;
    copy(pb, 0x1234000000, kSrc, 64);
    EXPECT_PT_ERROR(submit(pb), ErrorCode::PageFault);
    EXPECT_PT_ERROR(sim.pbdma.exec_semaphore_release(0x1234000000, 1, 0), ErrorCode::PageFault);
}

TEST_F(PbdmaTest, TimestampStoredBeforePayload)
{
    // The payload must never be observable ahead of earlier work: every
    // transfer reported before a release has already landed.
    std::vector<CommandRecord> seen;
    bool ordered = true;
    sim.pbdma.set_observer([&](const ChannelContext&, const CommandRecord& c) {
        if (c.kind == CommandKind::SemaphoreRelease) {
            for (const auto& prev : seen)
                ordered = ordered && prev.end_ns <= c.start_ns;
            ordered = ordered && sim.mem.read64(c.dst + 8) == c.start_ns;
        } else {
            ordered = ordered && sim.mem.read32(kSem) == 0;
        }
        seen.push_back(c);
    });
    PushbufferBuilder pb;
    copy(pb, kDst, kSrc, 8192);
    copy(pb, kDst, kSrc, 16);
    tracker(pb, kSem, 5);
    submit(pb);
    EXPECT_TRUE(ordered);
    EXPECT_EQ(seen.size(), 3u);
}

TEST_F(PbdmaTest, ClocksArePerChannel)
{
    sim.mem.map(0x20021c000, kPageSize, DomainKind::DeviceVram, AllocTag::Gpfifo);
    ChannelContext& other = sim.channels.create_channel(0x20021c000, 8);
    PushbufferBuilder pb;
    copy(pb, kDst, kSrc, 1 << 16);
    submit(pb);
    EXPECT_GT(sim.pbdma.clock_ns(ch->id()), 0u);
    EXPECT_EQ(sim.pbdma.clock_ns(other.id()), 0u);
}

TEST_F(PbdmaTest, MultipleEntriesOneDoorbell)
{
    PushbufferBuilder a, b;
    copy(a, kDst, kSrc, 64);
    copy(b, kDst + 64, kSrc, 64);
    submit(a, false);
    submit(b, true);
    auto reps = sim.pbdma.reports(ch->id());
    ASSERT_EQ(reps.size(), 1u);
    EXPECT_EQ(reps[0].entries_consumed, 2u);
    EXPECT_EQ(reps[0].transfer_count(), 2u);
    EXPECT_EQ(reps[0].elapsed_ns(), 2 * sim.pbdma.cost_model().latency_ns(EngineKind::CopyDirect, 64));
}

TEST_F(PbdmaTest, KernelNodesAdvanceClock)
{
    PushbufferBuilder pb;
    pb.inc(kComputeSubchannel, 0x2c8, {250});
    pb.inc(kComputeSubchannel, 0x2bc, {1});
    pb.inc(kComputeSubchannel, 0x2c0, {0, 4});
    submit(pb);
    EXPECT_EQ(sim.pbdma.clock_ns(ch->id()), 5 * 250u);
}

TEST_F(PbdmaTest, ReportJsonl)
{
    PushbufferBuilder pb;
    copy(pb, kDst, kSrc, 64);
    tracker(pb, kSem, 3);
    submit(pb);
    std::string text = sim.pbdma.reports(ch->id()).at(0).to_jsonl();
    std::istringstream in(text);
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(in, line))
        rows.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0]["kind"], "transfer");
    EXPECT_EQ(rows[1]["kind"], "semaphore_release");
    sim.pbdma.clear_reports();
    EXPECT_TRUE(sim.pbdma.reports(ch->id()).empty());
}
