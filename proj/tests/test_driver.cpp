#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pushtrace/driver.hpp"
#include "util.hpp"

using namespace pushtrace;

namespace {

constexpr VirtAddr kHost = 0x7fa820000000;
constexpr VirtAddr kDev = 0x7fa80e000000;

struct DriverTest : ::testing::Test {
    Simulator sim;
    Driver drv{sim};

    void SetUp() override
    {
        sim.mem.map(kHost, 1 << 20, DomainKind::HostRam, AllocTag::UserData);
        sim.mem.map(kDev, 1 << 20, DomainKind::DeviceVram, AllocTag::UserData);
    }

    std::uint64_t reference_emitted(const LaunchStrategy& s, std::uint32_t n)
    {
        std::uint64_t chunks = (n + s.chunk_nodes - 1) / s.chunk_nodes;
        return s.base_bytes + chunks * (std::uint64_t{s.chunk_nodes} * s.per_node_bytes + s.per_chunk_overhead_bytes);
    }
};

} // namespace

TEST(ProtocolSwitch, Boundaries)
{
    constexpr std::uint64_t k = 1024;
    EXPECT_EQ(memcpy_path(24 * k - 1, Direction::H2D), EngineKind::ComputeInline);
    EXPECT_EQ(memcpy_path(24 * k, Direction::H2D), EngineKind::CopyDirect);
    EXPECT_EQ(memcpy_path(1, Direction::D2H), EngineKind::CopyDirect);
    EXPECT_EQ(memcpy_path(100, Direction::H2D, 64), EngineKind::CopyDirect);
}

TEST(DriverConfig, Validate)
{
    DriverConfig c;
    c.validate();
    c.ring_len = 0;
    EXPECT_PT_ERROR(c.validate(), ErrorCode::Config);
    c = {};
    c.pushbuffer_bytes = kPageSize + 4;
    EXPECT_PT_ERROR(c.validate(), ErrorCode::Config);
    c = {};
    c.max_segment_dwords = kMaxGpLengthDw + 1;
    Simulator sim;
    EXPECT_PT_ERROR(Driver(sim, c), ErrorCode::Config);
}

TEST_F(DriverTest, CreateStreamMapsObjectsAndSubmitsInit)
{
    Stream& s = drv.create_stream();
    ChannelContext& ch = s.channel();
    EXPECT_EQ(sim.mem.attribute(ch.ramfc().gp_base), AllocTag::Gpfifo);
    EXPECT_EQ(sim.mem.translate(ch.ramfc().gp_base).domain, DomainKind::DeviceVram);
    EXPECT_EQ(sim.mem.attribute(s.pb_base()), AllocTag::Pushbuffer);
    EXPECT_EQ(sim.mem.attribute(s.sem_base()), AllocTag::SemaphoreBuf);
    EXPECT_EQ(ch.userd().gp_put, 1u);
    EXPECT_EQ(ch.userd().gp_get, 1u);
    EXPECT_EQ(s.pb_cursor(), s.pb_base() + 0x20);
    EXPECT_EQ(sim.channels.doorbell_writes(), 1u);

    auto init = decode_stream(sim.mem.read_dwords(s.pb_base(), 8));
    ASSERT_EQ(init.size(), 5u);
    EXPECT_EQ(init[0].data, kAmpereDmaCopyB);
    EXPECT_EQ(init[1].data, kAmpereComputeB);
    EXPECT_EQ((std::uint64_t{init[2].data} << 32) | init[3].data, s.sem_base());

    Stream& s2 = drv.create_stream();
    EXPECT_NE(s2.channel().id(), ch.id());
    EXPECT_GT(s2.pb_base(), s.sem_base());
}

TEST_F(DriverTest, InlineMemcpyBelowSwitch)
{
    Stream& s = drv.create_stream();
    for (std::uint32_t i = 0; i < 256; ++i)
        sim.mem.write32(kHost + 4 * i, 0x1000 + i);
    CompletionToken tok = drv.memcpy(s, kDev, kHost, 1022, Direction::H2D);
    EXPECT_TRUE(drv.completed(tok));
    for (std::uint32_t i = 0; i < 255; ++i)
        ASSERT_EQ(sim.mem.read32(kDev + 4 * i), 0x1000 + i);
    EXPECT_EQ(sim.mem.read32(kDev + 1020) & 0xffff0000u, 0u);
    auto reps = sim.pbdma.reports(s.channel().id());
    EXPECT_EQ(reps.back().commands.front().engine, EngineKind::ComputeInline);
    EXPECT_EQ(drv.completion_ns(tok), sim.pbdma.cost_model().latency_ns(EngineKind::ComputeInline, 1022));
}

TEST_F(DriverTest, CopyMemcpyAtSwitchAndForD2H)
{
    Stream& s = drv.create_stream();
    sim.mem.write32(kHost + 100, 77);
    auto t1 = drv.memcpy(s, kDev, kHost, 24 * 1024, Direction::H2D);
    auto t2 = drv.memcpy(s, kHost + 0x80000, kDev, 64, Direction::D2H);
    EXPECT_EQ(sim.mem.read32(kDev + 100), 77u);
    EXPECT_EQ(sim.mem.read32(kHost + 0x80000 + 100 % 64), sim.mem.read32(kDev + 100 % 64));
    auto reps = sim.pbdma.reports(s.channel().id());
    ASSERT_GE(reps.size(), 2u);
    EXPECT_EQ(reps[reps.size() - 2].commands.front().engine, EngineKind::CopyDirect);
    EXPECT_EQ(reps.back().commands.front().engine, EngineKind::CopyDirect);
    EXPECT_LT(drv.completion_ns(t1), drv.completion_ns(t2));
    EXPECT_EQ(t2.payload, t1.payload + 1);
}

TEST_F(DriverTest, MemcpyErrors)
{
    Stream& s = drv.create_stream();
    EXPECT_PT_ERROR(drv.memcpy(s, kDev, kHost, 0, Direction::H2D), ErrorCode::ZeroLength);
    EXPECT_PT_ERROR(drv.memcpy(s, kDev, 0x10000000, 64, Direction::H2D), ErrorCode::PageFault);
    EXPECT_PT_ERROR(drv.memcpy(s, 0x10000000, kHost, 64, Direction::H2D), ErrorCode::PageFault);
    EXPECT_PT_ERROR(drv.submit_segment(s, {}), ErrorCode::ZeroLength);
    EXPECT_PT_ERROR(drv.completion_ns(CompletionToken{s.channel().id(), s.sem_base() + 16 * 99, 99}),
                    ErrorCode::BadState);
}

TEST_F(DriverTest, CopyEncodingSplitsAt2GiB)
{
    TransferDescriptor t;
    t.engine = EngineKind::CopyDirect;
    t.src = 0x100000000;
    t.dst = 0x900000000;
    t.length = (5ull << 30) + 12;
    PushbufferBuilder pb;
    drv.encode_transfer(pb, t);
    auto ms = decode_stream(pb.words());
    std::vector<std::uint32_t> lengths;
    std::uint64_t total = 0;
    for (const auto& m : ms)
        if (m.method_name() == "LINE_LENGTH_IN") {
            lengths.push_back(m.data);
            total += m.data;
        }
    EXPECT_EQ(lengths.size(), 3u);
    EXPECT_EQ(lengths[0], 1u << 31);
    EXPECT_EQ(total, t.length);
    EXPECT_EQ(ms.back().data, 0x182u);
}

TEST_F(DriverTest, CoalescedBenchmarkPerIteration)
{
    Stream& s = drv.create_stream();
    TransferDescriptor t;
    t.engine = EngineKind::CopyDirect;
    t.src = kHost;
    t.dst = kDev;
    t.length = 32 * 1024;
    auto b = drv.build_coalesced_benchmark(s, t, 2, 10);
    BenchmarkResult r = drv.run_coalesced_benchmark(s, b);
    EXPECT_EQ(r.doorbells, 1u);
    EXPECT_DOUBLE_EQ(r.per_iter_ns, static_cast<double>(sim.pbdma.cost_model().latency_ns(EngineKind::CopyDirect, t.length)));
    EXPECT_LT(r.ts_warmup_ns, r.ts_test_ns);
    EXPECT_PT_ERROR(drv.build_coalesced_benchmark(s, t, 0, 1), ErrorCode::ZeroLength);
}

TEST_F(DriverTest, CoalescedBenchmarkTooLarge)
{
    DriverConfig cfg;
    cfg.max_segment_dwords = 64;
    Simulator sim2;
    Driver d2(sim2, cfg);
    Stream& s = d2.create_stream();
    TransferDescriptor t;
    t.engine = EngineKind::CopyDirect;
    t.src = 0x1000;
    t.dst = 0x2000;
    t.length = 4;
    EXPECT_PT_ERROR(d2.build_coalesced_benchmark(s, t, 1, 10), ErrorCode::SegmentTooLarge);
}

TEST_F(DriverTest, PushbufferWraps)
{
    DriverConfig cfg;
    cfg.pushbuffer_bytes = kPageSize;
    Simulator sim2;
    Driver d2(sim2, cfg);
    Stream& s = d2.create_stream();
    std::vector<std::uint32_t> seg(600, 0);
    seg[0] = encode_header({MethodOp::NonInc, 599, 1, 0x2cc / 4});
    auto e1 = d2.submit_segment(s, seg);
    auto e2 = d2.submit_segment(s, seg);
    EXPECT_EQ(e1.pb_va, s.pb_base() + 0x20);
    EXPECT_EQ(e2.pb_va, s.pb_base());
    EXPECT_PT_ERROR(d2.submit_segment(s, std::vector<std::uint32_t>(1025, 0)), ErrorCode::SegmentTooLarge);
}

TEST_F(DriverTest, GraphUploadMatchesSizeModel)
{
    for (auto kind : {GraphStrategyKind::Legacy118, GraphStrategyKind::Modern130}) {
        LaunchStrategy strat = LaunchStrategy::defaults(kind);
        for (std::uint32_t n : {1u, 2u, 7u, 8u, 9u, 63u, 64u, 65u, 500u, 2000u}) {
            GraphExec g = graph_upload(GraphSpec{n, 3}, strat);
            ASSERT_EQ(g.emitted_bytes(), reference_emitted(strat, n)) << to_string(kind) << " n=" << n;
            ASSERT_EQ(strat.emitted_bytes(n), reference_emitted(strat, n));
            ASSERT_EQ(g.segments.size(), strat.doorbells(n));
            for (const auto& seg : g.segments)
                ASSERT_TRUE(oracle::interpret(seg));
        }
    }
    EXPECT_EQ(LaunchStrategy::modern130().doorbells(2000), 1u);
    EXPECT_EQ(LaunchStrategy::legacy118().doorbells(2000), 250u);
}

TEST_F(DriverTest, GraphLaunchExecutesEveryNode)
{
    Stream& s = drv.create_stream();
    for (auto kind : {GraphStrategyKind::Legacy118, GraphStrategyKind::Modern130}) {
        LaunchStrategy strat = LaunchStrategy::defaults(kind);
        std::uint64_t clock0 = sim.pbdma.clock_ns(s.channel().id());
        GraphExec g = graph_upload(GraphSpec{100, 5}, strat);
        LaunchStats st = drv.graph_launch(g, s);
        EXPECT_EQ(st.nodes_executed, 100u);
        EXPECT_EQ(st.doorbell_writes, strat.doorbells(100));
        EXPECT_EQ(st.gpfifo_entries, g.segments.size());
        EXPECT_EQ(st.emitted_bytes, strat.emitted_bytes(100));
        double ref = strat.base_launch_ns + st.emitted_bytes / (strat.effective_write_bw_mibps * 1048576.0) * 1e9;
        EXPECT_NEAR(st.launch_time_ns, ref, ref * 1e-12);
        EXPECT_EQ(sim.pbdma.clock_ns(s.channel().id()) - clock0, 500u);
    }
}

TEST(LaunchStrategy, Validate)
{
    LaunchStrategy s = LaunchStrategy::legacy118();
    s.validate();
    s.chunk_nodes = 0;
    EXPECT_PT_ERROR(s.validate(), ErrorCode::Config);
    s = LaunchStrategy::modern130();
    s.effective_write_bw_mibps = -1;
    EXPECT_PT_ERROR(s.validate(), ErrorCode::Config);
}
