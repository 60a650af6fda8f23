#include <gtest/gtest.h>

#include "pushtrace/config.hpp"
#include "pushtrace/seed.hpp"
#include "util.hpp"

using namespace pushtrace;

TEST(Config, DefaultsValidate)
{
    ScenarioConfig c;
    c.validate();
    EXPECT_EQ(c.driver.inline_switch_bytes, 24u * 1024);
    EXPECT_EQ(c.cost.inline_max_bytes, 31u * 1024);
}

TEST(Config, ParseKeysAndSuffixes)
{
    auto c = ScenarioConfig::parse(R"(
        # comment line
        inline_switch_bytes = 16K
        pushbuffer_bytes = 0x400000   # trailing comment
        cost.copy.sat_gibps = 20.5
        cost.inline.tick_ns = 4
        legacy118.chunk_nodes = 16
        sweep.exp.start = 1KiB
        sweep.exp.end = 1M
        sweep.threads = 2
    )");
    EXPECT_EQ(c.driver.inline_switch_bytes, 16u * 1024);
    EXPECT_EQ(c.driver.pushbuffer_bytes, 0x400000u);
    EXPECT_DOUBLE_EQ(c.cost.copy_engine.sat_gibps, 20.5);
    EXPECT_EQ(c.cost.inline_engine.tick_ns, 4u);
    EXPECT_EQ(c.legacy118.chunk_nodes, 16u);
    EXPECT_EQ(c.memcpy_exp.start, 1024u);
    EXPECT_EQ(c.memcpy_exp.end, 1u << 20);
    EXPECT_EQ(c.threads, 2);
}

TEST(Config, DescribeRoundTrips)
{
    ScenarioConfig c;
    c.modern130.base_launch_ns = 1234.5;
    c.graph_lengths = {10, 100, 10, 0};
    std::string text = c.describe();
    ScenarioConfig back = ScenarioConfig::parse(text);
    EXPECT_EQ(back.describe(), text);
    EXPECT_DOUBLE_EQ(back.modern130.base_launch_ns, 1234.5);
    EXPECT_EQ(back.graph_lengths.end, 100u);
}

TEST(Config, Errors)
{
    for (const char* bad : {"nope = 1", "ring_len", "ring_len = abc", "ring_len = 0x1g", "ring_len = 99999999999",
                            "cost.copy.sat_gibps = fast", "ring_len = 1", "sweep.exp.factor = 1",
                            "sweep.exp.step = 4", "sweep.test_iters = 0", "legacy118.chunk_nodes = 0",
                            "sweep.linear.start = 0", "cost.inline.tick_ns = 0"}) {
        SCOPED_TRACE(bad);
        EXPECT_PT_ERROR(ScenarioConfig::parse(bad), ErrorCode::Config);
    }
    EXPECT_PT_ERROR(ScenarioConfig::load("/nonexistent/pushtrace.cfg"), ErrorCode::Io);
}

TEST(Seed, FromEnvironment)
{
    ::setenv("PUSHTRACE_SEED", "0x2a", 1);
    EXPECT_EQ(seed_from_env(), 42u);
    ::setenv("PUSHTRACE_SEED", "12x", 1);
    EXPECT_EQ(seed_from_env(9), 9u);
    ::unsetenv("PUSHTRACE_SEED");
    EXPECT_EQ(seed_from_env(5), 5u);
}
