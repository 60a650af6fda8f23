#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pushtrace/method_codec.hpp"
#include "pushtrace/seed.hpp"
#include "util.hpp"

using namespace pushtrace;

namespace {

const std::vector<std::uint32_t> kListingSegment = {
    0x20048100, 0x00007fa8, 0x20000000, 0x00007fa8, 0x0e000000, 0x20018106, 0x04000000, 0x200180c0,
    0x00000182, 0x20038090, 0x00000004, 0x00000010, 0x00000001, 0x20018094, 0x00000009,
};

const MethodOp kOps[] = {MethodOp::Inc, MethodOp::NonInc, MethodOp::Immediate, MethodOp::OneInc};

std::vector<oracle::Method> as_oracle(const std::vector<DecodedMethod>& ms)
{
    std::vector<oracle::Method> out;
    for (const auto& m : ms)
        out.push_back({m.subchannel, m.byte_offset, m.data});
    return out;
}

} // namespace

TEST(Header, RandomRoundTripAgainstOracle)
{
    std::mt19937_64 rng(seed_from_env());
    for (int i = 0; i < 10000; ++i) {
        MethodOp op = kOps[rng() % 4];
        auto count = static_cast<unsigned>(rng() & 0x1fff);
        auto subch = static_cast<unsigned>(rng() & 7);
        auto addr = static_cast<unsigned>(rng() & 0x1fff);
        MethodHeader h{op, static_cast<std::uint16_t>(count), static_cast<std::uint8_t>(subch),
                       static_cast<std::uint16_t>(addr)};
        std::uint32_t w = encode_header(h);
        ASSERT_EQ(w, oracle::join_header(static_cast<unsigned>(op), count, subch, addr));
        ASSERT_EQ(decode_header(w), h);
        auto s = oracle::split_header(w);
        ASSERT_EQ(s.count, count);
        ASSERT_EQ(s.addr_dw, addr);
    }
}

TEST(Header, UnknownOpcodesRejected)
{
    for (unsigned op : {0u, 2u, 6u, 7u})
        EXPECT_PT_ERROR(decode_header(oracle::join_header(op, 1, 0, 0)), ErrorCode::UnknownOpcode);
}

TEST(Header, FieldOverflow)
{
    EXPECT_PT_ERROR(encode_header({MethodOp::Inc, 0x2000, 0, 0}), ErrorCode::FieldOverflow);
    EXPECT_PT_ERROR(encode_header({MethodOp::Inc, 1, 8, 0}), ErrorCode::FieldOverflow);
    EXPECT_PT_ERROR(encode_header({MethodOp::Inc, 1, 0, 0x2000}), ErrorCode::FieldOverflow);
}

TEST(Header, ListingHeaders)
{
    MethodHeader h = decode_header(0x20048100);
    EXPECT_EQ(h.op, MethodOp::Inc);
    EXPECT_EQ(h.count, 4);
    EXPECT_EQ(h.subchannel, 4);
    EXPECT_EQ(h.addr_dw, 0x100);
    EXPECT_EQ(h.byte_offset(), 0x400u);
    EXPECT_EQ(decode_header(0x200180c0).byte_offset(), 0x300u);
}

TEST(Stream, ListingSegmentDecode)
{
    auto ms = decode_stream(kListingSegment);
    ASSERT_EQ(ms.size(), 10u);
    const char* names[] = {"OFFSET_IN_UPPER", "OFFSET_IN_LOWER", "OFFSET_OUT_UPPER", "OFFSET_OUT_LOWER",
                           "LINE_LENGTH_IN",  "LAUNCH_DMA",      "SEM_ADDR_HI",      "SEM_ADDR_LO",
                           "SEM_PAYLOAD",     "SEM_EXECUTE"};
    for (std::size_t i = 0; i < ms.size(); ++i) {
        EXPECT_EQ(ms[i].method_name(), names[i]);
        EXPECT_EQ(ms[i].class_name(), "AMPERE_DMA_COPY_B");
    }
    EXPECT_EQ(ms[4].data, 0x04000000u); // 64 MiB
    EXPECT_EQ(ms[5].data, 0x182u);
    EXPECT_EQ(ms[5].header_index, 7u);
    EXPECT_EQ(ms[5].data_index, 8u);
    EXPECT_EQ(as_oracle(ms), *oracle::interpret(kListingSegment));
}

TEST(Stream, MatchesNaiveInterpreterOnRandomStreams)
{
    std::mt19937_64 rng(seed_from_env() ^ 0x5eed);
    for (int iter = 0; iter < 2000; ++iter) {
        PushbufferBuilder pb;
        int groups = 1 + static_cast<int>(rng() % 6);
        for (int g = 0; g < groups; ++g) {
            std::vector<std::uint32_t> data(rng() % 9);
            for (auto& d : data)
                d = static_cast<std::uint32_t>(rng());
            auto subch = static_cast<std::uint8_t>(rng() % 8);
            std::uint32_t off = static_cast<std::uint32_t>(rng() % 0x1000) * 4;
            switch (rng() % 4) {
            case 0: pb.inc(subch, off, data); break;
            case 1: pb.non_inc(subch, off, data); break;
            case 2: pb.one_inc(subch, off, data); break;
            default: pb.immediate(subch, off, static_cast<std::uint16_t>(rng() & 0x1fff)); break;
            }
        }
        auto ref = oracle::interpret(pb.words());
        ASSERT_TRUE(ref);
        ASSERT_EQ(as_oracle(decode_stream(pb.words())), *ref);
    }
}

TEST(Stream, TruncationReportsPrefix)
{
    std::vector<std::uint32_t> words(kListingSegment.begin(), kListingSegment.begin() + 3);
    DecodedStream s = decode_stream_partial(words);
    ASSERT_FALSE(s.ok());
    EXPECT_EQ(s.error->code(), ErrorCode::TruncatedStream);
    EXPECT_EQ(s.methods.size(), 2u);
    EXPECT_FALSE(oracle::interpret(words));
    EXPECT_PT_ERROR(decode_stream(words), ErrorCode::TruncatedStream);
}

TEST(Stream, UnknownOpcodeStops)
{
    std::vector<std::uint32_t> words = {0x20018106, 0x100, 0xe0000000, 0x1};
    DecodedStream s = decode_stream_partial(words);
    ASSERT_FALSE(s.ok());
    EXPECT_EQ(s.error->code(), ErrorCode::UnknownOpcode);
    EXPECT_EQ(s.methods.size(), 1u);
}

TEST(Stream, UnboundSubchannelAndUnknownMethod)
{
    PushbufferBuilder pb;
    pb.inc(6, 0x10, {1}).inc(4, 0x7fc, {2});
    auto ms = decode_stream(pb.words());
    ASSERT_EQ(ms.size(), 2u);
    EXPECT_EQ(ms[0].class_name(), "");
    EXPECT_EQ(ms[1].method_name(), "METHOD_0x7fc");
}

TEST(Builder, SplitsLongGroups)
{
    std::vector<std::uint32_t> data(0x1fff + 10, 7);
    PushbufferBuilder pb;
    pb.non_inc(1, 0x1b4, data);
    EXPECT_EQ(pb.size_dw(), data.size() + 2);
    auto ms = decode_stream(pb.words());
    ASSERT_EQ(ms.size(), data.size());
    for (const auto& m : ms)
        ASSERT_EQ(m.byte_offset, 0x1b4u);

    PushbufferBuilder inc;
    inc.inc(1, 0, std::vector<std::uint32_t>(0x1fff + 1, 0));
    EXPECT_EQ(decode_stream(inc.words()).back().byte_offset, 0x1fffu * 4);
    EXPECT_PT_ERROR(PushbufferBuilder().inc(1, 2, {1}), ErrorCode::MisalignedVa);
}

TEST(LaunchDma, ExhaustiveFieldCombinations)
{
    int n = 0;
    for (unsigned tt = 0; tt < 4; ++tt)
        for (unsigned sem = 0; sem < 4; ++sem)
            for (unsigned bits = 0; bits < 64; ++bits) {
                CopyLaunchDma f;
                f.data_transfer_type = static_cast<std::uint8_t>(tt);
                f.semaphore_type = static_cast<std::uint8_t>(sem);
                f.flush_enable = bits & 1;
                f.src_pitch = bits & 2;
                f.dst_pitch = bits & 4;
                f.multi_line = bits & 8;
                f.src_physical = bits & 16;
                f.dst_physical = bits & 32;
                std::uint32_t w = oracle::pack_launch_dma(tt, f.flush_enable, sem, f.src_pitch, f.dst_pitch,
                                                          f.multi_line, f.src_physical, f.dst_physical);
                ASSERT_EQ(f.encode(), w);
                ASSERT_EQ(CopyLaunchDma::decode(w), f);
                ++n;
            }
    EXPECT_EQ(n, 1024);
}

TEST(LaunchDma, RandomWordsRoundTrip)
{
    std::mt19937 rng(static_cast<std::uint32_t>(seed_from_env()));
    for (int i = 0; i < 10000; ++i) {
        std::uint32_t w = rng();
        ASSERT_EQ(CopyLaunchDma::decode(w).encode(), w);
    }
}

TEST(LaunchDma, ListingFieldDump)
{
    auto f = decode_launch_dma(0x182);
    std::vector<std::pair<std::string, std::uint32_t>> got;
    for (const auto& d : f)
        if (!(d.elide_when_zero && d.value == 0))
            got.emplace_back(d.name, d.value);
    std::vector<std::pair<std::string, std::uint32_t>> want = {
        {"DATA_TRANSFER_TYPE", 2}, {"FLUSH_ENABLE", 0}, {"SRC_MEMORY_LAYOUT", 1}, {"DST_MEMORY_LAYOUT", 1},
        {"MULTI_LINE_ENABLE", 0},  {"SRC_TYPE", 0},     {"DST_TYPE", 0}};
    EXPECT_EQ(got, want);
    EXPECT_EQ(*f[0].label, "NON_PIPELINED");
}

TEST(LaunchDma, UncoveredBitsReported)
{
    auto f = decode_launch_dma(0x182 | (1u << 20));
    ASSERT_FALSE(f.empty());
    EXPECT_EQ(f.back().name, "UNKNOWN_BITS");
    EXPECT_EQ(f.back().value, 1u << 20);
}

TEST(GpFifo, RandomRoundTripAgainstOracle)
{
    std::mt19937_64 rng(seed_from_env() + 3);
    for (int i = 0; i < 10000; ++i) {
        VirtAddr va = rng() & ((1ull << 40) - 4);
        auto len = static_cast<std::uint32_t>(rng() & kMaxGpLengthDw);
        bool priv = rng() & 1, level = rng() & 1, sync = rng() & 1;
        GpEntryFlags flags{priv, level ? GpEntryLevel::Subroutine : GpEntryLevel::Main, sync};
        std::uint64_t raw = encode_gpfifo_entry(va, len, flags);
        ASSERT_EQ(raw, oracle::pack_gpfifo(va, len, priv, level, sync));
        GpFifoEntry e = decode_gpfifo_entry(raw);
        ASSERT_EQ(e.pb_va, va);
        ASSERT_EQ(e.length_dw, len);
        ASSERT_EQ(e.flags, flags);
        ASSERT_EQ(e.raw, raw);
    }
}

TEST(GpFifo, ListingWord)
{
    GpFifoEntry e = decode_gpfifo_entry(0x00003e0202600020ull);
    EXPECT_EQ(e.pb_va, 0x202600020u);
    EXPECT_EQ(e.length_dw, 15u);
    EXPECT_EQ(e.footprint_bytes(), 60u);
    EXPECT_EQ(e.flags.level, GpEntryLevel::Subroutine);
    EXPECT_EQ(encode_gpfifo_entry(0x202600020, 15, {false, GpEntryLevel::Subroutine, false}), 0x00003e0202600020ull);
    EXPECT_EQ(encode_gpfifo_entry(0, 0), 0u);
}

TEST(GpFifo, EncodeErrors)
{
    EXPECT_PT_ERROR(encode_gpfifo_entry(1ull << 40, 1), ErrorCode::FieldOverflow);
    EXPECT_PT_ERROR(encode_gpfifo_entry(0x1000, 1u << 21), ErrorCode::FieldOverflow);
    EXPECT_PT_ERROR(encode_gpfifo_entry(0x1002, 1), ErrorCode::MisalignedVa);
}

TEST(ClassTable, BuiltinLookups)
{
    const auto& t = ClassTable::builtin();
    ASSERT_TRUE(t.find_class(kAmpereDmaCopyB));
    EXPECT_EQ(t.find_class(kAmpereDmaCopyB)->name, "AMPERE_DMA_COPY_B");
    EXPECT_EQ(t.offset_of(kAmpereDmaCopyB, "LAUNCH_DMA"), 0x300u);
    EXPECT_EQ(t.offset_of(kAmpereComputeB, "LOAD_INLINE_DATA"), 0x1b4u);
    EXPECT_EQ(t.find_method(kAmpereDmaCopyB, 0x404)->name, "OFFSET_IN_LOWER");
    EXPECT_EQ(t.find_method(kAmpereDmaCopyB, 0x7fc), nullptr);
    EXPECT_PT_ERROR(t.offset_of(kAmpereDmaCopyB, "NOPE"), ErrorCode::TableParse);
}

TEST(ClassTable, ParseAndErrors)
{
    auto t = ClassTable::parse("# demo\n0x1234 class DEMO\n0x1234 0x10 FOO A:3:0:X=1,Y=2 B?:7:4\n");
    const MethodSpec* m = t.find_method(0x1234, 0x10);
    ASSERT_TRUE(m);
    ASSERT_EQ(m->fields.size(), 2u);
    EXPECT_EQ(m->fields[0].extract(0x52), 2u);
    EXPECT_EQ(*m->fields[0].label_for(2), "Y");
    EXPECT_TRUE(m->fields[1].elide_when_zero);

    for (const char* bad : {"0x1234 0x10 FOO\n", "0x1234 class A\n0x1234 0x11 FOO\n", "zz class A\n",
                            "0x1234 class A\n0x1234 0x10 FOO A:0:3\n", "0x1234 class\n",
                            "0x123456 class A\n"})
        EXPECT_PT_ERROR(ClassTable::parse(bad), ErrorCode::TableParse);
    EXPECT_PT_ERROR(ClassTable::load("/nonexistent/classes.tbl"), ErrorCode::Io);
}
