// pushtrace: decode pushbuffer dumps, run the memcpy/graph sweeps, replay
// captured traces and check the golden outputs.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pushtrace/capture.hpp"
#include "pushtrace/config.hpp"
#include "pushtrace/error.hpp"
#include "pushtrace/method_codec.hpp"
#include "pushtrace/scenario.hpp"
#include "pushtrace/seed.hpp"
#include "pushtrace/sweep.hpp"
#include "pushtrace/vmem.hpp"

#ifndef PUSHTRACE_GOLDEN_DIR
#define PUSHTRACE_GOLDEN_DIR ""
#endif

namespace fs = std::filesystem;
using namespace pushtrace;

namespace {

enum Exit { kOk = 0, kIo = 1, kDecode = 2, kInternal = 3 };

int exit_code_for(ErrorCode c)
{
    switch (c) {
    case ErrorCode::Io:
        return kIo;
    case ErrorCode::Config:
    case ErrorCode::TableParse:
    case ErrorCode::TruncatedStream:
    case ErrorCode::UnknownOpcode:
    case ErrorCode::FieldOverflow:
    case ErrorCode::MisalignedVa:
    case ErrorCode::Unaligned:
        return kDecode;
    default:
        return kInternal;
    }
}

class Output {
public:
    explicit Output(const std::string& path)
    {
        if (path.empty() || path == "-")
            return;
        file_.open(path);
        if (!file_)
            throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path));
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
    bool to_stdout() const { return !file_.is_open(); }

private:
    std::ofstream file_;
};

ScenarioConfig load_config(const std::string& path)
{
    return path.empty() ? ScenarioConfig{} : ScenarioConfig::load(path);
}

std::optional<ClassTable> load_table(const std::string& path)
{
    if (path.empty())
        return std::nullopt;
    return ClassTable::load(path);
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot read '{}'", p.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

int cmd_decode(const std::string& dump, VirtAddr va_base, const std::string& table_path, const std::string& out_path)
{
    auto table = load_table(table_path);
    const ClassTable& tbl = table ? *table : ClassTable::builtin();
    std::vector<std::uint32_t> words = read_dump_file(dump);
    if (!words.empty()) {
        // Stage the dump at its VA and read it back through the page table.
        AddressSpace mem;
        VirtAddr page = va_base / kPageSize * kPageSize;
        std::uint64_t span_len = (va_base - page) + words.size() * 4;
        mem.map(page, (span_len + kPageSize - 1) / kPageSize * kPageSize, DomainKind::HostRam, AllocTag::Pushbuffer);
        mem.write_dwords(va_base, words);
        words = mem.read_dwords(va_base, words.size());
    }
    Output out(out_path);
    out.stream() << fmt::format("Pushbuffer Entries count {} \n", words.size());
    out.stream() << render_pushbuffer(words, ClassBinding::defaults(), tbl);
    DecodedStream s = decode_stream_partial(words, ClassBinding::defaults(), tbl);
    if (s.error) {
        std::cerr << "pushtrace: " << s.error->what() << "\n";
        return exit_code_for(s.error->code());
    }
    return kOk;
}

int cmd_memcpy_sweep(const std::string& config, const std::string& out_path, bool serial)
{
    ScenarioConfig cfg = load_config(config);
    auto pts = memcpy_points(cfg);
    auto rows = serial ? memcpy_sweep_serial(cfg, pts) : memcpy_sweep_parallel(cfg, pts);
    Output out(out_path);
    write_memcpy_csv(out.stream(), rows);
    return kOk;
}

int cmd_graph_sweep(const std::string& config, const std::string& out_path, bool serial)
{
    ScenarioConfig cfg = load_config(config);
    auto pts = graph_points(cfg);
    auto rows = serial ? graph_sweep_serial(cfg, pts) : graph_sweep_parallel(cfg, pts);
    Output out(out_path);
    write_graph_csv(out.stream(), rows);
    // Summary lines start with '#', so they can trail the CSV on stdout.
    std::cout << graph_summary(rows);
    return kOk;
}

int cmd_replay(const std::string& trace, const std::string& table_path, const std::string& out_path)
{
    auto table = load_table(table_path);
    const ClassTable& tbl = table ? *table : ClassTable::builtin();
    std::ifstream in(trace);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot read '{}'", trace));
    std::vector<TraceRecord> records = read_trace(in);
    Output out(out_path);
    for (const auto& r : records)
        out.stream() << render_trace(r, ClassBinding::defaults(), tbl);
    return kOk;
}

int cmd_capture(const std::string& out_path)
{
    ListingResult r = run_listing_scenario();
    if (!out_path.empty()) {
        Output out(out_path);
        write_trace(out.stream(), r.records);
    }
    std::cout << r.rendered;
    return kOk;
}

int cmd_selftest(const std::string& golden_dir)
{
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, const std::string& detail = {}) {
        std::cout << fmt::format("selftest {:<28} {}{}\n", name, ok ? "ok" : "FAIL",
                                 detail.empty() ? "" : "  (" + detail + ")");
        failures += !ok;
    };

    ListingResult lr = run_listing_scenario();
    check("listing.capture", lr.records.size() == 2 && lr.records[1].ok() && lr.destination_matches);
    fs::path dir = golden_dir.empty() ? fs::path(PUSHTRACE_GOLDEN_DIR) : fs::path(golden_dir);
    if (!dir.empty() && fs::exists(dir / "listing1.txt"))
        check("listing.golden", read_file(dir / "listing1.txt") == lr.rendered, (dir / "listing1.txt").string());
    else
        check("listing.golden", golden_dir.empty(), "no golden file found");

    const std::uint64_t seed = seed_from_env();
    std::mt19937_64 rng(seed);
    bool hdr_ok = true, gp_ok = true;
    const MethodOp ops[] = {MethodOp::Inc, MethodOp::NonInc, MethodOp::Immediate, MethodOp::OneInc};
    for (int i = 0; i < 2000; ++i) {
        MethodHeader h{ops[rng() % 4], static_cast<std::uint16_t>(rng() & 0x1fff),
                       static_cast<std::uint8_t>(rng() & 7), static_cast<std::uint16_t>(rng() & 0x1fff)};
        hdr_ok = hdr_ok && decode_header(encode_header(h)) == h;
        VirtAddr va = rng() & ((1ull << 40) - 4);
        auto len = static_cast<std::uint32_t>(rng() & kMaxGpLengthDw);
        GpFifoEntry e = decode_gpfifo_entry(encode_gpfifo_entry(va, len));
        gp_ok = gp_ok && e.pb_va == va && e.length_dw == len;
    }
    check("codec.header_roundtrip", hdr_ok, fmt::format("seed {}", seed));
    check("codec.gpfifo_roundtrip", gp_ok, fmt::format("seed {}", seed));

    ScenarioConfig cfg;
    cfg.test_iters = 4;
    struct Ref {
        EngineKind e;
        std::uint64_t bytes;
        double raw_ns;
    };
    const Ref refs[] = {{EngineKind::ComputeInline, 8, 24.0},
                        {EngineKind::ComputeInline, 8192, 448.0},
                        {EngineKind::CopyDirect, 32768, 1900.0},
                        {EngineKind::CopyDirect, 512 * 1024, 22060.0}};
    for (const Ref& r : refs) {
        MemcpyRow row = run_memcpy_point(cfg, MemcpyPoint{SweepKind::Exponential, r.bytes, r.e});
        double rel = std::abs(row.latency_ns - r.raw_ns) / r.raw_ns;
        check(fmt::format("dma.{}.{}", r.e == EngineKind::ComputeInline ? "inline" : "copy", r.bytes),
              rel <= 0.05 && row.doorbells == 1, fmt::format("{:.2f} ns vs {:.2f} ns", row.latency_ns, r.raw_ns));
    }
    return failures ? kInternal : kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"GPU command-submission simulator and trace tooling"};
    app.require_subcommand(1);

    std::string config, out, table, golden, dump, trace;
    std::string va_base_text = "0x0";
    bool serial = false;

    auto* decode = app.add_subcommand("decode", "Decode a raw little-endian dword dump");
    decode->add_option("dump", dump, "Dump file")->required();
    decode->add_option("--va-base", va_base_text, "VA the dump is loaded at");
    decode->add_option("--table", table, "Class table file (default: built in)");
    decode->add_option("--out", out, "Output file (default: stdout)");

    auto* msweep = app.add_subcommand("memcpy-sweep", "Coalesced memcpy benchmarks across sizes and engines");
    msweep->add_option("--config", config, "Scenario config (key = value)");
    msweep->add_option("--out", out, "CSV output (default: stdout)");
    msweep->add_flag("--serial", serial, "Use the serial reference loop");

    auto* gsweep = app.add_subcommand("graph-sweep", "Graph launch sweep for both strategies");
    gsweep->add_option("--config", config, "Scenario config (key = value)");
    gsweep->add_option("--out", out, "CSV output (default: stdout)");
    gsweep->add_flag("--serial", serial, "Use the serial reference loop");

    auto* replay = app.add_subcommand("replay", "Render a JSON-lines trace");
    replay->add_option("trace", trace, "Trace file")->required();
    replay->add_option("--table", table, "Class table file (default: built in)");
    replay->add_option("--out", out, "Output file (default: stdout)");

    auto* capture = app.add_subcommand("capture", "Run the reference 64 MiB copy under capture");
    capture->add_option("--out", out, "Write the JSON-lines trace here");

    auto* selftest = app.add_subcommand("selftest", "Golden and property self checks");
    selftest->add_option("--golden", golden, "Directory holding listing1.txt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kDecode;
    }

    try {
        if (*decode) {
            std::size_t used = 0;
            VirtAddr va = std::stoull(va_base_text, &used, 0);
            if (used != va_base_text.size())
                throw Error(ErrorCode::Config, fmt::format("bad --va-base '{}'", va_base_text));
            return cmd_decode(dump, va, table, out);
        }
        if (*msweep)
            return cmd_memcpy_sweep(config, out, serial);
        if (*gsweep)
            return cmd_graph_sweep(config, out, serial);
        if (*replay)
            return cmd_replay(trace, table, out);
        if (*capture)
            return cmd_capture(out);
        if (*selftest)
            return cmd_selftest(golden);
    } catch (const Error& e) {
        std::cerr << "pushtrace: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::invalid_argument& e) {
        std::cerr << "pushtrace: " << e.what() << "\n";
        return kDecode;
    } catch (const std::exception& e) {
        std::cerr << "pushtrace: internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
