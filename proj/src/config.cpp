#include "pushtrace/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "pushtrace/error.hpp"

namespace pushtrace {

void SizeSweep::validate(std::string_view name) const
{
    if (start == 0 || end < start)
        throw Error(ErrorCode::Config, fmt::format("{}: need 0 < start <= end (got {}..{})", name, start, end));
    if ((step == 0) == (factor == 0))
        throw Error(ErrorCode::Config, fmt::format("{}: exactly one of step and factor must be set", name));
    if (factor == 1)
        throw Error(ErrorCode::Config, fmt::format("{}: factor must be at least 2", name));
}

void ScenarioConfig::validate() const
{
    driver.validate();
    cost.validate();
    legacy118.validate();
    modern130.validate();
    memcpy_exp.validate("sweep.exp");
    memcpy_linear.validate("sweep.linear");
    graph_lengths.validate("sweep.graph");
    if (graph_lengths.end > std::numeric_limits<std::uint32_t>::max())
        throw Error(ErrorCode::Config, "sweep.graph.end does not fit 32 bits");
    if (warmup_iters == 0 || test_iters == 0)
        throw Error(ErrorCode::Config, "sweep.warmup_iters and sweep.test_iters must be positive");
    if (threads < 0)
        throw Error(ErrorCode::Config, "sweep.threads must be non-negative");
}

namespace {

std::string_view trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v)
{
    std::uint64_t mult = 1;
    std::string_view digits = v;
    auto suffix = [&](std::string_view sfx, std::uint64_t m) {
        if (digits.size() > sfx.size() && digits.substr(digits.size() - sfx.size()) == sfx) {
            digits.remove_suffix(sfx.size());
            mult = m;
            return true;
        }
        return false;
    };
    if (!(v.starts_with("0x") || v.starts_with("0X")))
        suffix("KiB", 1ull << 10) || suffix("MiB", 1ull << 20) || suffix("GiB", 1ull << 30) ||
            suffix("K", 1ull << 10) || suffix("M", 1ull << 20) || suffix("G", 1ull << 30);
    int base = 10;
    if (digits.starts_with("0x") || digits.starts_with("0X")) {
        digits.remove_prefix(2);
        base = 16;
    }
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), out, base);
    if (digits.empty() || ec != std::errc{} || p != digits.data() + digits.size())
        throw Error(ErrorCode::Config, fmt::format("{}: '{}' is not an unsigned integer", key, v));
    if (out > std::numeric_limits<std::uint64_t>::max() / mult)
        throw Error(ErrorCode::Config, fmt::format("{}: '{}' overflows", key, v));
    return out * mult;
}

std::uint32_t parse_u32(std::string_view key, std::string_view v)
{
    std::uint64_t x = parse_u64(key, v);
    if (x > std::numeric_limits<std::uint32_t>::max())
        throw Error(ErrorCode::Config, fmt::format("{}: '{}' does not fit 32 bits", key, v));
    return static_cast<std::uint32_t>(x);
}

double parse_f64(std::string_view key, std::string_view v)
{
    std::string s(v);
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size())
        throw Error(ErrorCode::Config, fmt::format("{}: '{}' is not a number", key, v));
    return out;
}

struct Key {
    std::string name;
    std::function<void(ScenarioConfig&, std::string_view)> set;
    std::function<std::string(const ScenarioConfig&)> get;
};

template <typename T>
Key u64_key(std::string name, T ScenarioConfig::*outer, std::uint64_t T::*field)
{
    return Key{name,
               [=](ScenarioConfig& c, std::string_view v) { c.*outer.*field = parse_u64(name, v); },
               [=](const ScenarioConfig& c) { return std::to_string(c.*outer.*field); }};
}

template <typename T>
Key u32_key(std::string name, T ScenarioConfig::*outer, std::uint32_t T::*field)
{
    return Key{name,
               [=](ScenarioConfig& c, std::string_view v) { c.*outer.*field = parse_u32(name, v); },
               [=](const ScenarioConfig& c) { return std::to_string(c.*outer.*field); }};
}

template <typename T>
Key f64_key(std::string name, T ScenarioConfig::*outer, double T::*field)
{
    return Key{name,
               [=](ScenarioConfig& c, std::string_view v) { c.*outer.*field = parse_f64(name, v); },
               [=](const ScenarioConfig& c) { return fmt::format("{}", c.*outer.*field); }};
}

Key engine_key(std::string name, EngineKind e, int which)
{
    auto ref = [e](auto& c) -> auto& { return e == EngineKind::ComputeInline ? c.cost.inline_engine : c.cost.copy_engine; };
    return Key{name,
               [=](ScenarioConfig& c, std::string_view v) {
                   EngineCost& ec = ref(c);
                   if (which == 0)
                       ec.startup_ns = parse_f64(name, v);
                   else if (which == 1)
                       ec.sat_gibps = parse_f64(name, v);
                   else
                       ec.tick_ns = parse_u64(name, v);
               },
               [=](const ScenarioConfig& c) {
                   const EngineCost& ec = ref(c);
                   return which == 0 ? fmt::format("{}", ec.startup_ns)
                          : which == 1 ? fmt::format("{}", ec.sat_gibps)
                                       : std::to_string(ec.tick_ns);
               }};
}

void add_strategy_keys(std::vector<Key>& keys, const std::string& p, LaunchStrategy ScenarioConfig::*s)
{
    keys.push_back(u32_key(p + ".base_bytes", s, &LaunchStrategy::base_bytes));
    keys.push_back(u32_key(p + ".per_node_bytes", s, &LaunchStrategy::per_node_bytes));
    keys.push_back(u32_key(p + ".per_chunk_overhead_bytes", s, &LaunchStrategy::per_chunk_overhead_bytes));
    keys.push_back(u32_key(p + ".chunk_nodes", s, &LaunchStrategy::chunk_nodes));
    keys.push_back(f64_key(p + ".effective_write_bw_mibps", s, &LaunchStrategy::effective_write_bw_mibps));
    keys.push_back(f64_key(p + ".base_launch_ns", s, &LaunchStrategy::base_launch_ns));
}

void add_sweep_keys(std::vector<Key>& keys, const std::string& p, SizeSweep ScenarioConfig::*s)
{
    keys.push_back(u64_key(p + ".start", s, &SizeSweep::start));
    keys.push_back(u64_key(p + ".end", s, &SizeSweep::end));
    keys.push_back(u64_key(p + ".step", s, &SizeSweep::step));
    keys.push_back(u64_key(p + ".factor", s, &SizeSweep::factor));
}

Key scalar_u32(std::string name, std::uint32_t ScenarioConfig::*f)
{
    return Key{name, [=](ScenarioConfig& c, std::string_view v) { c.*f = parse_u32(name, v); },
               [=](const ScenarioConfig& c) { return std::to_string(c.*f); }};
}

const std::vector<Key>& keys()
{
    static const std::vector<Key> k = [] {
        std::vector<Key> out;
        out.push_back(u64_key("inline_switch_bytes", &ScenarioConfig::driver, &DriverConfig::inline_switch_bytes));
        out.push_back(u32_key("max_segment_dwords", &ScenarioConfig::driver, &DriverConfig::max_segment_dwords));
        out.push_back(u64_key("pushbuffer_bytes", &ScenarioConfig::driver, &DriverConfig::pushbuffer_bytes));
        out.push_back(u32_key("ring_len", &ScenarioConfig::driver, &DriverConfig::ring_len));
        out.push_back(u32_key("semaphore_slots", &ScenarioConfig::driver, &DriverConfig::semaphore_slots));
        out.push_back(engine_key("cost.inline.startup_ns", EngineKind::ComputeInline, 0));
        out.push_back(engine_key("cost.inline.sat_gibps", EngineKind::ComputeInline, 1));
        out.push_back(engine_key("cost.inline.tick_ns", EngineKind::ComputeInline, 2));
        out.push_back(engine_key("cost.copy.startup_ns", EngineKind::CopyDirect, 0));
        out.push_back(engine_key("cost.copy.sat_gibps", EngineKind::CopyDirect, 1));
        out.push_back(engine_key("cost.copy.tick_ns", EngineKind::CopyDirect, 2));
        out.push_back(u64_key("cost.inline_max_bytes", &ScenarioConfig::cost, &CostModel::inline_max_bytes));
        add_strategy_keys(out, "legacy118", &ScenarioConfig::legacy118);
        add_strategy_keys(out, "modern130", &ScenarioConfig::modern130);
        out.push_back(scalar_u32("graph.node_cost_ns", &ScenarioConfig::node_cost_ns));
        add_sweep_keys(out, "sweep.exp", &ScenarioConfig::memcpy_exp);
        add_sweep_keys(out, "sweep.linear", &ScenarioConfig::memcpy_linear);
        add_sweep_keys(out, "sweep.graph", &ScenarioConfig::graph_lengths);
        out.push_back(scalar_u32("sweep.warmup_iters", &ScenarioConfig::warmup_iters));
        out.push_back(scalar_u32("sweep.test_iters", &ScenarioConfig::test_iters));
        out.push_back(Key{"sweep.threads",
                          [](ScenarioConfig& c, std::string_view v) {
                              c.threads = static_cast<int>(parse_u32("sweep.threads", v));
                          },
                          [](const ScenarioConfig& c) { return std::to_string(c.threads); }});
        return out;
    }();
    return k;
}

} // namespace

ScenarioConfig ScenarioConfig::parse(std::string_view text)
{
    ScenarioConfig cfg;
    std::size_t lineno = 0;
    while (!text.empty()) {
        ++lineno;
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw Error(ErrorCode::Config, fmt::format("line {}: expected key = value", lineno));
        std::string_view key = trim(line.substr(0, eq));
        std::string_view value = trim(line.substr(eq + 1));
        bool found = false;
        for (const Key& k : keys()) {
            if (k.name == key) {
                k.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found)
            throw Error(ErrorCode::Config, fmt::format("line {}: unknown key '{}'", lineno, key));
    }
    cfg.validate();
    return cfg;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot open config '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string ScenarioConfig::describe() const
{
    std::string out;
    for (const Key& k : keys())
        out += fmt::format("{} = {}\n", k.name, k.get(*this));
    return out;
}

} // namespace pushtrace
