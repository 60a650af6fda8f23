#include "pushtrace/capture.hpp"

#include <algorithm>
#include <istream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace pushtrace {

namespace {

bool same_entry(const TraceEntry& a, const TraceEntry& b)
{
    return a.index == b.index && a.entry_va == b.entry_va && a.entry.raw == b.entry.raw && a.dwords == b.dwords;
}

void reconstruct_into(const AddressSpace& mem, const ChannelSnapshot& snap, std::uint32_t prev_put,
                      TraceRecord& rec)
{
    rec.channel_id = snap.channel_id;
    rec.channel_handle = snap.handle;
    rec.gp_get = snap.userd.gp_get;
    rec.gp_put = snap.userd.gp_put;
    rec.prev_put = prev_put;
    rec.gp_base = snap.ramfc.gp_base;
    rec.ring_len = snap.ramfc.gp_ring_len;

    const std::uint32_t pending = rec.gp_put - prev_put;
    if (pending > rec.ring_len)
        throw Error(ErrorCode::BadState, fmt::format("{} new entries exceed the ring of {}; slots were overwritten",
                                                     pending, rec.ring_len));
    for (std::uint32_t idx = prev_put; idx != rec.gp_put; ++idx) {
        TraceEntry e;
        e.index = idx;
        e.entry_va = rec.gp_base + std::uint64_t{idx % rec.ring_len} * kGpEntrySize;
        if (!mem.range_mapped(e.entry_va, kGpEntrySize))
            throw Error(ErrorCode::PageFault, fmt::format("GPFIFO slot 0x{:x} not mapped", e.entry_va));
        std::uint64_t raw = 0;
        mem.gpu_read(e.entry_va, std::as_writable_bytes(std::span{&raw, 1}));
        e.entry = decode_gpfifo_entry(raw);
        if (!mem.range_mapped(e.entry.pb_va, e.entry.footprint_bytes()))
            throw Error(ErrorCode::PageFault, fmt::format("pushbuffer segment 0x{:x} +0x{:x} not mapped",
                                                          e.entry.pb_va, e.entry.footprint_bytes()));
        e.dwords = mem.read_dwords(e.entry.pb_va, e.entry.length_dw);
        rec.footprint_bytes += e.entry.footprint_bytes();
        rec.entries.push_back(std::move(e));
        // Only checks that the segment is well formed.
        decode_stream(rec.entries.back().dwords);
    }
}

std::string hex(std::uint64_t v)
{
    return fmt::format("0x{:x}", v);
}

std::uint64_t parse_hex(const nlohmann::json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_string())
        throw Error(ErrorCode::TableParse, fmt::format("trace field '{}' is not a hex string", key));
    const std::string& s = v.get_ref<const std::string&>();
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
        throw Error(ErrorCode::TableParse, fmt::format("trace field '{}' = '{}' is not a hex string", key, s));
    std::size_t used = 0;
    std::uint64_t out = std::stoull(s.substr(2), &used, 16);
    if (used != s.size() - 2)
        throw Error(ErrorCode::TableParse, fmt::format("trace field '{}' = '{}' is not a hex string", key, s));
    return out;
}

std::optional<ErrorCode> error_code_from(const std::string& name)
{
    for (int c = 0; c <= static_cast<int>(ErrorCode::Io); ++c)
        if (name == to_string(static_cast<ErrorCode>(c)))
            return static_cast<ErrorCode>(c);
    throw Error(ErrorCode::TableParse, fmt::format("unknown error code '{}' in trace", name));
}

} // namespace

bool operator==(const TraceRecord& a, const TraceRecord& b)
{
    if (a.entries.size() != b.entries.size())
        return false;
    for (std::size_t i = 0; i < a.entries.size(); ++i)
        if (!same_entry(a.entries[i], b.entries[i]))
            return false;
    return a.seq == b.seq && a.pid == b.pid && a.channel_id == b.channel_id && a.channel_handle == b.channel_handle &&
           a.doorbell_value == b.doorbell_value && a.gp_get == b.gp_get && a.gp_put == b.gp_put &&
           a.prev_put == b.prev_put && a.gp_base == b.gp_base && a.ring_len == b.ring_len &&
           a.footprint_bytes == b.footprint_bytes && a.error_code == b.error_code && a.error == b.error;
}

std::vector<DecodedMethod> TraceRecord::decoded(const ClassBinding& bindings, const ClassTable& table) const
{
    std::vector<DecodedMethod> out;
    for (const auto& e : entries) {
        DecodedStream s = decode_stream_partial(e.dwords, bindings, table);
        out.insert(out.end(), s.methods.begin(), s.methods.end());
    }
    return out;
}

TraceRecord reconstruct(const AddressSpace& mem, const ChannelSnapshot& snap, std::uint32_t prev_put)
{
    TraceRecord rec;
    rec.doorbell_value = snap.channel_id;
    reconstruct_into(mem, snap, prev_put, rec);
    return rec;
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_pushbuffer(std::span<const std::uint32_t> dwords, const ClassBinding& bindings,
                              const ClassTable& table)
{
    DecodedStream s = decode_stream_partial(dwords, bindings, table);
    std::string out;
    auto method_line = [&](const DecodedMethod& m) {
        if (m.class_id && m.cls)
            out += fmt::format("    SUBCH{} {}(0x{:x}) {}(0x{:x}) data=0x{:08x}\n", m.subchannel, m.class_name(),
                               *m.class_id, m.method_name(), m.byte_offset, m.data);
        else if (m.class_id)
            out += fmt::format("    SUBCH{} CLASS_0x{:x} {}(0x{:x}) data=0x{:08x}\n", m.subchannel, *m.class_id,
                               m.method_name(), m.byte_offset, m.data);
        else
            out += fmt::format("    SUBCH{} {}(0x{:x}) data=0x{:08x}\n", m.subchannel, m.method_name(),
                               m.byte_offset, m.data);
        for (const DecodedField& f : m.fields()) {
            if (f.elide_when_zero && f.value == 0)
                continue;
            if (f.label)
                out += fmt::format("        {}={} ({})\n", f.name, f.value, *f.label);
            else
                out += fmt::format("        {}={}\n", f.name, f.value);
        }
    };
    for (std::size_t i = 0; i < s.words.size(); ++i) {
        const StreamWord& w = s.words[i];
        out += fmt::format("PB entry[{}] = 0x{:08x}\n", i, w.raw);
        if (w.header) {
            const MethodHeader& h = *w.header;
            out += fmt::format("    PB HDR {:<6} count={} subch={} addr_dw=0x{:x} (byte 0x{:x})\n", to_string(h.op),
                               h.count, h.subchannel, h.addr_dw, h.byte_offset());
        }
        if (w.method)
            method_line(s.methods[*w.method]);
    }
    if (s.error) {
        if (s.words.size() < dwords.size())
            out += fmt::format("PB entry[{}] = 0x{:08x}\n", s.words.size(), dwords[s.words.size()]);
        out += fmt::format("    DECODE STOPPED: {}\n", s.error->what());
    }
    return out;
}

std::string render_trace(const TraceRecord& rec, const ClassBinding& bindings, const ClassTable& table)
{
    std::string out = fmt::format("Doorbell hit, pid {}\n", rec.pid);
    out += fmt::format("value 0x{:x}, Kernel Channel 0x{:016X}\n", rec.doorbell_value, rec.channel_handle);
    GpfifoSummary sum{rec.gp_get, rec.gp_put, rec.gp_base, std::nullopt, std::nullopt};
    if (!rec.entries.empty()) {
        sum.newest_entry_va = rec.entries.back().entry_va;
        sum.newest_entry_raw = rec.entries.back().entry.raw;
    }
    out += render_gpfifo_summary(sum);
    const bool several = rec.entries.size() > 1;
    for (const TraceEntry& e : rec.entries) {
        if (several)
            out += fmt::format("GP_ENTRY[{}]  (VA)      : 0x{:x} = 0x{:016x}\n", e.index, e.entry_va, e.entry.raw);
        out += fmt::format("Pushbuffer Entries count {} \n", e.entry.length_dw);
        out += render_pushbuffer(e.dwords, bindings, table);
    }
    if (!rec.ok())
        out += fmt::format("RECONSTRUCT ERROR: {}\n", rec.error);
    return out;
}

// ---------------------------------------------------------------------------
// JSON lines

std::string to_json_line(const TraceRecord& rec)
{
    nlohmann::ordered_json j;
    j["seq"] = hex(rec.seq);
    j["pid"] = hex(rec.pid);
    j["channel_id"] = hex(rec.channel_id);
    j["channel_handle"] = hex(rec.channel_handle);
    j["doorbell_value"] = hex(rec.doorbell_value);
    j["gp_get"] = hex(rec.gp_get);
    j["gp_put"] = hex(rec.gp_put);
    j["prev_put"] = hex(rec.prev_put);
    j["gp_base"] = hex(rec.gp_base);
    j["ring_len"] = hex(rec.ring_len);
    j["footprint_bytes"] = hex(rec.footprint_bytes);
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& e : rec.entries) {
        nlohmann::ordered_json je;
        je["index"] = hex(e.index);
        je["entry_va"] = hex(e.entry_va);
        je["raw"] = hex(e.entry.raw);
        nlohmann::ordered_json dw = nlohmann::ordered_json::array();
        for (std::uint32_t w : e.dwords)
            dw.push_back(fmt::format("0x{:08x}", w));
        je["dwords"] = std::move(dw);
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    j["error_code"] = rec.error_code ? nlohmann::ordered_json(to_string(*rec.error_code)) : nlohmann::ordered_json();
    j["error"] = rec.error;
    return j.dump();
}

TraceRecord from_json_line(std::string_view line)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::TableParse, fmt::format("malformed trace line: {}", e.what()));
    }
    try {
        TraceRecord r;
        r.seq = parse_hex(j, "seq");
        r.pid = parse_hex(j, "pid");
        r.channel_id = static_cast<std::uint32_t>(parse_hex(j, "channel_id"));
        r.channel_handle = parse_hex(j, "channel_handle");
        r.doorbell_value = static_cast<std::uint32_t>(parse_hex(j, "doorbell_value"));
        r.gp_get = static_cast<std::uint32_t>(parse_hex(j, "gp_get"));
        r.gp_put = static_cast<std::uint32_t>(parse_hex(j, "gp_put"));
        r.prev_put = static_cast<std::uint32_t>(parse_hex(j, "prev_put"));
        r.gp_base = parse_hex(j, "gp_base");
        r.ring_len = static_cast<std::uint32_t>(parse_hex(j, "ring_len"));
        r.footprint_bytes = parse_hex(j, "footprint_bytes");
        for (const auto& je : j.at("entries")) {
            TraceEntry e;
            e.index = static_cast<std::uint32_t>(parse_hex(je, "index"));
            e.entry_va = parse_hex(je, "entry_va");
            e.entry = decode_gpfifo_entry(parse_hex(je, "raw"));
            const auto& dw = je.at("dwords");
            for (std::size_t i = 0; i < dw.size(); ++i) {
                nlohmann::json wrap{{"w", dw[i]}};
                e.dwords.push_back(static_cast<std::uint32_t>(parse_hex(wrap, "w")));
            }
            r.entries.push_back(std::move(e));
        }
        if (!j.at("error_code").is_null())
            r.error_code = error_code_from(j.at("error_code").get<std::string>());
        r.error = j.at("error").get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::TableParse, fmt::format("malformed trace record: {}", e.what()));
    } catch (const std::logic_error& e) {
        throw Error(ErrorCode::TableParse, fmt::format("malformed trace number: {}", e.what()));
    }
}

std::vector<TraceRecord> read_trace(std::istream& in)
{
    std::vector<TraceRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        out.push_back(from_json_line(line));
    }
    return out;
}

void write_trace(std::ostream& out, const std::vector<TraceRecord>& records)
{
    for (const auto& r : records)
        out << to_json_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// Capture

Capture::Capture(ChannelTable& channels, CaptureOptions opts)
    : channels_(channels), opts_(opts)
{
}

Capture::~Capture()
{
    if (installed_)
        uninstall();
}

void Capture::install()
{
    channels_.install_hook([this](const ChannelContext* ch, std::uint32_t value) { on_doorbell(ch, value); });
    installed_ = true;
}

void Capture::uninstall()
{
    if (!installed_)
        return;
    channels_.remove_hook();
    installed_ = false;
}

void Capture::set_callback(RecordCallback cb)
{
    std::lock_guard lock(mutex_);
    callback_ = std::move(cb);
}

std::vector<TraceRecord> Capture::records() const
{
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t Capture::record_count() const
{
    std::lock_guard lock(mutex_);
    return records_.size();
}

void Capture::clear()
{
    std::lock_guard lock(mutex_);
    records_.clear();
}

void Capture::on_doorbell(const ChannelContext* ch, std::uint32_t value)
{
    TraceRecord rec;
    rec.pid = opts_.pid;
    rec.doorbell_value = value;
    rec.channel_id = value;

    std::uint32_t prev = 0;
    std::optional<ChannelSnapshot> snap;
    if (ch) {
        snap = ch->snapshot();
        std::lock_guard lock(mutex_);
        auto it = prev_put_.find(ch->id());
        if (it != prev_put_.end())
            prev = it->second;
        else
            prev = snap->pbdma ? snap->pbdma->gp_put : snap->ramfc.gp_put;
    }

    if (!snap) {
        rec.error_code = ErrorCode::NoSuchChannel;
        rec.error = fmt::format("doorbell value 0x{:x} names no channel", value);
    } else {
        try {
            reconstruct_into(channels_.memory(), *snap, prev, rec);
        } catch (const Error& e) {
            rec.error_code = e.code();
            rec.error = e.what();
        }
    }

    RecordCallback cb;
    {
        std::lock_guard lock(mutex_);
        rec.seq = next_seq_++;
        if (snap)
            prev_put_[snap->channel_id] = snap->userd.gp_put;
        records_.push_back(rec);
        cb = callback_;
    }
    if (cb)
        cb(rec);
}

// ---------------------------------------------------------------------------
// Analysis

FitResult fit_bandwidth(std::span<const Sample> samples)
{
    std::size_t n = samples.size();
    bool distinct = false;
    for (std::size_t i = 1; i < n && !distinct; ++i)
        distinct = samples[i].bytes != samples[0].bytes;
    if (!distinct)
        throw Error(ErrorCode::DegenerateInput, "bandwidth fit needs at least two distinct byte values");

    double mx = 0, my = 0;
    for (const auto& s : samples) {
        mx += s.bytes;
        my += s.ns;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& s : samples) {
        double dx = s.bytes - mx, dy = s.ns - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    FitResult f;
    f.samples = n;
    f.slope_ns_per_byte = sxy / sxx;
    f.intercept_ns = my - f.slope_ns_per_byte * mx;
    f.r2 = syy == 0 ? 1.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
    if (f.slope_ns_per_byte <= 0)
        throw Error(ErrorCode::DegenerateInput, "launch time does not grow with emitted bytes");
    f.bandwidth_mibps = (1.0 / f.slope_ns_per_byte) * 1e9 / 1048576.0;
    return f;
}

double gap_percent(double t_observed_ns, double t_raw_ns)
{
    if (!(t_raw_ns > 0) || !(t_observed_ns >= t_raw_ns))
        throw Error(ErrorCode::InvalidOrder,
                    fmt::format("gap needs observed >= raw > 0 (observed {}, raw {})", t_observed_ns, t_raw_ns));
    return 100.0 * (t_observed_ns - t_raw_ns) / t_observed_ns;
}

} // namespace pushtrace
