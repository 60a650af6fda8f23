#include "pushtrace/method_codec.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace pushtrace {

namespace detail {
extern const std::string_view kBuiltinClassTable;
}

const char* to_string(MethodOp op) noexcept
{
    switch (op) {
    case MethodOp::Inc: return "INC";
    case MethodOp::NonInc: return "NON_INC";
    case MethodOp::Immediate: return "IMMD";
    case MethodOp::OneInc: return "ONE_INC";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// headers

MethodHeader decode_header(std::uint32_t word)
{
    std::uint32_t op = word >> 29;
    switch (op) {
    case 1:
    case 3:
    case 4:
    case 5:
        break;
    default:
        throw Error(ErrorCode::UnknownOpcode, fmt::format("header 0x{:08x} has op-code {}", word, op));
    }
    MethodHeader h;
    h.op = static_cast<MethodOp>(op);
    h.count = static_cast<std::uint16_t>((word >> 16) & 0x1fff);
    h.subchannel = static_cast<std::uint8_t>((word >> 13) & 0x7);
    h.addr_dw = static_cast<std::uint16_t>(word & 0x1fff);
    return h;
}

std::uint32_t encode_header(const MethodHeader& h)
{
    if (h.count > kMaxMethodCount || h.addr_dw > kMaxMethodAddrDw || h.subchannel > 7)
        throw Error(ErrorCode::FieldOverflow,
                    fmt::format("header fields count=0x{:x} subch={} addr_dw=0x{:x} out of range",
                                h.count, h.subchannel, h.addr_dw));
    switch (h.op) {
    case MethodOp::Inc:
    case MethodOp::NonInc:
    case MethodOp::Immediate:
    case MethodOp::OneInc:
        break;
    default:
        throw Error(ErrorCode::UnknownOpcode, "unknown op");
    }
    return (static_cast<std::uint32_t>(h.op) << 29) | (std::uint32_t{h.count} << 16) |
           (std::uint32_t{h.subchannel} << 13) | h.addr_dw;
}

// ---------------------------------------------------------------------------
// tables

std::uint32_t FieldSpec::mask() const noexcept
{
    unsigned width = hi - lo + 1;
    std::uint32_t base = width >= 32 ? ~0u : ((1u << width) - 1);
    return base << lo;
}

const std::string* FieldSpec::label_for(std::uint32_t value) const noexcept
{
    for (const auto& e : enums) {
        if (e.value == value)
            return &e.label;
    }
    return nullptr;
}

namespace {

std::uint32_t parse_number(std::string_view tok, std::size_t line_no)
{
    int base = 10;
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) {
        tok.remove_prefix(2);
        base = 16;
    }
    std::uint32_t value = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value, base);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw Error(ErrorCode::TableParse, fmt::format("line {}: bad number '{}'", line_no, tok));
    return value;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

FieldSpec parse_field(std::string_view tok, std::size_t line_no)
{
    auto parts = split(tok, ':');
    if (parts.size() < 3 || parts.size() > 4)
        throw Error(ErrorCode::TableParse, fmt::format("line {}: bad field '{}'", line_no, tok));
    FieldSpec f;
    std::string_view name = parts[0];
    if (!name.empty() && name.back() == '?') {
        f.elide_when_zero = true;
        name.remove_suffix(1);
    }
    if (name.empty())
        throw Error(ErrorCode::TableParse, fmt::format("line {}: empty field name", line_no));
    f.name = std::string(name);
    f.hi = parse_number(parts[1], line_no);
    f.lo = parse_number(parts[2], line_no);
    if (f.hi > 31 || f.lo > f.hi)
        throw Error(ErrorCode::TableParse, fmt::format("line {}: bad bit range in '{}'", line_no, tok));
    if (parts.size() == 4) {
        for (auto item : split(parts[3], ',')) {
            auto eq = item.find('=');
            if (eq == std::string_view::npos || eq == 0)
                throw Error(ErrorCode::TableParse, fmt::format("line {}: bad enum '{}'", line_no, item));
            f.enums.push_back(FieldEnum{parse_number(item.substr(eq + 1), line_no), std::string(item.substr(0, eq))});
        }
    }
    return f;
}

} // namespace

ClassTable ClassTable::parse(std::string_view text)
{
    ClassTable table;
    std::size_t line_no = 0;
    for (auto line : split(text, '\n')) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        std::vector<std::string_view> toks;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
                ++i;
            std::size_t start = i;
            while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r')
                ++i;
            if (i > start)
                toks.push_back(line.substr(start, i - start));
        }
        if (toks.empty())
            continue;
        if (toks.size() < 3)
            throw Error(ErrorCode::TableParse, fmt::format("line {}: expected at least 3 tokens", line_no));

        std::uint32_t class_id = parse_number(toks[0], line_no);
        if (class_id > 0xffff)
            throw Error(ErrorCode::TableParse, fmt::format("line {}: class id too wide", line_no));
        if (toks[1] == "class") {
            if (toks.size() != 3)
                throw Error(ErrorCode::TableParse, fmt::format("line {}: class line takes one name", line_no));
            auto& cls = table.classes_[static_cast<std::uint16_t>(class_id)];
            cls.class_id = static_cast<std::uint16_t>(class_id);
            cls.name = std::string(toks[2]);
            continue;
        }
        auto it = table.classes_.find(static_cast<std::uint16_t>(class_id));
        if (it == table.classes_.end())
            throw Error(ErrorCode::TableParse,
                        fmt::format("line {}: class 0x{:x} used before its class line", line_no, class_id));
        MethodSpec m;
        m.byte_offset = parse_number(toks[1], line_no);
        if (m.byte_offset % 4 != 0 || m.byte_offset / 4 > kMaxMethodAddrDw)
            throw Error(ErrorCode::TableParse, fmt::format("line {}: bad method offset", line_no));
        m.name = std::string(toks[2]);
        for (std::size_t t = 3; t < toks.size(); ++t)
            m.fields.push_back(parse_field(toks[t], line_no));
        it->second.methods[m.byte_offset] = std::move(m);
    }
    return table;
}

ClassTable ClassTable::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot open table {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const ClassTable& ClassTable::builtin()
{
    static const ClassTable table = parse(detail::kBuiltinClassTable);
    return table;
}

const ClassSpec* ClassTable::find_class(std::uint16_t class_id) const
{
    auto it = classes_.find(class_id);
    return it == classes_.end() ? nullptr : &it->second;
}

const MethodSpec* ClassTable::find_method(std::uint16_t class_id, std::uint32_t byte_offset) const
{
    const ClassSpec* cls = find_class(class_id);
    if (!cls)
        return nullptr;
    auto it = cls->methods.find(byte_offset);
    return it == cls->methods.end() ? nullptr : &it->second;
}

std::uint32_t ClassTable::offset_of(std::uint16_t class_id, std::string_view method_name) const
{
    if (const ClassSpec* cls = find_class(class_id)) {
        for (const auto& [off, m] : cls->methods) {
            if (m.name == method_name)
                return off;
        }
    }
    throw Error(ErrorCode::TableParse, fmt::format("class 0x{:x} has no method {}", class_id, method_name));
}

ClassBinding ClassBinding::defaults()
{
    ClassBinding b;
    b.bind(kCopySubchannel, kAmpereDmaCopyB);
    b.bind(kComputeSubchannel, kAmpereComputeB);
    return b;
}

// ---------------------------------------------------------------------------
// decode

std::vector<DecodedField> decode_fields(const MethodSpec& spec, std::uint32_t data)
{
    std::vector<DecodedField> out;
    std::uint32_t covered = 0;
    for (const auto& f : spec.fields) {
        std::uint32_t v = f.extract(data);
        covered |= f.mask();
        DecodedField df{f.name, v, std::nullopt, f.elide_when_zero};
        if (const std::string* label = f.label_for(v))
            df.label = *label;
        out.push_back(std::move(df));
    }
    if (!spec.fields.empty() && (data & ~covered) != 0)
        out.push_back(DecodedField{"UNKNOWN_BITS", data & ~covered, std::nullopt, false});
    return out;
}

std::string DecodedMethod::class_name() const
{
    return cls ? cls->name : std::string{};
}

std::string DecodedMethod::method_name() const
{
    return spec ? spec->name : fmt::format("METHOD_0x{:x}", byte_offset);
}

std::vector<DecodedField> DecodedMethod::fields() const
{
    return spec ? decode_fields(*spec, data) : std::vector<DecodedField>{};
}

DecodedStream decode_stream_partial(std::span<const std::uint32_t> dwords,
                                    const ClassBinding& bindings,
                                    const ClassTable& table)
{
    DecodedStream out;
    out.words.reserve(dwords.size());
    out.methods.reserve(dwords.size());

    auto emit = [&](const MethodHeader& h, std::size_t hdr_idx, std::size_t data_idx,
                    std::uint32_t byte_offset, std::uint32_t data) {
        DecodedMethod m;
        m.op = h.op;
        m.subchannel = h.subchannel;
        m.byte_offset = byte_offset;
        m.data = data;
        m.header_index = hdr_idx;
        m.data_index = data_idx;
        m.class_id = bindings.class_for(h.subchannel);
        if (m.class_id) {
            m.cls = table.find_class(*m.class_id);
            m.spec = table.find_method(*m.class_id, byte_offset);
        }
        out.methods.push_back(m);
        return out.methods.size() - 1;
    };

    std::size_t i = 0;
    while (i < dwords.size()) {
        MethodHeader h;
        try {
            h = decode_header(dwords[i]);
        } catch (const Error& e) {
            out.error = e;
            return out;
        }
        std::size_t hdr_idx = i;
        out.words.push_back(StreamWord{dwords[i], h, std::nullopt});
        ++i;

        if (h.op == MethodOp::Immediate) {
            out.words.back().method = emit(h, hdr_idx, hdr_idx, h.byte_offset(), h.count);
            continue;
        }
        std::size_t available = dwords.size() - i;
        std::size_t n = std::min<std::size_t>(h.count, available);
        for (std::size_t k = 0; k < n; ++k) {
            std::uint32_t off = h.byte_offset();
            if (h.op == MethodOp::Inc)
                off += static_cast<std::uint32_t>(4 * k);
            else if (h.op == MethodOp::OneInc && k > 0)
                off += 4;
            out.words.push_back(StreamWord{dwords[i], std::nullopt, emit(h, hdr_idx, i, off, dwords[i])});
            ++i;
        }
        if (n < h.count) {
            out.error = Error(ErrorCode::TruncatedStream,
                              fmt::format("header at dword {} announces {} payload dwords, {} available",
                                          hdr_idx, h.count, available));
            return out;
        }
    }
    return out;
}

std::vector<DecodedMethod> decode_stream(std::span<const std::uint32_t> dwords,
                                         const ClassBinding& bindings,
                                         const ClassTable& table)
{
    DecodedStream s = decode_stream_partial(dwords, bindings, table);
    if (s.error)
        throw *s.error;
    return std::move(s.methods);
}

// ---------------------------------------------------------------------------
// LAUNCH_DMA

namespace {
constexpr std::uint32_t kCopyLaunchKnownMask = 0x3u | (1u << 2) | (0x3u << 3) | (1u << 7) | (1u << 8) |
                                               (1u << 9) | (1u << 12) | (1u << 13);
}

CopyLaunchDma CopyLaunchDma::decode(std::uint32_t data) noexcept
{
    CopyLaunchDma f;
    f.data_transfer_type = static_cast<std::uint8_t>(data & 0x3);
    f.flush_enable = (data >> 2) & 1;
    f.semaphore_type = static_cast<std::uint8_t>((data >> 3) & 0x3);
    f.src_pitch = (data >> 7) & 1;
    f.dst_pitch = (data >> 8) & 1;
    f.multi_line = (data >> 9) & 1;
    f.src_physical = (data >> 12) & 1;
    f.dst_physical = (data >> 13) & 1;
    f.other_bits = data & ~kCopyLaunchKnownMask;
    return f;
}

std::uint32_t CopyLaunchDma::encode() const noexcept
{
    return (std::uint32_t{data_transfer_type} & 0x3) | (std::uint32_t{flush_enable} << 2) |
           ((std::uint32_t{semaphore_type} & 0x3) << 3) | (std::uint32_t{src_pitch} << 7) |
           (std::uint32_t{dst_pitch} << 8) | (std::uint32_t{multi_line} << 9) |
           (std::uint32_t{src_physical} << 12) | (std::uint32_t{dst_physical} << 13) |
           (other_bits & ~kCopyLaunchKnownMask);
}

std::vector<DecodedField> decode_launch_dma(std::uint32_t data)
{
    const ClassTable& table = ClassTable::builtin();
    const MethodSpec* spec = table.find_method(kAmpereDmaCopyB, table.offset_of(kAmpereDmaCopyB, "LAUNCH_DMA"));
    return decode_fields(*spec, data);
}

// ---------------------------------------------------------------------------
// GPFIFO entries

GpFifoEntry decode_gpfifo_entry(std::uint64_t raw) noexcept
{
    GpFifoEntry e;
    e.raw = raw;
    e.pb_va = (raw & 0xfffffffcull) | (((raw >> 32) & 0xffull) << 32);
    e.flags.priv = (raw >> 40) & 1;
    e.flags.level = static_cast<GpEntryLevel>((raw >> 41) & 1);
    e.length_dw = static_cast<std::uint32_t>((raw >> 42) & kMaxGpLengthDw);
    e.flags.sync = (raw >> 63) & 1;
    return e;
}

std::uint64_t encode_gpfifo_entry(VirtAddr pb_va, std::uint32_t length_dw, GpEntryFlags flags)
{
    if (pb_va >> kDescriptorVaBits)
        throw Error(ErrorCode::FieldOverflow, fmt::format("pushbuffer va 0x{:x} wider than 40 bits", pb_va));
    if (length_dw > kMaxGpLengthDw)
        throw Error(ErrorCode::FieldOverflow, fmt::format("segment length {} dwords exceeds 21 bits", length_dw));
    if (pb_va & 3)
        throw Error(ErrorCode::MisalignedVa, fmt::format("pushbuffer va 0x{:x} not dword aligned", pb_va));
    return (pb_va & 0xfffffffcull) | (((pb_va >> 32) & 0xffull) << 32) |
           (std::uint64_t{flags.priv} << 40) | (std::uint64_t{flags.level == GpEntryLevel::Subroutine} << 41) |
           (std::uint64_t{length_dw} << 42) | (std::uint64_t{flags.sync} << 63);
}

// ---------------------------------------------------------------------------
// builder

void PushbufferBuilder::group(MethodOp op, std::uint8_t subch, std::uint32_t byte_offset,
                              std::span<const std::uint32_t> data)
{
    if (byte_offset % 4 != 0)
        throw Error(ErrorCode::MisalignedVa, fmt::format("method offset 0x{:x} not dword aligned", byte_offset));
    std::uint32_t addr_dw = byte_offset / 4;
    std::size_t done = 0;
    while (done < data.size()) {
        std::size_t n = std::min<std::size_t>(data.size() - done, kMaxMethodCount);
        MethodOp this_op = op;
        std::uint32_t this_addr = addr_dw;
        if (op == MethodOp::Inc) {
            this_addr = addr_dw + static_cast<std::uint32_t>(done);
        } else if (op == MethodOp::OneInc && done > 0) {
            this_op = MethodOp::NonInc;
            this_addr = addr_dw + 1;
        }
        if (this_addr > kMaxMethodAddrDw)
            throw Error(ErrorCode::FieldOverflow, "method address overflows 13 bits");
        words_.push_back(encode_header(MethodHeader{this_op, static_cast<std::uint16_t>(n), subch,
                                                    static_cast<std::uint16_t>(this_addr)}));
        words_.insert(words_.end(), data.begin() + done, data.begin() + done + n);
        done += n;
    }
}

PushbufferBuilder& PushbufferBuilder::inc(std::uint8_t subch, std::uint32_t byte_offset,
                                          std::span<const std::uint32_t> data)
{
    group(MethodOp::Inc, subch, byte_offset, data);
    return *this;
}

PushbufferBuilder& PushbufferBuilder::non_inc(std::uint8_t subch, std::uint32_t byte_offset,
                                              std::span<const std::uint32_t> data)
{
    group(MethodOp::NonInc, subch, byte_offset, data);
    return *this;
}

PushbufferBuilder& PushbufferBuilder::one_inc(std::uint8_t subch, std::uint32_t byte_offset,
                                              std::span<const std::uint32_t> data)
{
    group(MethodOp::OneInc, subch, byte_offset, data);
    return *this;
}

PushbufferBuilder& PushbufferBuilder::immediate(std::uint8_t subch, std::uint32_t byte_offset, std::uint16_t data)
{
    if (byte_offset % 4 != 0)
        throw Error(ErrorCode::MisalignedVa, fmt::format("method offset 0x{:x} not dword aligned", byte_offset));
    words_.push_back(encode_header(
        MethodHeader{MethodOp::Immediate, data, subch, static_cast<std::uint16_t>(byte_offset / 4)}));
    return *this;
}

PushbufferBuilder& PushbufferBuilder::append(std::span<const std::uint32_t> words)
{
    words_.insert(words_.end(), words.begin(), words.end());
    return *this;
}

} // namespace pushtrace
