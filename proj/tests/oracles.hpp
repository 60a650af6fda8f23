#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the library; they re-derive each format from its bit layout.

#include <cstdint>
#include <optional>
#include <tuple>
#include <vector>

namespace oracle {

struct Header {
    unsigned op, count, subch, addr_dw;
};

inline Header split_header(std::uint32_t w)
{
    return Header{w >> 29, (w >> 16) & 0x1fff, (w >> 13) & 7, w & 0x1fff};
}

inline std::uint32_t join_header(unsigned op, unsigned count, unsigned subch, unsigned addr_dw)
{
    return (op << 29) | (count << 16) | (subch << 13) | addr_dw;
}

inline std::uint64_t pack_gpfifo(std::uint64_t va, std::uint32_t len_dw, bool priv = false, bool level = false,
                                 bool sync = false)
{
    std::uint64_t lo = va & 0xfffffffcull;
    std::uint64_t hi = ((va >> 32) & 0xff) | (std::uint64_t{priv} << 8) | (std::uint64_t{level} << 9) |
                       (std::uint64_t{len_dw} << 10) | (std::uint64_t{sync} << 31);
    return (hi << 32) | lo;
}

struct Method {
    unsigned subch;
    std::uint32_t offset;
    std::uint32_t data;
    bool operator==(const Method&) const = default;
    bool operator<(const Method& o) const
    {
        return std::tie(subch, offset, data) < std::tie(o.subch, o.offset, o.data);
    }
};

/// One dword at a time: either a header opens a group or a payload word is
/// consumed by the open group. Returns nullopt on truncation or a bad op.
inline std::optional<std::vector<Method>> interpret(const std::vector<std::uint32_t>& words)
{
    std::vector<Method> out;
    unsigned op = 0, subch = 0, remaining = 0, seen = 0;
    std::uint32_t base = 0;
    for (std::uint32_t w : words) {
        if (remaining == 0) {
            Header h = split_header(w);
            if (h.op == 4) {
                out.push_back({h.subch, h.addr_dw * 4, h.count});
                continue;
            }
            if (h.op != 1 && h.op != 3 && h.op != 5)
                return std::nullopt;
            op = h.op;
            subch = h.subch;
            base = h.addr_dw * 4;
            remaining = h.count;
            seen = 0;
            continue;
        }
        std::uint32_t off = base;
        if (op == 1)
            off = base + 4 * seen;
        else if (op == 5 && seen > 0)
            off = base + 4;
        out.push_back({subch, off, w});
        ++seen;
        --remaining;
    }
    if (remaining != 0)
        return std::nullopt;
    return out;
}

/// Copy-class LAUNCH_DMA word from its fields.
inline std::uint32_t pack_launch_dma(unsigned transfer_type, bool flush, unsigned sem_type, bool src_pitch,
                                     bool dst_pitch, bool multi_line, bool src_phys, bool dst_phys)
{
    return transfer_type | (unsigned{flush} << 2) | (sem_type << 3) | (unsigned{src_pitch} << 7) |
           (unsigned{dst_pitch} << 8) | (unsigned{multi_line} << 9) | (unsigned{src_phys} << 12) |
           (unsigned{dst_phys} << 13);
}

} // namespace oracle
