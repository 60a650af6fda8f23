#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pushtrace/error.hpp"
#include "pushtrace/vmem.hpp"

namespace pushtrace {

// ---------------------------------------------------------------------------
// Method headers
//
//   31:29 op   28:16 count (or immediate data)   15:13 subchannel   12:0 addr_dw

enum class MethodOp : std::uint8_t {
    Inc = 1,
    NonInc = 3,
    Immediate = 4,
    OneInc = 5,
};

const char* to_string(MethodOp op) noexcept; // "INC", "NON_INC", "IMMD", "ONE_INC"

inline constexpr std::uint32_t kMaxMethodCount = 0x1fff;
inline constexpr std::uint32_t kMaxMethodAddrDw = 0x1fff;

struct MethodHeader {
    MethodOp op = MethodOp::Inc;
    std::uint16_t count = 0; // payload dwords, or the data itself for Immediate
    std::uint8_t subchannel = 0;
    std::uint16_t addr_dw = 0;

    std::uint32_t byte_offset() const noexcept { return std::uint32_t{addr_dw} * 4; }
    std::uint32_t payload_dwords() const noexcept { return op == MethodOp::Immediate ? 0 : count; }

    friend bool operator==(const MethodHeader&, const MethodHeader&) = default;
};

/// Throws UnknownOpcode for op-code values other than the four above.
MethodHeader decode_header(std::uint32_t word);
/// Throws FieldOverflow when count, subchannel or addr_dw do not fit.
std::uint32_t encode_header(const MethodHeader& h);

// ---------------------------------------------------------------------------
// Class/method tables

struct FieldEnum {
    std::uint32_t value = 0;
    std::string label;
};

struct FieldSpec {
    std::string name;
    unsigned hi = 0;
    unsigned lo = 0;
    std::vector<FieldEnum> enums;
    bool elide_when_zero = false;

    std::uint32_t mask() const noexcept;
    std::uint32_t extract(std::uint32_t data) const noexcept { return (data & mask()) >> lo; }
    const std::string* label_for(std::uint32_t value) const noexcept;
};

struct MethodSpec {
    std::uint32_t byte_offset = 0;
    std::string name;
    std::vector<FieldSpec> fields;
};

struct ClassSpec {
    std::uint16_t class_id = 0;
    std::string name;
    std::map<std::uint32_t, MethodSpec> methods;
};

/// Data-driven method-name tables.
///
/// Text format, one entry per line, `#` starts a comment:
///
///     <class_id> class <CLASS_NAME>
///     <class_id> <method_byte_offset> <METHOD_NAME> [field:hi:lo[:LABEL=val,...]]...
///
/// A field name ending in `?` is decoded but omitted from rendering when
/// its value is zero.
class ClassTable {
public:
    static ClassTable parse(std::string_view text);
    static ClassTable load(const std::filesystem::path& path);
    /// Table compiled in from data/classes.tbl.
    static const ClassTable& builtin();

    const ClassSpec* find_class(std::uint16_t class_id) const;
    const MethodSpec* find_method(std::uint16_t class_id, std::uint32_t byte_offset) const;
    /// Byte offset of a named method; throws TableParse if absent.
    std::uint32_t offset_of(std::uint16_t class_id, std::string_view method_name) const;

    const std::map<std::uint16_t, ClassSpec>& classes() const noexcept { return classes_; }

private:
    std::map<std::uint16_t, ClassSpec> classes_;
};

inline constexpr std::uint16_t kAmpereDmaCopyB = 0xc7b5;
inline constexpr std::uint16_t kAmpereComputeB = 0xc7c0;
inline constexpr std::uint8_t kCopySubchannel = 4;
inline constexpr std::uint8_t kComputeSubchannel = 1;

/// Subchannel -> class binding used for name resolution.
struct ClassBinding {
    std::array<std::optional<std::uint16_t>, 8> class_ids{};

    /// subch4 -> AMPERE_DMA_COPY_B, subch1 -> AMPERE_COMPUTE_B.
    static ClassBinding defaults();

    void bind(std::uint8_t subchannel, std::uint16_t class_id) { class_ids.at(subchannel) = class_id; }
    std::optional<std::uint16_t> class_for(std::uint8_t subchannel) const { return class_ids.at(subchannel); }
};

// ---------------------------------------------------------------------------
// Decoded streams

struct DecodedField {
    std::string name;
    std::uint32_t value = 0;
    std::optional<std::string> label;
    bool elide_when_zero = false;
};

/// Sub-field decode of `data` with `spec`. Bits not covered by any field are
/// reported as a trailing UNKNOWN_BITS entry when non-zero.
std::vector<DecodedField> decode_fields(const MethodSpec& spec, std::uint32_t data);

/// One (method, data) pair. The class/method pointers refer into the
/// ClassTable used for decoding, which must outlive this object.
struct DecodedMethod {
    MethodOp op = MethodOp::Inc;
    std::uint8_t subchannel = 0;
    std::uint32_t byte_offset = 0;
    std::uint32_t data = 0;
    std::size_t header_index = 0; // dword index of the governing header
    std::size_t data_index = 0;   // dword index carrying the data (== header_index for Immediate)
    std::optional<std::uint16_t> class_id;
    const ClassSpec* cls = nullptr;
    const MethodSpec* spec = nullptr;

    std::string class_name() const;  // empty when the subchannel is unbound
    std::string method_name() const; // METHOD_0x<offset> when unknown
    std::vector<DecodedField> fields() const;
};

struct StreamWord {
    std::uint32_t raw = 0;
    std::optional<MethodHeader> header;
    std::optional<std::size_t> method; // index into DecodedStream::methods
};

struct DecodedStream {
    std::vector<StreamWord> words;
    std::vector<DecodedMethod> methods;
    std::optional<Error> error; // set when decoding stopped early

    bool ok() const noexcept { return !error.has_value(); }
};

/// Walks header/payload groups and never reads beyond `dwords`. On a
/// truncated payload or unknown op-code the prefix decoded so far is returned
/// together with the error.
DecodedStream decode_stream_partial(std::span<const std::uint32_t> dwords,
                                    const ClassBinding& bindings = ClassBinding::defaults(),
                                    const ClassTable& table = ClassTable::builtin());

/// Like decode_stream_partial but throws TruncatedStream / UnknownOpcode.
std::vector<DecodedMethod> decode_stream(std::span<const std::uint32_t> dwords,
                                         const ClassBinding& bindings = ClassBinding::defaults(),
                                         const ClassTable& table = ClassTable::builtin());

// ---------------------------------------------------------------------------
// AMPERE_DMA_COPY_B LAUNCH_DMA

struct CopyLaunchDma {
    std::uint8_t data_transfer_type = 0; // 1:0  0 NONE, 1 PIPELINED, 2 NON_PIPELINED
    bool flush_enable = false;           // 2
    std::uint8_t semaphore_type = 0;     // 4:3
    bool src_pitch = false;              // 7
    bool dst_pitch = false;              // 8
    bool multi_line = false;             // 9
    bool src_physical = false;           // 12
    bool dst_physical = false;           // 13
    std::uint32_t other_bits = 0;        // anything else, kept raw

    static CopyLaunchDma decode(std::uint32_t data) noexcept;
    std::uint32_t encode() const noexcept;

    friend bool operator==(const CopyLaunchDma&, const CopyLaunchDma&) = default;
};

/// Field list for a copy-class LAUNCH_DMA data word, from the builtin table.
std::vector<DecodedField> decode_launch_dma(std::uint32_t data);

// ---------------------------------------------------------------------------
// GPFIFO entries
//
//   31:2 pb_va[31:2]   39:32 pb_va[39:32]   40 PRIV   41 LEVEL   62:42 length_dw   63 SYNC

inline constexpr std::uint64_t kGpEntrySize = 8;
inline constexpr std::uint32_t kMaxGpLengthDw = (1u << 21) - 1;

enum class GpEntryLevel : std::uint8_t { Main = 0, Subroutine = 1 };

struct GpEntryFlags {
    bool priv = false;
    GpEntryLevel level = GpEntryLevel::Main;
    bool sync = false;

    friend bool operator==(const GpEntryFlags&, const GpEntryFlags&) = default;
};

struct GpFifoEntry {
    VirtAddr pb_va = 0;
    std::uint32_t length_dw = 0;
    GpEntryFlags flags;
    std::uint64_t raw = 0;

    std::uint64_t footprint_bytes() const noexcept { return std::uint64_t{length_dw} * 4; }
};

GpFifoEntry decode_gpfifo_entry(std::uint64_t raw) noexcept;
/// Throws FieldOverflow (pb_va >= 2^40 or length >= 2^21) and MisalignedVa.
std::uint64_t encode_gpfifo_entry(VirtAddr pb_va, std::uint32_t length_dw, GpEntryFlags flags = {});

// ---------------------------------------------------------------------------

/// Appends method groups to a dword buffer. Groups longer than the 13-bit
/// count field are split transparently.
class PushbufferBuilder {
public:
    PushbufferBuilder& inc(std::uint8_t subch, std::uint32_t byte_offset, std::span<const std::uint32_t> data);
    PushbufferBuilder& inc(std::uint8_t subch, std::uint32_t byte_offset, std::initializer_list<std::uint32_t> data)
    {
        return inc(subch, byte_offset, std::span{data.begin(), data.size()});
    }
    PushbufferBuilder& non_inc(std::uint8_t subch, std::uint32_t byte_offset, std::span<const std::uint32_t> data);
    PushbufferBuilder& one_inc(std::uint8_t subch, std::uint32_t byte_offset, std::span<const std::uint32_t> data);
    PushbufferBuilder& immediate(std::uint8_t subch, std::uint32_t byte_offset, std::uint16_t data);
    PushbufferBuilder& append(std::span<const std::uint32_t> words);

    const std::vector<std::uint32_t>& words() const noexcept { return words_; }
    std::size_t size_dw() const noexcept { return words_.size(); }
    std::vector<std::uint32_t> take() { return std::move(words_); }

private:
    void group(MethodOp op, std::uint8_t subch, std::uint32_t byte_offset, std::span<const std::uint32_t> data);

    std::vector<std::uint32_t> words_;
};

} // namespace pushtrace
