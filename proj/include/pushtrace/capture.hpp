#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pushtrace/channel.hpp"
#include "pushtrace/error.hpp"
#include "pushtrace/method_codec.hpp"
#include "pushtrace/vmem.hpp"

namespace pushtrace {

struct TraceEntry {
    std::uint32_t index = 0; // free-running GPFIFO index
    VirtAddr entry_va = 0;
    GpFifoEntry entry;
    std::vector<std::uint32_t> dwords;
};

/// One intercepted doorbell write.
struct TraceRecord {
    std::uint64_t seq = 0;
    std::uint64_t pid = 0;
    std::uint32_t channel_id = 0;
    std::uint64_t channel_handle = 0;
    std::uint32_t doorbell_value = 0;
    std::uint32_t gp_get = 0;
    std::uint32_t gp_put = 0;
    std::uint32_t prev_put = 0;
    VirtAddr gp_base = 0;
    std::uint32_t ring_len = 0;
    std::vector<TraceEntry> entries;
    std::uint64_t footprint_bytes = 0;
    std::optional<ErrorCode> error_code;
    std::string error;

    bool ok() const noexcept { return !error_code.has_value(); }
    /// Decoded pushbuffer methods of every entry, in order.
    std::vector<DecodedMethod> decoded(const ClassBinding& bindings = ClassBinding::defaults(),
                                       const ClassTable& table = ClassTable::builtin()) const;

    friend bool operator==(const TraceRecord& a, const TraceRecord& b);
};

/// Read-only reconstruction of the entries in [prev_put, snap.userd.gp_put).
/// Throws PageFault / TruncatedStream / UnknownOpcode.
TraceRecord reconstruct(const AddressSpace& mem, const ChannelSnapshot& snap, std::uint32_t prev_put);

/// Listing-style rendering of one pushbuffer segment.
std::string render_pushbuffer(std::span<const std::uint32_t> dwords,
                              const ClassBinding& bindings = ClassBinding::defaults(),
                              const ClassTable& table = ClassTable::builtin());

/// Doorbell header, GPFIFO summary, then each entry's dword dump. Records
/// with several entries get a per-entry line naming its slot.
std::string render_trace(const TraceRecord& rec, const ClassBinding& bindings = ClassBinding::defaults(),
                         const ClassTable& table = ClassTable::builtin());

/// JSON-lines trace format; every integer is a hex string.
std::string to_json_line(const TraceRecord& rec);
TraceRecord from_json_line(std::string_view line); // throws TableParse on malformed input
std::vector<TraceRecord> read_trace(std::istream& in);
void write_trace(std::ostream& out, const std::vector<TraceRecord>& records);

struct CaptureOptions {
    std::uint64_t pid = 0; // reported in the "Doorbell hit" line
};

using RecordCallback = std::function<void(const TraceRecord&)>;

/// Doorbell interception. The hook runs synchronously inside the doorbell
/// path, under the channel's lock, before the value reaches the register.
class Capture {
public:
    explicit Capture(ChannelTable& channels, CaptureOptions opts = {});
    ~Capture();

    Capture(const Capture&) = delete;
    Capture& operator=(const Capture&) = delete;

    void install(); // throws AlreadyInstalled
    void uninstall();
    bool installed() const noexcept { return installed_; }

    void set_callback(RecordCallback cb);

    std::vector<TraceRecord> records() const;
    std::size_t record_count() const;
    void clear();

private:
    void on_doorbell(const ChannelContext* ch, std::uint32_t value);

    ChannelTable& channels_;
    CaptureOptions opts_;
    bool installed_ = false;

    mutable std::mutex mutex_;
    std::uint64_t next_seq_ = 0;
    std::map<std::uint32_t, std::uint32_t> prev_put_;
    std::vector<TraceRecord> records_;
    RecordCallback callback_;
};

// ---------------------------------------------------------------------------
// Analysis

struct FitResult {
    double slope_ns_per_byte = 0;
    double intercept_ns = 0;
    double r2 = 0;
    double bandwidth_mibps = 0; // (1 / slope) * 1e9 / 2^20
    std::size_t samples = 0;
};

struct Sample {
    double bytes = 0;
    double ns = 0;
};

/// Ordinary least squares of ns on bytes. DegenerateInput with fewer than
/// two distinct byte values.
FitResult fit_bandwidth(std::span<const Sample> samples);

/// 100 * (observed - raw) / observed. InvalidOrder unless observed >= raw > 0.
double gap_percent(double t_observed_ns, double t_raw_ns);

} // namespace pushtrace
