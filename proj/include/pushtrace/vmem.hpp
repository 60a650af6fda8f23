#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

namespace pushtrace {

using VirtAddr = std::uint64_t;
using PhysAddr = std::uint64_t;

// Fixed GPU page size. The descriptor fields in GPFIFO entries are capped at
// 40 bits; page-table VAs are full 64-bit.
inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr unsigned kDescriptorVaBits = 40;

enum class DomainKind : std::uint8_t { HostRam, DeviceVram, Mmio };
enum class AllocTag : std::uint8_t { Pushbuffer, Gpfifo, SemaphoreBuf, UserData, Unknown };

const char* to_string(DomainKind kind) noexcept;
const char* to_string(AllocTag tag) noexcept;

struct PhysLoc {
    DomainKind domain = DomainKind::HostRam;
    PhysAddr pa = 0;

    friend bool operator==(const PhysLoc&, const PhysLoc&) = default;
};

struct PageTableEntry {
    DomainKind domain = DomainKind::HostRam;
    std::uint64_t pa_page = 0; // physical page base address
    bool valid = false;
};

/// Flat VA-page -> PA-page map. Behaviourally equivalent to the hardware
/// radix walk for translation purposes.
class GpuPageTable {
public:
    void install(VirtAddr va_page, PageTableEntry pte);
    std::optional<PageTableEntry> lookup(VirtAddr va) const;
    bool is_mapped(VirtAddr va) const { return lookup(va).has_value(); }

    /// Throws Error(PageFault) for unmapped or invalid pages.
    PhysLoc translate(VirtAddr va) const;

    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::unordered_map<std::uint64_t, PageTableEntry> entries_; // keyed by VA page number
};

struct AllocRecord {
    std::uint64_t handle = 0;
    VirtAddr va_base = 0;
    std::uint64_t length = 0;
    DomainKind domain = DomainKind::HostRam;
    PhysAddr pa_base = 0;
    AllocTag tag = AllocTag::Unknown;

    bool contains(VirtAddr va) const noexcept { return va >= va_base && va - va_base < length; }
};

/// Non-overlapping VA allocations with their attribution tag.
class AllocRegistry {
public:
    const AllocRecord& add(const AllocRecord& rec);
    const AllocRecord* find(VirtAddr va) const;
    AllocTag attribute(VirtAddr va) const;
    bool overlaps(VirtAddr va, std::uint64_t len) const;
    const std::map<VirtAddr, AllocRecord>& records() const noexcept { return records_; }

private:
    std::map<VirtAddr, AllocRecord> records_;
};

/// Sparse, zero-initialised byte store for one physical domain. Physical
/// pages are handed out by a bump pointer so addresses are deterministic.
class PhysicalDomain {
public:
    PhysicalDomain(DomainKind kind, std::uint64_t capacity);

    DomainKind kind() const noexcept { return kind_; }
    std::uint64_t capacity() const noexcept { return capacity_; }
    std::uint64_t allocated() const noexcept { return next_free_; }

    PhysAddr allocate(std::uint64_t len);

    void read(PhysAddr pa, std::span<std::byte> out) const;
    void write(PhysAddr pa, std::span<const std::byte> in);
    // Returns false (and leaves `out` untouched) when the range lies inside a
    // page that was never written.
    bool read_if_present(PhysAddr pa, std::span<std::byte> out) const;
    bool page_present(PhysAddr pa) const;

    std::uint64_t hash(std::uint64_t seed) const;

private:
    using Page = std::array<std::byte, kPageSize>;

    void check_bounds(PhysAddr pa, std::uint64_t len) const;

    DomainKind kind_;
    std::uint64_t capacity_;
    std::uint64_t next_free_ = 0;
    std::unordered_map<std::uint64_t, std::unique_ptr<Page>> pages_;
};

struct DomainCapacities {
    std::uint64_t host_ram = 64ull << 30;
    std::uint64_t device_vram = 48ull << 30;
    std::uint64_t mmio = 16ull << 20;
};

using MmioWriteHook = std::function<void(PhysAddr offset, std::uint32_t value)>;

/// Unified (UVM-style) virtual address space over host RAM, VRAM and an MMIO
/// window. The same VA resolves identically through the host accessors
/// (allocation record lookup) and the GPU accessors (page-table walk).
///
/// Internally synchronised: reads take a shared lock, writes and mappings an
/// exclusive one. MMIO write hooks run with no lock held.
class AddressSpace {
public:
    explicit AddressSpace(DomainCapacities caps = {});

    AddressSpace(const AddressSpace&) = delete;
    AddressSpace& operator=(const AddressSpace&) = delete;

    /// Maps [va, va+len) onto fresh physical pages of `domain`.
    /// Throws UnalignedError / OverlapError / OutOfBounds (domain exhausted).
    AllocRecord map(VirtAddr va, std::uint64_t len, DomainKind domain, AllocTag tag);

    PhysLoc translate(VirtAddr va) const;
    bool range_mapped(VirtAddr va, std::uint64_t len) const;

    // Host-side accessors: resolve through the allocation record.
    void read(VirtAddr va, std::span<std::byte> out) const;
    void write(VirtAddr va, std::span<const std::byte> in);

    // GPU-side accessors: walk the page table page by page.
    void gpu_read(VirtAddr va, std::span<std::byte> out) const;
    void gpu_write(VirtAddr va, std::span<const std::byte> in);

    void read_phys(PhysLoc loc, std::span<std::byte> out) const;
    void write_phys(PhysLoc loc, std::span<const std::byte> in);

    std::uint32_t read32(VirtAddr va) const;
    std::uint64_t read64(VirtAddr va) const;
    void write32(VirtAddr va, std::uint32_t value);
    void write64(VirtAddr va, std::uint64_t value);

    std::vector<std::uint32_t> read_dwords(VirtAddr va, std::size_t count) const;
    void write_dwords(VirtAddr va, std::span<const std::uint32_t> words);

    /// DMA-style copy through the page table. Untouched source pages stay
    /// sparse on the destination side.
    void copy(VirtAddr dst, VirtAddr src, std::uint64_t len);

    AllocTag attribute(VirtAddr va) const;
    std::optional<AllocRecord> find_allocation(VirtAddr va) const;
    std::vector<AllocRecord> allocations() const;

    /// Registers a 32-bit register at `mmio_pa`: writes go to the hook and
    /// are not stored, reads always return zero.
    void set_mmio_register(PhysAddr mmio_pa, MmioWriteHook hook);

    /// Order-independent digest of all stored bytes and mappings.
    std::uint64_t content_hash() const;

    const PhysicalDomain& domain(DomainKind kind) const;

private:
    PhysicalDomain& domain_mut(DomainKind kind);
    PhysLoc host_resolve(VirtAddr va, std::uint64_t len) const;
    void read_phys_locked(PhysLoc loc, std::span<std::byte> out) const;
    void gpu_read_locked(VirtAddr va, std::span<std::byte> out) const;
    void gpu_write_locked(VirtAddr va, std::span<const std::byte> in);

    mutable std::shared_mutex mutex_;
    std::array<PhysicalDomain, 3> domains_;
    GpuPageTable page_table_;
    AllocRegistry registry_;
    std::uint64_t next_handle_ = 1;
    std::unordered_map<PhysAddr, MmioWriteHook> mmio_registers_;
};

/// Reads a raw dump: little-endian 32-bit dwords. Throws Io when the file
/// cannot be read and TruncatedStream when its length is not a multiple of 4.
std::vector<std::uint32_t> read_dump_file(const std::filesystem::path& path);

/// Maps the dump at `va_base` (rounded up to whole pages) and stores it.
AllocRecord load_dump(AddressSpace& mem,
                      const std::filesystem::path& path,
                      VirtAddr va_base,
                      DomainKind domain,
                      AllocTag tag);

} // namespace pushtrace
