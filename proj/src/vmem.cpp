#include "pushtrace/vmem.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <mutex>

#include <fmt/format.h>

#include "pushtrace/error.hpp"

namespace pushtrace {

const char* to_string(DomainKind kind) noexcept
{
    switch (kind) {
    case DomainKind::HostRam: return "HostRam";
    case DomainKind::DeviceVram: return "DeviceVram";
    case DomainKind::Mmio: return "Mmio";
    }
    return "?";
}

const char* to_string(AllocTag tag) noexcept
{
    switch (tag) {
    case AllocTag::Pushbuffer: return "Pushbuffer";
    case AllocTag::Gpfifo: return "Gpfifo";
    case AllocTag::SemaphoreBuf: return "SemaphoreBuf";
    case AllocTag::UserData: return "UserData";
    case AllocTag::Unknown: return "Unknown";
    }
    return "?";
}

namespace {

constexpr std::uint64_t page_number(std::uint64_t addr) { return addr / kPageSize; }
constexpr std::uint64_t page_offset(std::uint64_t addr) { return addr % kPageSize; }

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len)
{
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t mix(std::uint64_t x)
{
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ull;
    x ^= x >> 33;
    return x;
}

} // namespace

// ---------------------------------------------------------------------------
// GpuPageTable

void GpuPageTable::install(VirtAddr va_page, PageTableEntry pte)
{
    entries_[page_number(va_page)] = pte;
}

std::optional<PageTableEntry> GpuPageTable::lookup(VirtAddr va) const
{
    auto it = entries_.find(page_number(va));
    if (it == entries_.end() || !it->second.valid)
        return std::nullopt;
    return it->second;
}

PhysLoc GpuPageTable::translate(VirtAddr va) const
{
    auto pte = lookup(va);
    if (!pte)
        throw Error(ErrorCode::PageFault, fmt::format("va 0x{:x} not mapped", va));
    return PhysLoc{pte->domain, pte->pa_page + page_offset(va)};
}

// ---------------------------------------------------------------------------
// AllocRegistry

bool AllocRegistry::overlaps(VirtAddr va, std::uint64_t len) const
{
    if (len == 0)
        return false;
    auto it = records_.upper_bound(va);
    if (it != records_.end() && it->first < va + len)
        return true;
    if (it != records_.begin()) {
        --it;
        if (it->second.va_base + it->second.length > va)
            return true;
    }
    return false;
}

const AllocRecord& AllocRegistry::add(const AllocRecord& rec)
{
    if (overlaps(rec.va_base, rec.length))
        throw Error(ErrorCode::Overlap,
                    fmt::format("[0x{:x}, +0x{:x}) overlaps an existing mapping", rec.va_base, rec.length));
    return records_.emplace(rec.va_base, rec).first->second;
}

const AllocRecord* AllocRegistry::find(VirtAddr va) const
{
    auto it = records_.upper_bound(va);
    if (it == records_.begin())
        return nullptr;
    --it;
    return it->second.contains(va) ? &it->second : nullptr;
}

AllocTag AllocRegistry::attribute(VirtAddr va) const
{
    const AllocRecord* rec = find(va);
    return rec ? rec->tag : AllocTag::Unknown;
}

// ---------------------------------------------------------------------------
// PhysicalDomain

PhysicalDomain::PhysicalDomain(DomainKind kind, std::uint64_t capacity)
    : kind_(kind), capacity_(capacity)
{}

PhysAddr PhysicalDomain::allocate(std::uint64_t len)
{
    std::uint64_t pages = (len + kPageSize - 1) / kPageSize;
    std::uint64_t bytes = pages * kPageSize;
    if (bytes > capacity_ - next_free_)
        throw Error(ErrorCode::OutOfBounds,
                    fmt::format("{} exhausted: need 0x{:x} bytes, 0x{:x} left",
                                to_string(kind_), bytes, capacity_ - next_free_));
    PhysAddr base = next_free_;
    next_free_ += bytes;
    return base;
}

void PhysicalDomain::check_bounds(PhysAddr pa, std::uint64_t len) const
{
    if (pa > capacity_ || len > capacity_ - pa)
        throw Error(ErrorCode::OutOfBounds,
                    fmt::format("{} pa 0x{:x} +0x{:x} outside capacity", to_string(kind_), pa, len));
}

void PhysicalDomain::read(PhysAddr pa, std::span<std::byte> out) const
{
    check_bounds(pa, out.size());
    std::size_t done = 0;
    while (done < out.size()) {
        PhysAddr cur = pa + done;
        std::size_t chunk = std::min<std::uint64_t>(out.size() - done, kPageSize - page_offset(cur));
        auto it = pages_.find(page_number(cur));
        if (it == pages_.end())
            std::memset(out.data() + done, 0, chunk);
        else
            std::memcpy(out.data() + done, it->second->data() + page_offset(cur), chunk);
        done += chunk;
    }
}

bool PhysicalDomain::read_if_present(PhysAddr pa, std::span<std::byte> out) const
{
    check_bounds(pa, out.size());
    auto it = pages_.find(page_number(pa));
    if (it == pages_.end() && page_number(pa) == page_number(pa + out.size() - 1))
        return false;
    read(pa, out);
    return true;
}

bool PhysicalDomain::page_present(PhysAddr pa) const
{
    return pages_.count(page_number(pa)) != 0;
}

void PhysicalDomain::write(PhysAddr pa, std::span<const std::byte> in)
{
    check_bounds(pa, in.size());
    std::size_t done = 0;
    while (done < in.size()) {
        PhysAddr cur = pa + done;
        std::size_t chunk = std::min<std::uint64_t>(in.size() - done, kPageSize - page_offset(cur));
        auto& page = pages_[page_number(cur)];
        if (!page)
            page = std::make_unique<Page>(); // value-initialised: zeroes
        std::memcpy(page->data() + page_offset(cur), in.data() + done, chunk);
        done += chunk;
    }
}

std::uint64_t PhysicalDomain::hash(std::uint64_t seed) const
{
    static const Page zero_page{};
    std::uint64_t acc = seed;
    for (const auto& [pn, page] : pages_) {
        // All-zero pages are indistinguishable from absent ones.
        if (std::memcmp(page->data(), zero_page.data(), kPageSize) == 0)
            continue;
        std::uint64_t h = fnv1a(0xcbf29ce484222325ull ^ mix(pn), page->data(), kPageSize);
        acc += mix(h);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// AddressSpace

AddressSpace::AddressSpace(DomainCapacities caps)
    : domains_{PhysicalDomain{DomainKind::HostRam, caps.host_ram},
               PhysicalDomain{DomainKind::DeviceVram, caps.device_vram},
               PhysicalDomain{DomainKind::Mmio, caps.mmio}}
{}

const PhysicalDomain& AddressSpace::domain(DomainKind kind) const
{
    return domains_[static_cast<std::size_t>(kind)];
}

PhysicalDomain& AddressSpace::domain_mut(DomainKind kind)
{
    return domains_[static_cast<std::size_t>(kind)];
}

AllocRecord AddressSpace::map(VirtAddr va, std::uint64_t len, DomainKind kind, AllocTag tag)
{
    if (page_offset(va) != 0)
        throw Error(ErrorCode::Unaligned, fmt::format("va 0x{:x} is not page aligned", va));
    if (len == 0)
        throw Error(ErrorCode::Unaligned, "zero-length mapping");
    std::uint64_t span_bytes = (len + kPageSize - 1) / kPageSize * kPageSize;
    if (va + span_bytes < va)
        throw Error(ErrorCode::OutOfBounds, "mapping wraps the address space");

    std::unique_lock lock(mutex_);
    if (registry_.overlaps(va, span_bytes))
        throw Error(ErrorCode::Overlap,
                    fmt::format("[0x{:x}, +0x{:x}) overlaps an existing mapping", va, span_bytes));
    PhysAddr pa = domain_mut(kind).allocate(span_bytes);
    for (std::uint64_t off = 0; off < span_bytes; off += kPageSize)
        page_table_.install(va + off, PageTableEntry{kind, pa + off, true});

    AllocRecord rec{next_handle_++, va, span_bytes, kind, pa, tag};
    return registry_.add(rec);
}

PhysLoc AddressSpace::translate(VirtAddr va) const
{
    std::shared_lock lock(mutex_);
    return page_table_.translate(va);
}

bool AddressSpace::range_mapped(VirtAddr va, std::uint64_t len) const
{
    std::shared_lock lock(mutex_);
    if (len == 0)
        return page_table_.is_mapped(va);
    if (va + len < va)
        return false;
    for (std::uint64_t pn = page_number(va); pn <= page_number(va + len - 1); ++pn) {
        if (!page_table_.is_mapped(pn * kPageSize))
            return false;
    }
    return true;
}

PhysLoc AddressSpace::host_resolve(VirtAddr va, std::uint64_t len) const
{
    const AllocRecord* rec = registry_.find(va);
    if (!rec)
        throw Error(ErrorCode::PageFault, fmt::format("va 0x{:x} not mapped", va));
    if (len > rec->length - (va - rec->va_base))
        throw Error(ErrorCode::PageFault, fmt::format("chunk at 0x{:x} leaves its allocation", va));
    return PhysLoc{rec->domain, rec->pa_base + (va - rec->va_base)};
}

void AddressSpace::read(VirtAddr va, std::span<std::byte> out) const
{
    std::shared_lock lock(mutex_);
    std::size_t done = 0;
    while (done < out.size()) {
        VirtAddr cur = va + done;
        const AllocRecord* rec = registry_.find(cur);
        if (!rec)
            throw Error(ErrorCode::PageFault, fmt::format("va 0x{:x} not mapped", cur));
        std::size_t chunk = std::min<std::uint64_t>(out.size() - done, rec->length - (cur - rec->va_base));
        read_phys_locked(host_resolve(cur, chunk), out.subspan(done, chunk));
        done += chunk;
    }
}

void AddressSpace::write(VirtAddr va, std::span<const std::byte> in)
{
    MmioWriteHook hook;
    std::uint32_t hook_value = 0;
    PhysAddr hook_pa = 0;
    {
        std::unique_lock lock(mutex_);
        std::size_t done = 0;
        while (done < in.size()) {
            VirtAddr cur = va + done;
            const AllocRecord* rec = registry_.find(cur);
            if (!rec)
                throw Error(ErrorCode::PageFault, fmt::format("va 0x{:x} not mapped", cur));
            std::size_t chunk = std::min<std::uint64_t>(in.size() - done, rec->length - (cur - rec->va_base));
            PhysLoc loc = host_resolve(cur, chunk);
            if (loc.domain == DomainKind::Mmio && chunk == 4) {
                auto it = mmio_registers_.find(loc.pa);
                if (it != mmio_registers_.end()) {
                    hook = it->second;
                    std::memcpy(&hook_value, in.data() + done, 4);
                    hook_pa = loc.pa;
                    done += chunk;
                    continue;
                }
            }
            domain_mut(loc.domain).write(loc.pa, in.subspan(done, chunk));
            done += chunk;
        }
    }
    if (hook)
        hook(hook_pa, hook_value);
}

void AddressSpace::gpu_read_locked(VirtAddr va, std::span<std::byte> out) const
{
    std::size_t done = 0;
    while (done < out.size()) {
        VirtAddr cur = va + done;
        std::size_t chunk = std::min<std::uint64_t>(out.size() - done, kPageSize - page_offset(cur));
        read_phys_locked(page_table_.translate(cur), out.subspan(done, chunk));
        done += chunk;
    }
}

void AddressSpace::gpu_write_locked(VirtAddr va, std::span<const std::byte> in)
{
    std::size_t done = 0;
    while (done < in.size()) {
        VirtAddr cur = va + done;
        std::size_t chunk = std::min<std::uint64_t>(in.size() - done, kPageSize - page_offset(cur));
        PhysLoc loc = page_table_.translate(cur);
        domain_mut(loc.domain).write(loc.pa, in.subspan(done, chunk));
        done += chunk;
    }
}

void AddressSpace::gpu_read(VirtAddr va, std::span<std::byte> out) const
{
    std::shared_lock lock(mutex_);
    gpu_read_locked(va, out);
}

void AddressSpace::gpu_write(VirtAddr va, std::span<const std::byte> in)
{
    std::unique_lock lock(mutex_);
    gpu_write_locked(va, in);
}

void AddressSpace::read_phys_locked(PhysLoc loc, std::span<std::byte> out) const
{
    domain(loc.domain).read(loc.pa, out);
    if (loc.domain == DomainKind::Mmio) {
        // Registers read back as zero.
        for (const auto& [reg_pa, hook] : mmio_registers_) {
            (void)hook;
            for (PhysAddr b = reg_pa; b < reg_pa + 4; ++b) {
                if (b >= loc.pa && b < loc.pa + out.size())
                    out[b - loc.pa] = std::byte{0};
            }
        }
    }
}

void AddressSpace::read_phys(PhysLoc loc, std::span<std::byte> out) const
{
    std::shared_lock lock(mutex_);
    read_phys_locked(loc, out);
}

void AddressSpace::write_phys(PhysLoc loc, std::span<const std::byte> in)
{
    std::unique_lock lock(mutex_);
    domain_mut(loc.domain).write(loc.pa, in);
}

std::uint32_t AddressSpace::read32(VirtAddr va) const
{
    std::uint32_t v = 0;
    read(va, std::as_writable_bytes(std::span{&v, 1}));
    return v;
}

std::uint64_t AddressSpace::read64(VirtAddr va) const
{
    std::uint64_t v = 0;
    read(va, std::as_writable_bytes(std::span{&v, 1}));
    return v;
}

void AddressSpace::write32(VirtAddr va, std::uint32_t value)
{
    write(va, std::as_bytes(std::span{&value, 1}));
}

void AddressSpace::write64(VirtAddr va, std::uint64_t value)
{
    write(va, std::as_bytes(std::span{&value, 1}));
}

static_assert(std::endian::native == std::endian::little, "byte store assumes a little-endian host");

std::vector<std::uint32_t> AddressSpace::read_dwords(VirtAddr va, std::size_t count) const
{
    std::vector<std::uint32_t> words(count);
    std::shared_lock lock(mutex_);
    gpu_read_locked(va, std::as_writable_bytes(std::span{words}));
    return words;
}

void AddressSpace::write_dwords(VirtAddr va, std::span<const std::uint32_t> words)
{
    std::unique_lock lock(mutex_);
    gpu_write_locked(va, std::as_bytes(words));
}

void AddressSpace::copy(VirtAddr dst, VirtAddr src, std::uint64_t len)
{
    std::unique_lock lock(mutex_);
    std::array<std::byte, kPageSize> buf;
    std::uint64_t done = 0;
    while (done < len) {
        VirtAddr s = src + done;
        VirtAddr d = dst + done;
        std::uint64_t chunk = std::min({len - done, kPageSize - page_offset(s), kPageSize - page_offset(d)});
        PhysLoc sloc = page_table_.translate(s);
        PhysLoc dloc = page_table_.translate(d);
        auto piece = std::span{buf}.first(chunk);
        const PhysicalDomain& sdom = domain(sloc.domain);
        PhysicalDomain& ddom = domain_mut(dloc.domain);
        if (!sdom.read_if_present(sloc.pa, piece)) {
            if (!ddom.page_present(dloc.pa)) {
                done += chunk;
                continue;
            }
            std::fill(piece.begin(), piece.end(), std::byte{0});
        }
        ddom.write(dloc.pa, piece);
        done += chunk;
    }
}

AllocTag AddressSpace::attribute(VirtAddr va) const
{
    std::shared_lock lock(mutex_);
    return registry_.attribute(va);
}

std::optional<AllocRecord> AddressSpace::find_allocation(VirtAddr va) const
{
    std::shared_lock lock(mutex_);
    const AllocRecord* rec = registry_.find(va);
    if (!rec)
        return std::nullopt;
    return *rec;
}

std::vector<AllocRecord> AddressSpace::allocations() const
{
    std::shared_lock lock(mutex_);
    std::vector<AllocRecord> out;
    out.reserve(registry_.records().size());
    for (const auto& [va, rec] : registry_.records())
        out.push_back(rec);
    return out;
}

void AddressSpace::set_mmio_register(PhysAddr mmio_pa, MmioWriteHook hook)
{
    std::unique_lock lock(mutex_);
    if (mmio_pa % 4 != 0)
        throw Error(ErrorCode::Unaligned, fmt::format("mmio register 0x{:x} not dword aligned", mmio_pa));
    mmio_registers_[mmio_pa] = std::move(hook);
}

std::uint64_t AddressSpace::content_hash() const
{
    std::shared_lock lock(mutex_);
    std::uint64_t h = 0;
    for (const auto& dom : domains_)
        h = mix(dom.hash(h) + static_cast<std::uint64_t>(dom.kind()));
    for (const auto& [va, rec] : registry_.records())
        h = mix(h ^ mix(va) ^ (rec.length << 3) ^ static_cast<std::uint64_t>(rec.tag));
    return h;
}

// ---------------------------------------------------------------------------
// dumps

std::vector<std::uint32_t> read_dump_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw Error(ErrorCode::Io, fmt::format("read failed on {}", path.string()));
    if (bytes.size() % 4 != 0)
        throw Error(ErrorCode::TruncatedStream,
                    fmt::format("{}: length {} is not a multiple of 4", path.string(), bytes.size()));
    std::vector<std::uint32_t> words(bytes.size() / 4);
    std::memcpy(words.data(), bytes.data(), bytes.size());
    return words;
}

AllocRecord load_dump(AddressSpace& mem,
                      const std::filesystem::path& path,
                      VirtAddr va_base,
                      DomainKind domain,
                      AllocTag tag)
{
    auto words = read_dump_file(path);
    AllocRecord rec = mem.map(va_base, std::max<std::uint64_t>(words.size() * 4, 1), domain, tag);
    mem.write_dwords(va_base, words);
    return rec;
}

} // namespace pushtrace
