#include "pushtrace/scenario.hpp"

#include "pushtrace/driver.hpp"
#include "pushtrace/simulator.hpp"

namespace pushtrace {

ListingResult run_listing_scenario(const ListingParams& p)
{
    Simulator sim;
    Driver drv(sim);
    Capture cap(sim.channels, CaptureOptions{p.pid});
    cap.install();

    StreamLayout layout;
    layout.gp_base = p.gp_base;
    layout.pb_base = p.pb_base;
    layout.channel.channel_id = p.channel_id;
    layout.channel.handle = p.channel_handle;
    Stream& s = drv.create_stream(layout);

    sim.mem.map(p.src, p.bytes, DomainKind::HostRam, AllocTag::UserData);
    sim.mem.map(p.dst, p.bytes, DomainKind::DeviceVram, AllocTag::UserData);
    // A few populated pages are enough to check the copy end to end.
    std::vector<std::uint32_t> pattern(1024);
    for (std::uint64_t off = 0; off < p.bytes; off += p.bytes / 8) {
        for (std::size_t i = 0; i < pattern.size(); ++i)
            pattern[i] = static_cast<std::uint32_t>((off >> 12) * 0x9e3779b9u + i);
        sim.mem.write(p.src + off, std::as_bytes(std::span{pattern}));
    }

    drv.memcpy(s, p.dst, p.src, p.bytes, Direction::H2D);
    cap.uninstall();

    ListingResult r;
    r.records = cap.records();
    r.reports = sim.pbdma.reports(s.channel().id());
    r.destination_matches = true;
    std::vector<std::byte> a(kPageSize * 4), b(kPageSize * 4);
    for (std::uint64_t off = 0; off < p.bytes; off += p.bytes / 8) {
        sim.mem.read(p.src + off, a);
        sim.mem.read(p.dst + off, b);
        r.destination_matches = r.destination_matches && a == b;
    }
    if (r.records.size() > 1)
        r.rendered = render_trace(r.records[1]);
    return r;
}

} // namespace pushtrace
