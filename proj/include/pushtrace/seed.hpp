#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>

namespace pushtrace {

/// PUSHTRACE_SEED (decimal or 0x-hex) if set and parseable, else `fallback`.
inline std::uint64_t seed_from_env(std::uint64_t fallback = 1)
{
    const char* s = std::getenv("PUSHTRACE_SEED");
    if (!s || !*s)
        return fallback;
    try {
        std::size_t used = 0;
        std::uint64_t v = std::stoull(s, &used, 0);
        return used == std::string(s).size() ? v : fallback;
    } catch (const std::exception&) {
        return fallback;
    }
}

} // namespace pushtrace
