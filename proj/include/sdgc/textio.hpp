#pragma once

// Deterministic number formatting for CSV and config snapshots: shortest
// round-trip representation via to_chars, identical bytes for identical values.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>

namespace sdgc {

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_u64(std::uint64_t v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace sdgc
