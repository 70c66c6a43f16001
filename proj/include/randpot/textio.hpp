#pragma once

// Locale-independent numeric text output.  All data files are written
// through these helpers so that identical runs produce identical bytes.

#include <charconv>
#include <cstdint>
#include <string>
#include <system_error>

namespace randpot {

// Render with 17 significant digits (round-trip safe for IEEE doubles),
// shortest-general form, independent of the global locale.
inline std::string fmt17(double x) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline std::string fmt_int(std::int64_t v) {
    char buf[24];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string fmt_u64(std::uint64_t v) {
    char buf[24];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace randpot
