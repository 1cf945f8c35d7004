#pragma once

#include <cstdio>
#include <string>

namespace dygex {

// Shortest round-trip decimal, always with a decimal point or exponent so
// the text stays recognizably floating-point and is byte-stable across runs.
inline std::string format_numeric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    std::string s(buf);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

}  // namespace dygex
