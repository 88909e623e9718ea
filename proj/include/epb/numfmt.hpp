#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace epb {

/// Rounds to `decimals` places with ties away from zero. The nudge absorbs
/// binary representation error, so 12.025 rounds to 12.03 as printed.
inline double round_half_up(double value, int decimals = 2) {
    const double scale = std::pow(10.0, decimals);
    const double scaled = value * scale;
    return std::round(scaled + std::copysign(1e-9, scaled)) / scale;
}

/// Fixed two-decimal rendering used by every report.
inline std::string format_fixed(double value, int decimals = 2) {
    char buffer[64];
    double rounded = round_half_up(value, decimals);
    if (rounded == 0.0) {
        rounded = 0.0; // no "-0.00"
    }
    std::snprintf(buffer, sizeof buffer, "%.*f", decimals, rounded);
    return buffer;
}

} // namespace epb
