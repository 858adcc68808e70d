#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace egoqa {

/// Half-open time window in seconds. Valid windows satisfy start_s < end_s.
struct Interval
{
    double start_s = 0.0;
    double end_s = 0.0;

    [[nodiscard]] double width() const noexcept { return end_s - start_s; }
    [[nodiscard]] bool valid() const noexcept
    {
        return std::isfinite(start_s) && std::isfinite(end_s) && start_s < end_s;
    }
    [[nodiscard]] bool contains(Interval const& other) const noexcept
    {
        return start_s <= other.start_s && other.end_s <= end_s;
    }

    friend bool operator==(Interval const&, Interval const&) = default;
    friend auto operator<=>(Interval const&, Interval const&) = default;
};

/// Length of the intersection; 0 when disjoint or touching.
[[nodiscard]] inline double intersection_length(Interval const& a, Interval const& b) noexcept
{
    return std::max(0.0, std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s));
}

/// Timestamps are carried with at most millisecond precision.
[[nodiscard]] inline double round_to_ms(double seconds) noexcept
{
    return std::round(seconds * 1000.0) / 1000.0;
}

/// Shortest decimal rendering of a millisecond-precision timestamp ("12", "12.5", "12.345").
[[nodiscard]] inline std::string format_seconds(double seconds)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", seconds);
    std::string s{buf};
    if (auto dot = s.find('.'); dot != std::string::npos) {
        while (!s.empty() && s.back() == '0')
            s.pop_back();
        if (!s.empty() && s.back() == '.')
            s.pop_back();
    }
    if (s == "-0")
        s = "0";
    return s;
}

} // namespace egoqa
