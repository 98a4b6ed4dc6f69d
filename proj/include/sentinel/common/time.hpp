#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sentinel {

// Epoch milliseconds, UTC.
using TimeMs = std::int64_t;
// Durations in milliseconds.
using DurationMs = std::int64_t;

inline constexpr DurationMs kSecondMs = 1000;
inline constexpr DurationMs kMinuteMs = 60 * kSecondMs;
inline constexpr DurationMs kHourMs = 60 * kMinuteMs;
inline constexpr DurationMs kDayMs = 24 * kHourMs;

// Parses "2024-01-01T00:00:00Z", "2024-01-01T00:00:00.123+02:00" and the
// space-separated variant. Sub-millisecond digits are truncated.
std::optional<TimeMs> parse_rfc3339(std::string_view text);

// Always emits "YYYY-MM-DDTHH:MM:SS.mmmZ".
std::string format_rfc3339(TimeMs t);

// "15m", "30s", "6h", "2d", "250ms" or a bare integer (milliseconds).
std::optional<DurationMs> parse_duration(std::string_view text);

}  // namespace sentinel
