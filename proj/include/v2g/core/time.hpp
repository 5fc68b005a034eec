// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace v2g {

/// Simulation time in milliseconds since the scenario epoch.
using TimeMs = std::int64_t;

inline constexpr TimeMs kMsPerSecond = 1000;
inline constexpr TimeMs kMsPerMinute = 60 * kMsPerSecond;
inline constexpr TimeMs kMsPerHour = 60 * kMsPerMinute;

inline constexpr double ms_to_hours(TimeMs ms) { return static_cast<double>(ms) / static_cast<double>(kMsPerHour); }

/// RFC 3339 UTC rendering of a scenario time, treating the epoch as 1970-01-01T00:00:00Z.
/// Sub-second precision is emitted only when non-zero.
std::string to_iso8601(TimeMs t);

/// Inverse of to_iso8601. Accepts `YYYY-MM-DDTHH:MM:SS[.fff]Z`. Throws std::invalid_argument.
TimeMs from_iso8601(const std::string& text);

/// Parses durations such as `3600`, `90s`, `15m`, `1h`, `1h30m`, `250ms` or `01:30:00`.
/// Bare numbers are seconds. Throws std::invalid_argument.
TimeMs parse_duration(const std::string& text);

} // namespace v2g
