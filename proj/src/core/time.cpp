// SPDX-License-Identifier: Apache-2.0
#include "v2g/core/time.hpp"

#include <cctype>
#include <cstdio>
#include <stdexcept>

namespace v2g {

namespace {

// Days-from-civil conversions (proleptic Gregorian), after H. Hinnant.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) {
        --q;
    }
    return q;
}

} // namespace

std::string to_iso8601(TimeMs t) {
    const std::int64_t days = floor_div(t, 86400 * kMsPerSecond);
    const std::int64_t rem = t - days * 86400 * kMsPerSecond;
    std::int64_t y = 0;
    unsigned m = 0;
    unsigned d = 0;
    civil_from_days(days, y, m, d);
    const auto secs = static_cast<int>(rem / kMsPerSecond);
    const auto millis = static_cast<int>(rem % kMsPerSecond);
    char buf[40];
    if (millis == 0) {
        std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02dZ", static_cast<long long>(y), m, d,
                      secs / 3600, (secs / 60) % 60, secs % 60);
    } else {
        std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<long long>(y), m, d,
                      secs / 3600, (secs / 60) % 60, secs % 60, millis);
    }
    return buf;
}

TimeMs from_iso8601(const std::string& text) {
    long long y = 0;
    unsigned mo = 0;
    unsigned d = 0;
    unsigned h = 0;
    unsigned mi = 0;
    unsigned s = 0;
    int consumed = 0;
    if (std::sscanf(text.c_str(), "%4lld-%2u-%2uT%2u:%2u:%2u%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6 ||
        mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) {
        throw std::invalid_argument("not an RFC 3339 timestamp: " + text);
    }
    std::size_t pos = static_cast<std::size_t>(consumed);
    TimeMs millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            if (digits < 3) {
                millis = millis * 10 + (text[pos] - '0');
            }
            ++digits;
            ++pos;
        }
        if (digits == 0) {
            throw std::invalid_argument("not an RFC 3339 timestamp: " + text);
        }
        for (; digits < 3; ++digits) {
            millis *= 10;
        }
    }
    if (pos + 1 != text.size() || text[pos] != 'Z') {
        throw std::invalid_argument("timestamp must be UTC ('Z'): " + text);
    }
    const std::int64_t days = days_from_civil(y, mo, d);
    return days * 86400 * kMsPerSecond + (static_cast<TimeMs>(h) * 3600 + mi * 60 + s) * kMsPerSecond + millis;
}

TimeMs parse_duration(const std::string& text) {
    if (text.empty()) {
        throw std::invalid_argument("empty duration");
    }
    if (text.find(':') != std::string::npos) {
        unsigned h = 0;
        unsigned m = 0;
        unsigned s = 0;
        int consumed = 0;
        const int n = std::sscanf(text.c_str(), "%u:%u%n:%u%n", &h, &m, &consumed, &s, &consumed);
        if (n < 2 || static_cast<std::size_t>(consumed) != text.size() || m > 59 || s > 59) {
            throw std::invalid_argument("bad clock duration: " + text);
        }
        return (static_cast<TimeMs>(h) * 3600 + m * 60 + s) * kMsPerSecond;
    }
    TimeMs total = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t start = pos;
        double value = 0.0;
        bool any = false;
        while (pos < text.size() && (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.')) {
            ++pos;
            any = true;
        }
        if (!any) {
            throw std::invalid_argument("bad duration: " + text);
        }
        value = std::stod(text.substr(start, pos - start));
        std::size_t unit_start = pos;
        while (pos < text.size() && std::isalpha(static_cast<unsigned char>(text[pos]))) {
            ++pos;
        }
        const std::string unit = text.substr(unit_start, pos - unit_start);
        double scale = 0.0;
        if (unit.empty() || unit == "s") {
            scale = kMsPerSecond;
        } else if (unit == "ms") {
            scale = 1.0;
        } else if (unit == "m" || unit == "min") {
            scale = kMsPerMinute;
        } else if (unit == "h") {
            scale = kMsPerHour;
        } else if (unit == "d") {
            scale = 24.0 * kMsPerHour;
        } else {
            throw std::invalid_argument("unknown duration unit '" + unit + "' in " + text);
        }
        total += static_cast<TimeMs>(value * scale + 0.5);
    }
    return total;
}

} // namespace v2g
