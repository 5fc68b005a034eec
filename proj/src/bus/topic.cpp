// SPDX-License-Identifier: Apache-2.0
#include "v2g/bus/topic.hpp"

#include <vector>

namespace v2g::bus {

namespace {

std::vector<std::string_view> split(std::string_view s) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t slash = s.find('/', start);
        if (slash == std::string_view::npos) {
            parts.push_back(s.substr(start));
            return parts;
        }
        parts.push_back(s.substr(start, slash - start));
        start = slash + 1;
    }
}

} // namespace

bool is_valid_topic(std::string_view topic) {
    if (topic.empty()) {
        return false;
    }
    for (std::string_view seg : split(topic)) {
        if (seg.empty() || seg.find_first_of("+#") != std::string_view::npos) {
            return false;
        }
    }
    return true;
}

void validate_topic(std::string_view topic) {
    if (!is_valid_topic(topic)) {
        throw TopicError(TopicErrc::InvalidTopic, "invalid topic '" + std::string(topic) + "'");
    }
}

void validate_filter(std::string_view filter) {
    auto fail = [&](const char* why) {
        throw TopicError(TopicErrc::InvalidFilter, "invalid filter '" + std::string(filter) + "': " + why);
    };
    if (filter.empty()) {
        fail("empty");
    }
    const auto segs = split(filter);
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const std::string_view seg = segs[i];
        if (seg.empty()) {
            fail("empty segment");
        }
        if (seg == "#") {
            if (i + 1 != segs.size()) {
                fail("'#' must be the last segment");
            }
        } else if (seg != "+" && seg.find_first_of("+#") != std::string_view::npos) {
            fail("wildcards must occupy a whole segment");
        }
    }
}

bool topic_matches(std::string_view filter, std::string_view topic) {
    validate_filter(filter);
    validate_topic(topic);
    const auto f = split(filter);
    const auto t = split(topic);
    std::size_t i = 0;
    for (; i < f.size(); ++i) {
        if (f[i] == "#") {
            return true;
        }
        if (i >= t.size()) {
            return false;
        }
        if (f[i] != "+" && f[i] != t[i]) {
            return false;
        }
    }
    return i == t.size();
}

std::string telemetry_topic(std::string_view vehicle_id) { return "v2g/" + std::string(vehicle_id) + "/telemetry"; }

std::string preferences_topic(std::string_view vehicle_id) {
    return "v2g/" + std::string(vehicle_id) + "/preferences";
}

std::string cp_status_topic(std::string_view cp_id) { return "v2g/cp/" + std::string(cp_id) + "/status"; }

std::string cp_ocpp_up_topic(std::string_view cp_id) { return "v2g/cp/" + std::string(cp_id) + "/ocpp/up"; }

std::string cp_ocpp_down_topic(std::string_view cp_id) { return "v2g/cp/" + std::string(cp_id) + "/ocpp/down"; }

} // namespace v2g::bus
