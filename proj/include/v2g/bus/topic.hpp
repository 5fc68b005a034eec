// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "v2g/core/error.hpp"

namespace v2g::bus {

enum class TopicErrc { InvalidTopic, InvalidFilter };
using TopicError = Error<TopicErrc>;

/// Topics are `/`-separated non-empty segments without wildcards.
bool is_valid_topic(std::string_view topic);
void validate_topic(std::string_view topic);

/// Filters may use `+` for exactly one segment and a trailing `#` for the remainder.
void validate_filter(std::string_view filter);

/// MQTT matching: `+` matches one segment, `#` matches zero or more trailing
/// segments (so `a/#` matches `a`). Throws TopicError on a bad filter or topic.
bool topic_matches(std::string_view filter, std::string_view topic);

// Fixed application topic scheme.
std::string telemetry_topic(std::string_view vehicle_id);
std::string preferences_topic(std::string_view vehicle_id);
std::string cp_status_topic(std::string_view cp_id);
/// OCPP frames from the charge point to the central system.
std::string cp_ocpp_up_topic(std::string_view cp_id);
/// OCPP frames from the central system to the charge point.
std::string cp_ocpp_down_topic(std::string_view cp_id);
inline constexpr std::string_view kScheduleTopic = "v2g/control/schedule";

} // namespace v2g::bus
