// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "v2g/core/error.hpp"
#include "v2g/core/time.hpp"

namespace v2g::bus {

// Stream framing: every control object travels as a 4-byte big-endian length
// followed by that many bytes of compact JSON text, e.g.
//   {"id":7,"op":"PUBLISH","payload_b64":"e30=","qos":1,"topic":"v2g/ev1/telemetry"}

inline constexpr std::size_t kMaxPayloadBytes = 256 * 1024;
// Base64 growth plus envelope fields.
inline constexpr std::size_t kMaxFrameBytes = kMaxPayloadBytes * 4 / 3 + 4096;

enum class Qos : int { AtMostOnce = 0, AtLeastOnce = 1 };

struct BusMessage {
    std::string topic;
    std::string payload;
    Qos qos = Qos::AtMostOnce;
    std::uint64_t message_id = 0;
    TimeMs sent_at = 0;
    /// Client id of the publishing session; filled in by the broker.
    std::string publisher;
};

enum class WireErrc { FrameTooLarge, MalformedJson, BadControlObject, BadBase64 };
using WireError = Error<WireErrc>;

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Length-prefixed encoding of one control object.
std::string encode_frame(const nlohmann::json& object);

/// Incremental decoder for a byte stream of frames.
class FrameDecoder {
public:
    /// Appends received bytes. Throws WireError(FrameTooLarge) on an oversized prefix.
    void feed(std::string_view bytes);

    /// Next complete object, if any. Throws WireError(MalformedJson).
    std::optional<nlohmann::json> next();

    std::size_t buffered() const { return buffer_.size(); }

private:
    std::string buffer_;
};

// Control object helpers.
nlohmann::json publish_object(const BusMessage& msg);
BusMessage message_from_object(const nlohmann::json& object);

} // namespace v2g::bus
