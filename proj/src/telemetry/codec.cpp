// SPDX-License-Identifier: Apache-2.0
#include "v2g/telemetry/codec.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2g::telemetry {

namespace {

Frame make_frame(std::uint16_t can_id, std::initializer_list<std::uint8_t> payload) {
    Frame frame;
    frame.can_id = can_id;
    frame.data[0] = static_cast<std::uint8_t>(payload.size());
    std::size_t i = 1;
    for (std::uint8_t byte : payload) {
        frame.data[i++] = byte;
    }
    return frame;
}

[[noreturn]] void malformed(const std::string& why) { throw CodecError(CodecErrc::MalformedFrame, why); }

[[noreturn]] void unknown(const std::string& why) { throw CodecError(CodecErrc::UnknownPid, why); }

std::string hex16(unsigned v) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%X", v);
    return buf;
}

} // namespace

std::string_view to_string(ReadingKind kind) {
    switch (kind) {
    case ReadingKind::SocPercent:
        return "SocPercent";
    case ReadingKind::BatteryCapacityKwh:
        return "BatteryCapacityKwh";
    case ReadingKind::VehicleSpeedKph:
        return "VehicleSpeedKph";
    }
    return "?";
}

ReadingKind reading_kind_from_string(std::string_view name) {
    for (auto kind : {ReadingKind::SocPercent, ReadingKind::BatteryCapacityKwh, ReadingKind::VehicleSpeedKph}) {
        if (to_string(kind) == name) {
            return kind;
        }
    }
    throw std::invalid_argument("unknown reading kind: " + std::string(name));
}

std::string_view to_string(CodecErrc code) {
    switch (code) {
    case CodecErrc::MalformedFrame:
        return "MalformedFrame";
    case CodecErrc::UnknownPid:
        return "UnknownPid";
    }
    return "?";
}

Frame encode_request(ReadingKind kind) {
    switch (kind) {
    case ReadingKind::SocPercent:
        return make_frame(kFunctionalRequestId, {kModeCurrentData, kPidHybridBatteryRemaining});
    case ReadingKind::VehicleSpeedKph:
        return make_frame(kFunctionalRequestId, {kModeCurrentData, kPidVehicleSpeed});
    case ReadingKind::BatteryCapacityKwh:
        return make_frame(kFunctionalRequestId,
                          {kModeReadDataById, static_cast<std::uint8_t>(kDidBatteryCapacity >> 8),
                           static_cast<std::uint8_t>(kDidBatteryCapacity & 0xFF)});
    }
    throw std::logic_error("unhandled reading kind");
}

double soc_from_raw(std::uint8_t raw) { return 100.0 * static_cast<double>(raw) / 255.0; }

Reading decode_response(const Frame& frame, TimeMs timestamp) {
    if (frame.can_id != kResponseId) {
        malformed("response must use identifier 0x7E8, got " + hex16(frame.can_id));
    }
    const std::size_t length = frame.data[0];
    if (length < 1 || length > 7) {
        malformed("single-frame length byte out of range: " + std::to_string(length));
    }
    const auto* payload = frame.data.data() + 1;
    const std::uint8_t mode = payload[0];

    if (mode == kNegativeResponse) {
        if (length != 3) {
            malformed("negative response must carry 3 bytes");
        }
        unknown("negative response to mode " + hex16(payload[1]) + ", code " + hex16(payload[2]));
    }

    Reading reading;
    reading.timestamp = timestamp;
    if (mode == kModeCurrentData + kPositiveResponseOffset) {
        if (length < 2) {
            malformed("mode 0x41 response without PID");
        }
        const std::uint8_t pid = payload[1];
        reading.source_pid = pid;
        if (pid != kPidHybridBatteryRemaining && pid != kPidVehicleSpeed) {
            unknown("unsupported PID " + hex16(pid));
        }
        if (length != 3) {
            malformed("PID " + hex16(pid) + " expects exactly one data byte");
        }
        const std::uint8_t a = payload[2];
        if (pid == kPidHybridBatteryRemaining) {
            reading.kind = ReadingKind::SocPercent;
            reading.value = soc_from_raw(a);
        } else {
            reading.kind = ReadingKind::VehicleSpeedKph;
            reading.value = a;
        }
        return reading;
    }
    if (mode == kModeReadDataById + kPositiveResponseOffset) {
        if (length < 3) {
            malformed("mode 0x62 response without data identifier");
        }
        const auto did = static_cast<std::uint16_t>((payload[1] << 8) | payload[2]);
        reading.source_pid = did;
        if (did != kDidBatteryCapacity) {
            unknown("unsupported data identifier " + hex16(did));
        }
        if (length != 5) {
            malformed("data identifier 0xF015 expects exactly two data bytes");
        }
        const unsigned raw = (static_cast<unsigned>(payload[3]) << 8) + payload[4];
        if (raw == 0) {
            malformed("battery capacity must be positive");
        }
        reading.kind = ReadingKind::BatteryCapacityKwh;
        reading.value = static_cast<double>(raw) / 10.0;
        return reading;
    }
    malformed("not a positive response to a supported mode: " + hex16(mode));
}

Frame synthesize_response(ReadingKind kind, std::uint16_t raw) {
    switch (kind) {
    case ReadingKind::SocPercent:
    case ReadingKind::VehicleSpeedKph:
        if (raw > 0xFF) {
            throw std::out_of_range("one-byte reading out of range");
        }
        return make_frame(kResponseId,
                          {static_cast<std::uint8_t>(kModeCurrentData + kPositiveResponseOffset),
                           kind == ReadingKind::SocPercent ? kPidHybridBatteryRemaining : kPidVehicleSpeed,
                           static_cast<std::uint8_t>(raw)});
    case ReadingKind::BatteryCapacityKwh:
        return make_frame(kResponseId,
                          {static_cast<std::uint8_t>(kModeReadDataById + kPositiveResponseOffset),
                           static_cast<std::uint8_t>(kDidBatteryCapacity >> 8),
                           static_cast<std::uint8_t>(kDidBatteryCapacity & 0xFF), static_cast<std::uint8_t>(raw >> 8),
                           static_cast<std::uint8_t>(raw & 0xFF)});
    }
    throw std::logic_error("unhandled reading kind");
}

Frame negative_response(std::uint8_t mode) {
    return make_frame(kResponseId, {kNegativeResponse, mode, kRequestOutOfRange});
}

Frame parse_frame_hex(std::string_view text) {
    std::vector<unsigned> values;
    std::size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) {
            ++pos;
        }
        if (pos >= text.size()) {
            break;
        }
        std::size_t end = pos;
        while (end < text.size() && text[end] != ' ' && text[end] != '\t') {
            ++end;
        }
        std::string_view token = text.substr(pos, end - pos);
        if (token.size() > 2 && token[0] == '0' && (token[1] == 'x' || token[1] == 'X')) {
            token.remove_prefix(2);
        }
        unsigned value = 0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value, 16);
        if (ec != std::errc() || ptr != token.data() + token.size()) {
            throw std::invalid_argument("bad hex token: " + std::string(token));
        }
        values.push_back(value);
        pos = end;
    }
    if (values.size() != 9) {
        throw std::invalid_argument("expected identifier plus 8 bytes, got " + std::to_string(values.size()) +
                                    " tokens");
    }
    Frame frame;
    if (values[0] > 0x7FF) {
        throw std::invalid_argument("identifier exceeds 11 bits");
    }
    frame.can_id = static_cast<std::uint16_t>(values[0]);
    for (std::size_t i = 0; i < 8; ++i) {
        if (values[i + 1] > 0xFF) {
            throw std::invalid_argument("byte out of range");
        }
        frame.data[i] = static_cast<std::uint8_t>(values[i + 1]);
    }
    return frame;
}

std::string to_hex(const Frame& frame) {
    char buf[64];
    const auto& d = frame.data;
    std::snprintf(buf, sizeof buf, "%03X %02X %02X %02X %02X %02X %02X %02X %02X", frame.can_id, d[0], d[1], d[2], d[3],
                  d[4], d[5], d[6], d[7]);
    return buf;
}

} // namespace v2g::telemetry
