// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "v2g/core/error.hpp"
#include "v2g/core/time.hpp"

namespace v2g::telemetry {

// Single-frame ISO-TP diagnostic exchange on 11-bit CAN identifiers.
//
//   byte 0      payload length (1..7), single-frame PCI with a zero high nibble
//   byte 1..n   payload: service/mode byte, identifier, data
//   byte n+1..7 padding, always 0x00 on encode and ignored on decode
//
// SoC:       request 01 5B        response 41 5B A       -> 100*A/255 %
// Speed:     request 01 0D        response 41 0D A       -> A km/h
// Capacity:  request 22 F0 15     response 62 F0 15 A B  -> ((A<<8)+B)/10 kWh
// Negative:  response 7F <mode> 31 (request out of range)

inline constexpr std::uint16_t kFunctionalRequestId = 0x7DF;
inline constexpr std::uint16_t kResponseId = 0x7E8;

inline constexpr std::uint8_t kModeCurrentData = 0x01;
inline constexpr std::uint8_t kModeReadDataById = 0x22;
inline constexpr std::uint8_t kPositiveResponseOffset = 0x40;
inline constexpr std::uint8_t kNegativeResponse = 0x7F;
inline constexpr std::uint8_t kRequestOutOfRange = 0x31;

inline constexpr std::uint8_t kPidVehicleSpeed = 0x0D;
inline constexpr std::uint8_t kPidHybridBatteryRemaining = 0x5B;
inline constexpr std::uint16_t kDidBatteryCapacity = 0xF015;

enum class ReadingKind { SocPercent, BatteryCapacityKwh, VehicleSpeedKph };

std::string_view to_string(ReadingKind kind);
ReadingKind reading_kind_from_string(std::string_view name);

/// One classic CAN frame as it crosses module boundaries.
struct Frame {
    std::uint16_t can_id = 0;
    std::array<std::uint8_t, 8> data{};

    friend bool operator==(const Frame&, const Frame&) = default;
};

struct Reading {
    ReadingKind kind = ReadingKind::SocPercent;
    double value = 0.0;
    /// PID for mode 0x01, data identifier for mode 0x22.
    std::uint16_t source_pid = 0;
    TimeMs timestamp = 0;
};

enum class CodecErrc { MalformedFrame, UnknownPid };
using CodecError = Error<CodecErrc>;

std::string_view to_string(CodecErrc code);

Frame encode_request(ReadingKind kind);

/// Decodes a positive response (or classifies a negative one as UnknownPid).
Reading decode_response(const Frame& frame, TimeMs timestamp);

/// Scales the raw SoC byte to percent.
double soc_from_raw(std::uint8_t raw);

/// Builds the ECU-side positive response for `raw`. One-byte kinds use the low
/// byte only; values wider than the field throw std::out_of_range.
Frame synthesize_response(ReadingKind kind, std::uint16_t raw);

/// Negative response `[03 7F mode 31 00 00 00 00]` for an unsupported identifier.
Frame negative_response(std::uint8_t mode);

/// Parses `7E8 03 41 5B 80 00 00 00 00` (identifier then eight bytes, hex).
Frame parse_frame_hex(std::string_view text);
std::string to_hex(const Frame& frame);

} // namespace v2g::telemetry
