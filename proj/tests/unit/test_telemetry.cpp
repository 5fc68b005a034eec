// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "v2g/telemetry/codec.hpp"

using namespace v2g::telemetry;

namespace {

Frame frame_of(std::uint16_t id, std::array<std::uint8_t, 8> bytes) { return Frame{id, bytes}; }

CodecErrc error_of(const Frame& f) {
    try {
        decode_response(f, 0);
    } catch (const CodecError& e) {
        return e.code();
    }
    FAIL("expected a codec error for " << to_hex(f));
    return CodecErrc::MalformedFrame;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

} // namespace

TEST_CASE("request encoding is byte exact") {
    CHECK(encode_request(ReadingKind::SocPercent) == frame_of(0x7DF, {0x02, 0x01, 0x5B, 0, 0, 0, 0, 0}));
    CHECK(encode_request(ReadingKind::VehicleSpeedKph) == frame_of(0x7DF, {0x02, 0x01, 0x0D, 0, 0, 0, 0, 0}));
    CHECK(encode_request(ReadingKind::BatteryCapacityKwh) == frame_of(0x7DF, {0x03, 0x22, 0xF0, 0x15, 0, 0, 0, 0}));
}

TEST_CASE("decode examples") {
    CHECK(decode_response(frame_of(0x7E8, {0x03, 0x41, 0x5B, 0xFF}), 0).value == 100.0);
    CHECK(decode_response(frame_of(0x7E8, {0x03, 0x41, 0x5B, 0x00}), 0).value == 0.0);

    // 100*128/255 written as 50 + 50/255, since 128 = 255/2 + 1/2
    const auto half = decode_response(frame_of(0x7E8, {0x03, 0x41, 0x5B, 0x80}), 1234);
    CHECK(half.kind == ReadingKind::SocPercent);
    CHECK(half.source_pid == 0x5B);
    CHECK(half.timestamp == 1234);
    CHECK(half.value == doctest::Approx(50.0 + 50.0 / 255.0).epsilon(1e-15));
    CHECK(half.value == doctest::Approx(50.196).epsilon(1e-5));

    // 0x0190 = 1*256 + 9*16 + 0 = 400 -> 40.0 kWh
    const auto cap = decode_response(frame_of(0x7E8, {0x05, 0x62, 0xF0, 0x15, 0x01, 0x90}), 0);
    CHECK(cap.kind == ReadingKind::BatteryCapacityKwh);
    CHECK(cap.source_pid == 0xF015);
    CHECK(cap.value == 40.0);
}

TEST_CASE("length byte must count the meaningful bytes") {
    // five meaningful bytes follow, so a length of four truncates the capacity field
    CHECK(error_of(frame_of(0x7E8, {0x04, 0x62, 0xF0, 0x15, 0x01, 0x90})) == CodecErrc::MalformedFrame);
}

TEST_CASE("soc_from_raw matches a rational reference over every byte") {
    CHECK(soc_from_raw(0) == 0.0);
    CHECK(soc_from_raw(255) == 100.0);
    CHECK(soc_from_raw(51) == 20.0);
    for (int a = 0; a <= 255; ++a) {
        // reference: compare p = 100a/255 against the exact rational via cross-multiplication
        const double p = soc_from_raw(static_cast<std::uint8_t>(a));
        CHECK(std::fabs(p * 255.0 - 100.0 * a) <= 1e-10);
        if (a % 51 == 0) {
            CHECK(p == static_cast<double>(a / 51 * 20));
        }
        if (a > 0) {
            CHECK(p > soc_from_raw(static_cast<std::uint8_t>(a - 1)));
        }
    }
}

TEST_CASE("round trip is exhaustive over one-byte payloads") {
    for (unsigned raw = 0; raw <= 0xFF; ++raw) {
        const auto soc = decode_response(synthesize_response(ReadingKind::SocPercent, raw), 7);
        CHECK(soc.kind == ReadingKind::SocPercent);
        CHECK(soc.value == soc_from_raw(static_cast<std::uint8_t>(raw)));
        const auto speed = decode_response(synthesize_response(ReadingKind::VehicleSpeedKph, raw), 7);
        CHECK(speed.kind == ReadingKind::VehicleSpeedKph);
        CHECK(speed.value == static_cast<double>(raw));
    }
}

TEST_CASE("round trip is sampled over two-byte payloads") {
    std::mt19937_64 rng(20240601);
    for (unsigned raw : {1u, 2u, 255u, 256u, 400u, 0xFFFEu, 0xFFFFu}) {
        CHECK(decode_response(synthesize_response(ReadingKind::BatteryCapacityKwh, raw), 0).value == raw / 10.0);
    }
    for (int i = 0; i < 5000; ++i) {
        const auto raw = static_cast<std::uint16_t>(1 + rng() % 0xFFFF);
        const auto r = decode_response(synthesize_response(ReadingKind::BatteryCapacityKwh, raw), 0);
        CHECK(r.kind == ReadingKind::BatteryCapacityKwh);
        CHECK(r.value == static_cast<double>(raw) / 10.0);
    }
    CHECK_THROWS_AS(synthesize_response(ReadingKind::SocPercent, 256), std::out_of_range);
}

TEST_CASE("decode classifies arbitrary frames without crashing") {
    std::mt19937_64 rng(7);
    int readings = 0;
    int errors = 0;
    for (int i = 0; i < 200000; ++i) {
        Frame f;
        // bias towards plausible frames so both branches are exercised
        f.can_id = (rng() % 4 == 0) ? static_cast<std::uint16_t>(rng() & 0x7FF) : kResponseId;
        for (auto& b : f.data) {
            b = static_cast<std::uint8_t>(rng());
        }
        if (rng() % 2 == 0) {
            f.data[0] = static_cast<std::uint8_t>(rng() % 9);
            const std::uint8_t modes[] = {0x41, 0x62, 0x7F, 0x01};
            f.data[1] = modes[rng() % 4];
        }
        try {
            const auto r = decode_response(f, 0);
            ++readings;
            switch (r.kind) {
            case ReadingKind::SocPercent:
                CHECK((r.value >= 0.0 && r.value <= 100.0));
                break;
            case ReadingKind::BatteryCapacityKwh:
                CHECK(r.value > 0.0);
                break;
            case ReadingKind::VehicleSpeedKph:
                CHECK(r.value >= 0.0);
                break;
            }
        } catch (const CodecError&) {
            ++errors;
        }
    }
    CHECK(readings > 0);
    CHECK(errors > 0);
}

TEST_CASE("golden corpus") {
    std::ifstream in(V2G_TEST_DATA_DIR "/telemetry_golden.txt");
    REQUIRE(in.good());
    std::string line;
    int checked = 0;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto arrow = line.find("=>");
        REQUIRE(arrow != std::string::npos);
        const std::string lhs = trim(line.substr(0, arrow));
        const std::string rhs = trim(line.substr(arrow + 2));
        std::istringstream words(lhs);
        std::string verb;
        words >> verb;
        std::string rest;
        std::getline(words, rest);
        rest = trim(rest);
        CAPTURE(line);
        if (verb == "encode") {
            CHECK(encode_request(reading_kind_from_string(rest)) == parse_frame_hex(rhs));
            ++checked;
        } else if (verb == "decode") {
            const Frame f = parse_frame_hex(rest);
            if (rhs[0] == '!') {
                CHECK(to_string(error_of(f)) == rhs.substr(1));
            } else {
                std::istringstream expect(rhs);
                std::string kind;
                double value = 0;
                expect >> kind >> value;
                const auto r = decode_response(f, 0);
                CHECK(to_string(r.kind) == kind);
                CHECK(r.value == doctest::Approx(value).epsilon(1e-15));
            }
            ++checked;
        }
        // "answer" lines exercise the vehicle side and are replayed by test_ev
    }
    CHECK(checked >= 20);
}

TEST_CASE("hex helpers") {
    const Frame f = parse_frame_hex("0x7E8 0x03 41 5B 80 00 00 00 00");
    CHECK(f == frame_of(0x7E8, {0x03, 0x41, 0x5B, 0x80}));
    CHECK(to_hex(f) == "7E8 03 41 5B 80 00 00 00 00");
    CHECK_THROWS_AS(parse_frame_hex("7E8 03 41"), std::invalid_argument);
    CHECK_THROWS_AS(parse_frame_hex("800 00 00 00 00 00 00 00 00"), std::invalid_argument);
}
