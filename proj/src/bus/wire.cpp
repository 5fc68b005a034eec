// SPDX-License-Identifier: Apache-2.0
#include "v2g/bus/wire.hpp"

#include <array>

namespace v2g::bus {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
    if (c >= 'A' && c <= 'Z') {
        return c - 'A';
    }
    if (c >= 'a' && c <= 'z') {
        return c - 'a' + 26;
    }
    if (c >= '0' && c <= '9') {
        return c - '0' + 52;
    }
    if (c == '+') {
        return 62;
    }
    if (c == '/') {
        return 63;
    }
    return -1;
}

} // namespace

std::string base64_encode(std::string_view bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) | static_cast<unsigned char>(bytes[i + 2]);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw WireError(WireErrc::BadBase64, "base64 length must be a multiple of 4");
    }
    std::string out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::array<int, 4> q{};
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                q[k] = 0;
                ++pad;
                continue;
            }
            if (pad > 0 || (q[k] = decode_char(c)) < 0) {
                throw WireError(WireErrc::BadBase64, "invalid base64 character");
            }
        }
        const unsigned v = (q[0] << 18) | (q[1] << 12) | (q[2] << 6) | q[3];
        out += static_cast<char>((v >> 16) & 0xFF);
        if (pad < 2) {
            out += static_cast<char>((v >> 8) & 0xFF);
        }
        if (pad < 1) {
            out += static_cast<char>(v & 0xFF);
        }
    }
    return out;
}

std::string encode_frame(const nlohmann::json& object) {
    const std::string body = object.dump();
    if (body.size() > kMaxFrameBytes) {
        throw WireError(WireErrc::FrameTooLarge, "frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes");
    }
    std::string out;
    out.reserve(body.size() + 4);
    const auto n = static_cast<std::uint32_t>(body.size());
    out += static_cast<char>((n >> 24) & 0xFF);
    out += static_cast<char>((n >> 16) & 0xFF);
    out += static_cast<char>((n >> 8) & 0xFF);
    out += static_cast<char>(n & 0xFF);
    out += body;
    return out;
}

void FrameDecoder::feed(std::string_view bytes) {
    buffer_.append(bytes.data(), bytes.size());
    if (buffer_.size() >= 4) {
        const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data());
        const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
        if (n > kMaxFrameBytes) {
            throw WireError(WireErrc::FrameTooLarge, "announced frame of " + std::to_string(n) + " bytes");
        }
    }
}

std::optional<nlohmann::json> FrameDecoder::next() {
    if (buffer_.size() < 4) {
        return std::nullopt;
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data());
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
    if (n > kMaxFrameBytes) {
        throw WireError(WireErrc::FrameTooLarge, "announced frame of " + std::to_string(n) + " bytes");
    }
    if (buffer_.size() < 4 + static_cast<std::size_t>(n)) {
        return std::nullopt;
    }
    std::string body = buffer_.substr(4, n);
    buffer_.erase(0, 4 + static_cast<std::size_t>(n));
    auto parsed = nlohmann::json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
        throw WireError(WireErrc::MalformedJson, "frame body is not a JSON object");
    }
    return parsed;
}

nlohmann::json publish_object(const BusMessage& msg) {
    nlohmann::json o = {{"op", "PUBLISH"},
                        {"topic", msg.topic},
                        {"qos", static_cast<int>(msg.qos)},
                        {"id", msg.message_id},
                        {"payload_b64", base64_encode(msg.payload)}};
    if (!msg.publisher.empty()) {
        o["from"] = msg.publisher;
        o["sent_at"] = msg.sent_at;
    }
    return o;
}

BusMessage message_from_object(const nlohmann::json& o) {
    try {
        BusMessage msg;
        msg.topic = o.at("topic").get<std::string>();
        const int qos = o.at("qos").get<int>();
        if (qos != 0 && qos != 1) {
            throw WireError(WireErrc::BadControlObject, "unsupported qos " + std::to_string(qos));
        }
        msg.qos = static_cast<Qos>(qos);
        msg.message_id = o.at("id").get<std::uint64_t>();
        msg.payload = base64_decode(o.at("payload_b64").get<std::string>());
        msg.publisher = o.value("from", std::string{});
        msg.sent_at = o.value("sent_at", TimeMs{0});
        return msg;
    } catch (const nlohmann::json::exception& e) {
        throw WireError(WireErrc::BadControlObject, std::string("bad PUBLISH object: ") + e.what());
    }
}

} // namespace v2g::bus
