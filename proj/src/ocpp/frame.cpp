// SPDX-License-Identifier: Apache-2.0
#include "v2g/ocpp/frame.hpp"

namespace v2g::ocpp {

using nlohmann::json;

std::string_view to_string(OcppErrc code) {
    switch (code) {
    case OcppErrc::MalformedJson:
        return "MalformedJson";
    case OcppErrc::BadFrameShape:
        return "BadFrameShape";
    case OcppErrc::DuplicateMessageId:
        return "DuplicateMessageId";
    case OcppErrc::ProtocolViolation:
        return "ProtocolViolation";
    case OcppErrc::ProfileRejected:
        return "ProfileRejected";
    case OcppErrc::NotInTransaction:
        return "NotInTransaction";
    }
    return "?";
}

OcppMessage OcppMessage::call(std::string id, std::string action, json payload) {
    OcppMessage m;
    m.kind = FrameKind::Call;
    m.message_id = std::move(id);
    m.action = std::move(action);
    m.payload = std::move(payload);
    return m;
}

OcppMessage OcppMessage::result(std::string id, json payload) {
    OcppMessage m;
    m.kind = FrameKind::CallResult;
    m.message_id = std::move(id);
    m.payload = std::move(payload);
    return m;
}

OcppMessage OcppMessage::error(std::string id, std::string code, std::string description) {
    OcppMessage m;
    m.kind = FrameKind::CallError;
    m.message_id = std::move(id);
    m.error_code = std::move(code);
    m.error_description = std::move(description);
    return m;
}

namespace {

[[noreturn]] void bad_shape(const std::string& why) { throw OcppError(OcppErrc::BadFrameShape, why); }

} // namespace

OcppMessage parse_frame(const std::string& text) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw OcppError(OcppErrc::MalformedJson, "frame is not valid JSON");
    }
    if (!j.is_array() || j.size() < 3) {
        bad_shape("frame must be a JSON array of at least 3 elements");
    }
    if (!j[0].is_number_integer()) {
        bad_shape("kind tag must be an integer");
    }
    const int tag = j[0].get<int>();
    if (!j[1].is_string() || j[1].get<std::string>().empty()) {
        bad_shape("message id must be a non-empty string");
    }
    OcppMessage m;
    m.message_id = j[1].get<std::string>();
    switch (tag) {
    case 2:
        if (j.size() != 4 || !j[2].is_string() || !j[3].is_object()) {
            bad_shape("Call must be [2,id,action,{payload}]");
        }
        m.kind = FrameKind::Call;
        m.action = j[2].get<std::string>();
        m.payload = j[3];
        return m;
    case 3:
        if (j.size() != 3 || !j[2].is_object()) {
            bad_shape("CallResult must be [3,id,{payload}]");
        }
        m.kind = FrameKind::CallResult;
        m.payload = j[2];
        return m;
    case 4:
        if (j.size() != 5 || !j[2].is_string() || !j[3].is_string() || !j[4].is_object()) {
            bad_shape("CallError must be [4,id,code,description,{details}]");
        }
        m.kind = FrameKind::CallError;
        m.error_code = j[2].get<std::string>();
        m.error_description = j[3].get<std::string>();
        m.payload = j[4];
        return m;
    default:
        bad_shape("unknown kind tag " + std::to_string(tag));
    }
}

std::string serialize(const OcppMessage& m) {
    json j = json::array();
    j.push_back(static_cast<int>(m.kind));
    j.push_back(m.message_id);
    switch (m.kind) {
    case FrameKind::Call:
        j.push_back(m.action);
        j.push_back(m.payload.is_null() ? json::object() : m.payload);
        break;
    case FrameKind::CallResult:
        j.push_back(m.payload.is_null() ? json::object() : m.payload);
        break;
    case FrameKind::CallError:
        j.push_back(m.error_code);
        j.push_back(m.error_description);
        j.push_back(m.payload.is_null() ? json::object() : m.payload);
        break;
    }
    return j.dump();
}

std::optional<std::string> salvage_message_id(const std::string& text) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_array() && j.size() >= 2 && j[0] == 2 && j[1].is_string() && !j[1].get<std::string>().empty()) {
        return j[1].get<std::string>();
    }
    return std::nullopt;
}

void PendingCalls::add(const std::string& id, const std::string& action, json payload) {
    if (!calls_.emplace(id, std::make_pair(action, std::move(payload))).second) {
        throw OcppError(OcppErrc::DuplicateMessageId, "call id '" + id + "' is already outstanding");
    }
}

std::optional<std::pair<std::string, json>> PendingCalls::take(const std::string& id) {
    auto it = calls_.find(id);
    if (it == calls_.end()) {
        return std::nullopt;
    }
    auto out = std::move(it->second);
    calls_.erase(it);
    return out;
}

} // namespace v2g::ocpp
