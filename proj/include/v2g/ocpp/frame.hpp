// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "v2g/core/error.hpp"

namespace v2g::ocpp {

enum class FrameKind : int { Call = 2, CallResult = 3, CallError = 4 };

enum class OcppErrc {
    MalformedJson,
    BadFrameShape,
    DuplicateMessageId,
    ProtocolViolation,
    ProfileRejected,
    NotInTransaction,
};
using OcppError = Error<OcppErrc>;

std::string_view to_string(OcppErrc code);

/// One OCPP-J frame:
///   [2,"<id>","<Action>",{...}]   Call
///   [3,"<id>",{...}]              CallResult
///   [4,"<id>","<code>","<desc>",{...}]  CallError
struct OcppMessage {
    FrameKind kind = FrameKind::Call;
    std::string message_id;
    std::string action;                                       // Call only
    nlohmann::json payload = nlohmann::json::object();        // error details for CallError
    std::string error_code;                                   // CallError only
    std::string error_description;                            // CallError only

    static OcppMessage call(std::string id, std::string action, nlohmann::json payload);
    static OcppMessage result(std::string id, nlohmann::json payload);
    static OcppMessage error(std::string id, std::string code, std::string description);

    bool operator==(const OcppMessage&) const = default;
};

/// Unknown actions parse successfully; rejecting them is dispatch's job.
/// Throws OcppError(MalformedJson / BadFrameShape).
OcppMessage parse_frame(const std::string& text);

/// Compact JSON text; object keys are emitted in sorted order.
std::string serialize(const OcppMessage& msg);

/// Best-effort extraction of the message id from a frame that failed to parse,
/// so the receiver can still answer with a CallError.
std::optional<std::string> salvage_message_id(const std::string& text);

/// Outstanding calls in one direction of a connection. Pairs results by id.
class PendingCalls {
public:
    /// Throws OcppError(DuplicateMessageId) if `id` is already outstanding.
    void add(const std::string& id, const std::string& action, nlohmann::json payload);

    /// Removes and returns the action/payload of the call answered by `id`.
    /// Empty when no such call is outstanding.
    std::optional<std::pair<std::string, nlohmann::json>> take(const std::string& id);

    std::size_t size() const { return calls_.size(); }
    bool contains(const std::string& id) const { return calls_.count(id) != 0; }

private:
    std::map<std::string, std::pair<std::string, nlohmann::json>> calls_;
};

} // namespace v2g::ocpp
