// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conformance drivers shared by the unit tests and the acceptance binary.
// They report mismatches as strings instead of asserting.

#include <array>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "v2g/bus/topic.hpp"
#include "v2g/ocpp/central_system.hpp"

namespace v2g::conformance {

inline ocpp::ChargePointStatus make_cp(ocpp::CpState state) {
    using ocpp::CpState;
    ocpp::ChargePointStatus cp;
    cp.cp_id = "CP1";
    cp.rating_kw = 7.0;
    cp.bidirectional = true;
    cp.booted = true;
    cp.state = state;
    switch (state) {
    case CpState::Reserved:
        cp.reservation = ocpp::ReservationHold{1, "ev1", 1000};
        break;
    case CpState::Preparing:
    case CpState::Finishing:
        cp.connected_vehicle = "ev1";
        cp.ev_max_charge_kw = 7.0;
        cp.ev_max_discharge_kw = 7.0;
        break;
    case CpState::Charging:
    case CpState::Discharging:
        cp.connected_vehicle = "ev1";
        cp.ev_max_charge_kw = 7.0;
        cp.ev_max_discharge_kw = 7.0;
        cp.transaction_id = 1;
        cp.active_setpoint_kw = state == CpState::Charging ? 3.0 : -3.0;
        break;
    default:
        break;
    }
    return cp;
}

struct SurfaceResult {
    int pairs = 0;
    std::vector<std::string> mismatches;
};

/// Drives every (state, action) pair through the OCPP dispatch surface and
/// compares the outcome with the transition table.
inline SurfaceResult enumerate_transition_surface() {
    using namespace ocpp;
    using nlohmann::json;
    const std::vector<std::string> actions{
        "BootNotification",  "Heartbeat",           "Authorize",          "MeterValues",
        "Status:Available",  "Status:Available@exp", "Status:Preparing",  "Status:Faulted",
        "Status:Reserved",   "Status:Charging",     "Status:Discharging", "Status:Finishing",
        "StartTransaction",  "StopTransaction",     "ReserveNow",         "CancelReservation",
        "Profile:+",         "Profile:-"};
    // '=' accepted without a state change, '!' rejected with the state unchanged.
    const std::map<std::string, std::array<const char*, 7>> expected{
        //                        Available   Reserved     Preparing  Charging     Discharging  Finishing    Faulted
        {"BootNotification",     {"=",        "=",         "=",       "=",         "=",         "=",         "="}},
        {"Heartbeat",            {"=",        "=",         "=",       "=",         "=",         "=",         "="}},
        {"Authorize",            {"=",        "=",         "=",       "=",         "=",         "=",         "="}},
        {"MeterValues",          {"=",        "=",         "=",       "=",         "=",         "=",         "="}},
        {"Status:Available",     {"=",        "!",         "!",       "!",         "!",         "Available", "Available"}},
        {"Status:Available@exp", {"=",        "Available", "!",       "!",         "!",         "Available", "Available"}},
        {"Status:Preparing",     {"Preparing", "Preparing", "=",      "!",         "!",         "!",         "!"}},
        {"Status:Faulted",       {"Faulted",  "Faulted",   "Faulted", "Faulted",   "Faulted",   "Faulted",   "="}},
        {"Status:Reserved",      {"!",        "=",         "!",       "!",         "!",         "!",         "!"}},
        {"Status:Charging",      {"!",        "!",         "!",       "=",         "!",         "!",         "!"}},
        {"Status:Discharging",   {"!",        "!",         "!",       "!",         "=",         "!",         "!"}},
        {"Status:Finishing",     {"!",        "!",         "!",       "!",         "!",         "=",         "!"}},
        {"StartTransaction",     {"!",        "!",         "Charging", "!",        "!",         "!",         "!"}},
        {"StopTransaction",      {"!",        "!",         "!",       "Finishing", "Finishing", "!",         "!"}},
        {"ReserveNow",           {"Reserved", "!",         "!",       "!",         "!",         "!",         "!"}},
        {"CancelReservation",    {"!",        "Available", "!",       "!",         "!",         "!",         "!"}},
        {"Profile:+",            {"!",        "!",         "!",       "Charging",  "Charging",  "!",         "!"}},
        {"Profile:-",            {"!",        "!",         "!",       "Discharging", "Discharging", "!",     "!"}},
    };
    auto status_payload = [](const std::string& status) {
        return json{{"connectorId", 1}, {"errorCode", "NoError"}, {"status", status}, {"x_vehicleId", "ev1"}};
    };
    SurfaceResult r;
    for (std::size_t si = 0; si < kAllStates.size(); ++si) {
        for (const auto& action : actions) {
            const ChargePointStatus before = make_cp(kAllStates[si]);
            const std::string where = std::string(to_string(before.state)) + " x " + action;
            ++r.pairs;
            if (auto bad = check_invariants(before)) {
                r.mismatches.push_back(where + ": fixture breaks an invariant: " + *bad);
                continue;
            }
            ChargePointStatus after = before;
            bool rejected = false;
            DispatchContext ctx;
            ctx.now = action.ends_with("@exp") ? 1000 : 0;
            auto run = [&](const std::string& name, json payload) {
                const auto out = dispatch(before, OcppMessage::call("id", name, std::move(payload)), ctx);
                if (out.response.message_id != "id") {
                    r.mismatches.push_back(where + ": reply id " + out.response.message_id);
                }
                rejected = out.response.kind == FrameKind::CallError;
                if (rejected && (out.response.error_code != "ProtocolError" || !(out.status == before))) {
                    r.mismatches.push_back(where + ": rejection changed state or used " + out.response.error_code);
                }
                after = out.status;
            };
            if (action == "BootNotification") {
                run(action, {{"chargePointModel", "m"}, {"chargePointVendor", "v"}});
            } else if (action == "Heartbeat") {
                run(action, json::object());
            } else if (action == "Authorize") {
                run(action, {{"idTag", "ev1"}});
            } else if (action == "MeterValues") {
                run(action, {{"connectorId", 1}, {"meterValue", json::array()}});
            } else if (action.starts_with("Status:")) {
                std::string st = action.substr(7);
                st = st.substr(0, st.find('@'));
                run("StatusNotification", status_payload(st));
            } else if (action == "StartTransaction") {
                run(action, {{"connectorId", 1}, {"idTag", "ev1"}, {"meterStart", 0}});
            } else if (action == "StopTransaction") {
                run(action, {{"transactionId", 1}, {"meterStop", 0}});
            } else {
                try {
                    if (action == "ReserveNow") {
                        after = reserve(before, ReservationHold{5, "ev1", 9000});
                    } else if (action == "CancelReservation") {
                        after = cancel_reservation(before, 1);
                    } else {
                        ChargingProfile p;
                        p.profile_id = 1;
                        p.cp_id = "CP1";
                        p.vehicle_id = "ev1";
                        p.periods = {{0, action == "Profile:+" ? 5.0 : -5.0}};
                        p.valid_from = 0;
                        p.valid_to = 4 * kMsPerHour;
                        after = apply_charging_profile(before, p, 0);
                    }
                } catch (const OcppError& e) {
                    rejected = true;
                    if (e.code() != OcppErrc::ProtocolViolation && e.code() != OcppErrc::NotInTransaction) {
                        r.mismatches.push_back(where + ": unexpected error " + e.what());
                    }
                }
            }
            const std::string want = expected.at(action)[si];
            if (want == "!") {
                if (!rejected) {
                    r.mismatches.push_back(where + ": accepted, table says reject");
                }
            } else if (rejected) {
                r.mismatches.push_back(where + ": rejected, table says " + want);
            } else if (want == "=" ? after.state != before.state : std::string(to_string(after.state)) != want) {
                r.mismatches.push_back(where + ": reached " + std::string(to_string(after.state)) + ", table says " + want);
            }
            if (auto bad = check_invariants(after)) {
                r.mismatches.push_back(where + ": result breaks an invariant: " + *bad);
            }
        }
    }
    return r;
}

struct TranscriptResult {
    int frames = 0;
    std::vector<std::string> diffs;
};

/// Replays a golden transcript against a fresh central system with one
/// charge point CP1 (7 kW, bidirectional).
inline TranscriptResult replay_transcript(const std::string& path) {
    using namespace ocpp;
    TranscriptResult r;
    std::ifstream in(path);
    if (!in) {
        r.diffs.push_back("cannot open " + path);
        return r;
    }
    std::deque<std::string> emitted;
    int violations = 0;
    CentralSystem cs(CentralSystemHooks{[&](const std::string&, const std::string& f) { emitted.push_back(f); },
                                        nullptr, nullptr, nullptr, nullptr,
                                        [&](const std::string&, const std::string&) { ++violations; }});
    cs.register_charge_point("CP1", 7.0, true);
    TimeMs now = 0;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const std::string at = "line " + std::to_string(lineno) + ": ";
        const char tag = line[0];
        const std::string rest = line.size() > 2 ? line.substr(2) : "";
        if (tag == '@') {
            now = from_iso8601(rest);
            cs.tick(now);
        } else if (tag == '>') {
            cs.handle_frame("CP1", rest, now);
        } else if (tag == '<') {
            ++r.frames;
            if (emitted.empty()) {
                r.diffs.push_back(at + "expected " + rest + " but nothing was emitted");
                continue;
            }
            if (emitted.front() != rest) {
                r.diffs.push_back(at + "expected " + rest + " got " + emitted.front());
            }
            emitted.pop_front();
        } else if (tag == '=') {
            std::istringstream ss(rest);
            std::string state;
            double kw = 0;
            ss >> state >> kw;
            const auto& st = cs.status("CP1");
            if (std::string(to_string(st.state)) != state || st.active_setpoint_kw != kw) {
                r.diffs.push_back(at + "state " + std::string(to_string(st.state)) + " " +
                                  std::to_string(st.active_setpoint_kw) + ", expected " + rest);
            }
        } else if (tag == '?') {
            if (violations != std::stoi(rest)) {
                r.diffs.push_back(at + std::to_string(violations) + " violations, expected " + rest);
            }
        } else if (tag == '!') {
            std::istringstream ss(rest);
            std::string verb;
            ss >> verb;
            if (verb == "reserve") {
                std::int64_t rid = 0;
                std::string vehicle, expiry;
                ss >> rid >> vehicle >> expiry;
                cs.send_reserve_now("CP1", {rid, vehicle, from_iso8601(expiry)});
            } else {
                ChargingProfile p;
                std::string from, to, periods;
                ss >> p.profile_id >> p.vehicle_id >> from >> to >> periods;
                p.cp_id = "CP1";
                p.valid_from = from_iso8601(from);
                p.valid_to = from_iso8601(to);
                std::istringstream ps(periods);
                std::string item;
                while (std::getline(ps, item, ',')) {
                    const auto colon = item.find(':');
                    p.periods.push_back({std::stoll(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
                }
                cs.send_charging_profile("CP1", p);
            }
        }
        if (tag != '<' && tag != '!' && tag != '>' && !emitted.empty()) {
            // every emitted frame must be accounted for before the next directive
            r.diffs.push_back(at + "unexpected frame " + emitted.front());
            emitted.clear();
        }
    }
    for (const auto& f : emitted) {
        r.diffs.push_back("unexpected trailing frame " + f);
    }
    return r;
}

// ---- topic matching ------------------------------------------------------------

/// Reference matcher over segment vectors, independent of the production one.
inline bool ref_match(const std::vector<std::string>& f, std::size_t i, const std::vector<std::string>& t, std::size_t j) {
    if (i == f.size()) {
        return j == t.size();
    }
    if (f[i] == "#") {
        return true;
    }
    if (j == t.size()) {
        return false;
    }
    if (f[i] == "+" || f[i] == t[j]) {
        return ref_match(f, i + 1, t, j + 1);
    }
    return false;
}

inline std::string join_topic(const std::vector<std::string>& segs) {
    std::string out;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        out += (i ? "/" : "") + segs[i];
    }
    return out;
}

inline void enumerate_segments(const std::vector<std::string>& alphabet, std::size_t max_len,
                               const std::function<void(const std::vector<std::string>&)>& visit) {
    std::vector<std::string> cur;
    std::function<void()> rec = [&] {
        if (!cur.empty()) {
            visit(cur);
        }
        if (cur.size() == max_len) {
            return;
        }
        for (const auto& s : alphabet) {
            cur.push_back(s);
            rec();
            cur.pop_back();
        }
    };
    rec();
}

struct TopicResult {
    std::size_t cases = 0;
    std::size_t mismatches = 0;
    std::size_t invalid_filters = 0;
    std::size_t misclassified = 0;
};

/// Every filter over {a,b,c,+,#} against every topic over {a,b,c}, up to four
/// levels. Filters with '#' before the last level must be rejected.
inline TopicResult topic_corpus() {
    TopicResult r;
    std::vector<std::vector<std::string>> topics;
    enumerate_segments({"a", "b", "c"}, 4, [&](const auto& t) { topics.push_back(t); });
    enumerate_segments({"a", "b", "c", "+", "#"}, 4, [&](const std::vector<std::string>& f) {
        bool hash_inside = false;
        for (std::size_t i = 0; i + 1 < f.size(); ++i) {
            hash_inside = hash_inside || f[i] == "#";
        }
        const std::string filter = join_topic(f);
        if (hash_inside) {
            ++r.invalid_filters;
            try {
                bus::validate_filter(filter);
                ++r.misclassified;
            } catch (const bus::TopicError&) {
            }
            return;
        }
        for (const auto& t : topics) {
            ++r.cases;
            if (bus::topic_matches(filter, join_topic(t)) != ref_match(f, 0, t, 0)) {
                ++r.mismatches;
            }
        }
    });
    return r;
}

} // namespace v2g::conformance
