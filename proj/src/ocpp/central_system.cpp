// SPDX-License-Identifier: Apache-2.0
#include "v2g/ocpp/central_system.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace v2g::ocpp {

using nlohmann::json;

namespace {

bool in_transaction(const ChargePointStatus& cp) {
    return cp.state == CpState::Charging || cp.state == CpState::Discharging;
}

/// Status after evaluating `profile` at `now`; an expired profile leaves the
/// connector charging at zero.
ChargePointStatus evaluate_profile(const ChargePointStatus& cp, std::optional<ChargingProfile>& profile, TimeMs now) {
    if (!profile || !in_transaction(cp)) {
        return cp;
    }
    if (!profile->limit_at(now)) {
        profile.reset();
        ChargePointStatus out = cp;
        out.state = CpState::Charging;
        out.active_setpoint_kw = 0.0;
        return out;
    }
    return apply_charging_profile(cp, *profile, now);
}

std::string wh_string(double kwh) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", kwh * 1000.0);
    return buf;
}

} // namespace

CentralSystem::CentralSystem(CentralSystemHooks hooks, int heartbeat_interval_s) : hooks_(std::move(hooks)) {
    ctx_.heartbeat_interval_s = heartbeat_interval_s;
}

void CentralSystem::register_charge_point(const std::string& cp_id, double rating_kw, bool bidirectional) {
    Session s;
    s.status.cp_id = cp_id;
    s.status.rating_kw = rating_kw;
    s.status.bidirectional = bidirectional;
    sessions_.insert_or_assign(cp_id, std::move(s));
}

CentralSystem::Session& CentralSystem::session(const std::string& cp_id) {
    auto it = sessions_.find(cp_id);
    if (it == sessions_.end()) {
        throw std::out_of_range("unknown charge point " + cp_id);
    }
    return it->second;
}

const ChargePointStatus& CentralSystem::status(const std::string& cp_id) const {
    return const_cast<CentralSystem*>(this)->session(cp_id).status;
}

std::vector<ChargePointStatus> CentralSystem::statuses() const {
    std::vector<ChargePointStatus> out;
    for (const auto& [id, s] : sessions_) {
        out.push_back(s.status);
    }
    return out;
}

const std::optional<ChargingProfile>& CentralSystem::active_profile(const std::string& cp_id) const {
    return const_cast<CentralSystem*>(this)->session(cp_id).profile;
}

std::size_t CentralSystem::outstanding_calls(const std::string& cp_id) const {
    return const_cast<CentralSystem*>(this)->session(cp_id).outgoing.size();
}

std::string CentralSystem::next_id() { return "cs-" + std::to_string(next_message_++); }

void CentralSystem::send(const std::string& cp_id, const OcppMessage& msg) {
    if (hooks_.send) {
        hooks_.send(cp_id, serialize(msg));
    }
}

void CentralSystem::violation(const std::string& cp_id, const std::string& what) {
    if (hooks_.on_violation) {
        hooks_.on_violation(cp_id, what);
    }
}

void CentralSystem::set_status(Session& s, ChargePointStatus next, std::optional<CpEvent> event, TimeMs now) {
    if (next == s.status && !event) {
        return;
    }
    s.status = std::move(next);
    if (hooks_.on_status) {
        hooks_.on_status(s.status, event, now);
    }
}

void CentralSystem::handle_frame(const std::string& cp_id, const std::string& text, TimeMs now) {
    auto it = sessions_.find(cp_id);
    if (it == sessions_.end()) {
        violation(cp_id, "frame from unregistered charge point");
        return;
    }
    OcppMessage msg;
    try {
        msg = parse_frame(text);
    } catch (const OcppError& e) {
        if (auto id = salvage_message_id(text)) {
            send(cp_id, OcppMessage::error(*id, "FormationViolation", e.what()));
        } else {
            violation(cp_id, std::string("unparseable frame: ") + e.what());
        }
        return;
    }
    if (msg.kind == FrameKind::Call) {
        handle_call(it->second, msg, now);
    } else {
        handle_reply(it->second, msg, now);
    }
}

void CentralSystem::handle_call(Session& s, const OcppMessage& msg, TimeMs now) {
    const std::string& cp_id = s.status.cp_id;
    if (msg.action == "BootNotification") {
        // a new boot starts a new id space
        s.seen_incoming.clear();
    }
    if (!s.seen_incoming.insert(msg.message_id).second) {
        send(cp_id, OcppMessage::error(msg.message_id, "ProtocolError",
                                       std::string(to_string(OcppErrc::DuplicateMessageId))));
        return;
    }
    ctx_.now = now;
    DispatchOutcome outcome = dispatch(s.status, msg, ctx_);
    const bool accepted = outcome.response.kind == FrameKind::CallResult;
    if (accepted && outcome.event &&
        (*outcome.event == CpEvent::StopTransaction || *outcome.event == CpEvent::Fault)) {
        s.profile.reset();
    }
    set_status(s, std::move(outcome.status), outcome.event, now);
    if (accepted && hooks_.on_meter) {
        const json* values = nullptr;
        if (msg.action == "MeterValues") {
            values = &msg.payload["meterValue"];
        } else if (msg.action == "StopTransaction" && msg.payload.contains("transactionData")) {
            values = &msg.payload["transactionData"];
        }
        if (values != nullptr && values->is_array()) {
            for (const auto& v : *values) {
                hooks_.on_meter(cp_id, v, now);
            }
        }
    }
    send(cp_id, outcome.response);
}

void CentralSystem::handle_reply(Session& s, const OcppMessage& msg, TimeMs now) {
    const std::string& cp_id = s.status.cp_id;
    auto taken = s.outgoing.take(msg.message_id);
    if (!taken) {
        violation(cp_id, "reply to unknown call id '" + msg.message_id + "'");
        return;
    }
    const std::string& action = taken->first;
    const std::string status = msg.kind == FrameKind::CallResult ? msg.payload.value("status", std::string{})
                                                                  : "CallError:" + msg.error_code;
    const bool accepted = status == "Accepted";
    if (action == "SetChargingProfile") {
        ChargingProfile profile = s.offered.at(msg.message_id);
        s.offered.erase(msg.message_id);
        std::string detail = status;
        if (accepted) {
            try {
                std::optional<ChargingProfile> candidate = profile;
                ChargePointStatus next = evaluate_profile(s.status, candidate, now);
                if (!candidate) {
                    throw OcppError(OcppErrc::ProfileRejected, "profile expired in transit");
                }
                s.profile = std::move(candidate);
                const std::optional<CpEvent> event =
                    next.state != s.status.state
                        ? std::optional<CpEvent>(next.state == CpState::Discharging ? CpEvent::ProfileNegative
                                                                                    : CpEvent::ProfilePositive)
                        : std::nullopt;
                set_status(s, std::move(next), event, now);
            } catch (const OcppError& e) {
                detail = std::string("mirror rejected: ") + e.what();
                violation(cp_id, detail);
                if (hooks_.on_profile) {
                    hooks_.on_profile(cp_id, profile, false, detail);
                }
                return;
            }
        }
        if (hooks_.on_profile) {
            hooks_.on_profile(cp_id, profile, accepted, detail);
        }
        return;
    }
    if (action == "ReserveNow") {
        const ReservationHold hold = s.reservations_offered.at(msg.message_id);
        s.reservations_offered.erase(msg.message_id);
        if (accepted) {
            try {
                set_status(s, reserve(s.status, hold), CpEvent::ReserveNow, now);
            } catch (const OcppError& e) {
                violation(cp_id, std::string("ReserveNow accepted but mirror refused: ") + e.what());
            }
        }
        if (hooks_.on_reservation) {
            hooks_.on_reservation(cp_id, hold.reservation_id, action, status);
        }
        return;
    }
    if (action == "CancelReservation") {
        const auto rid = taken->second.value("reservationId", std::int64_t{0});
        if (accepted && s.status.state == CpState::Reserved) {
            try {
                set_status(s, cancel_reservation(s.status, rid), CpEvent::CancelReservation, now);
            } catch (const OcppError& e) {
                violation(cp_id, e.what());
            }
        }
        if (hooks_.on_reservation) {
            hooks_.on_reservation(cp_id, rid, action, status);
        }
    }
}

std::string CentralSystem::send_reserve_now(const std::string& cp_id, const ReservationHold& hold) {
    Session& s = session(cp_id);
    const std::string id = next_id();
    const json payload = {{"connectorId", 1},
                          {"expiryDate", to_iso8601(hold.expiry)},
                          {"idTag", hold.vehicle_id},
                          {"reservationId", hold.reservation_id}};
    s.outgoing.add(id, "ReserveNow", payload);
    s.reservations_offered[id] = hold;
    send(cp_id, OcppMessage::call(id, "ReserveNow", payload));
    return id;
}

std::string CentralSystem::send_cancel_reservation(const std::string& cp_id, std::int64_t reservation_id) {
    Session& s = session(cp_id);
    const std::string id = next_id();
    const json payload = {{"reservationId", reservation_id}};
    s.outgoing.add(id, "CancelReservation", payload);
    send(cp_id, OcppMessage::call(id, "CancelReservation", payload));
    return id;
}

std::string CentralSystem::send_charging_profile(const std::string& cp_id, const ChargingProfile& profile) {
    Session& s = session(cp_id);
    const std::string id = next_id();
    const json payload = profile_payload(profile, s.status.transaction_id);
    s.outgoing.add(id, "SetChargingProfile", payload);
    s.offered[id] = profile;
    send(cp_id, OcppMessage::call(id, "SetChargingProfile", payload));
    return id;
}

void CentralSystem::tick(TimeMs now) {
    for (auto& [id, s] : sessions_) {
        const ChargePointStatus released = expire_reservation(s.status, now);
        if (released != s.status) {
            set_status(s, released, CpEvent::ReservationExpired, now);
        }
        if (s.profile && in_transaction(s.status)) {
            ChargePointStatus next = evaluate_profile(s.status, s.profile, now);
            if (next != s.status) {
                const std::optional<CpEvent> event =
                    next.state != s.status.state
                        ? std::optional<CpEvent>(next.state == CpState::Discharging ? CpEvent::ProfileNegative
                                                                                    : CpEvent::ProfilePositive)
                        : std::nullopt;
                set_status(s, std::move(next), event, now);
            }
        }
    }
}

std::optional<TimeMs> CentralSystem::next_wakeup(TimeMs now) const {
    std::optional<TimeMs> best;
    auto consider = [&](TimeMs t) {
        if (t > now && (!best || t < *best)) {
            best = t;
        }
    };
    for (const auto& [id, s] : sessions_) {
        if (s.profile) {
            if (auto t = s.profile->next_change_after(now)) {
                consider(*t);
            }
        }
        if (s.status.reservation) {
            consider(s.status.reservation->expiry);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------

SimulatedChargePoint::SimulatedChargePoint(std::string cp_id, double rating_kw, bool bidirectional, SendFn send)
    : send_(std::move(send)) {
    status_.cp_id = std::move(cp_id);
    status_.rating_kw = rating_kw;
    status_.bidirectional = bidirectional;
}

void SimulatedChargePoint::call(const std::string& action, json payload, TimeMs /*now*/) {
    const std::string id = status_.cp_id + "-" + std::to_string(next_message_++);
    pending_.add(id, action, payload);
    send_(serialize(OcppMessage::call(id, action, std::move(payload))));
}

void SimulatedChargePoint::local(CpEvent /*expect*/, const std::string& action, const json& payload, TimeMs now) {
    ctx_.now = now;
    DispatchOutcome outcome = dispatch(status_, OcppMessage::call("local", action, payload), ctx_);
    if (outcome.response.kind != FrameKind::CallResult) {
        throw OcppError(OcppErrc::ProtocolViolation, status_.cp_id + ": " + outcome.response.error_description);
    }
    set_local(std::move(outcome.status), now);
}

double SimulatedChargePoint::applied_kw() const {
    if (!in_transaction(status_)) {
        return 0.0;
    }
    const double p = std::clamp(status_.active_setpoint_kw, -ev_discharge_ceiling_kw_, ev_charge_ceiling_kw_);
    return p == 0.0 ? 0.0 : p;
}

void SimulatedChargePoint::set_local(ChargePointStatus next, TimeMs now) {
    status_ = std::move(next);
    const double applied = applied_kw();
    meter_.update(now, applied);
    if (applied != last_applied_) {
        last_applied_ = applied;
        if (on_power) {
            on_power(now, applied);
        }
    }
}

json SimulatedChargePoint::meter_value(TimeMs now) const {
    return {{"timestamp", to_iso8601(now)},
            {"sampledValue",
             json::array({{{"measurand", "Energy.Active.Import.Register"}, {"unit", "Wh"}, {"value", wh_string(meter_.import_kwh())}},
                          {{"measurand", "Energy.Active.Export.Register"}, {"unit", "Wh"}, {"value", wh_string(meter_.export_kwh())}},
                          {{"measurand", "Power.Active.Import"}, {"unit", "W"}, {"value", wh_string(applied_kw())}}})}};
}

void SimulatedChargePoint::boot(TimeMs now) {
    const json payload = {{"chargePointModel", "desk-sim"}, {"chargePointVendor", "v2g"}};
    local(CpEvent::Reset, "BootNotification", payload, now);
    call("BootNotification", payload, now);
}

void SimulatedChargePoint::heartbeat(TimeMs now) { call("Heartbeat", json::object(), now); }

void SimulatedChargePoint::authorize(const std::string& id_tag, TimeMs now) { call("Authorize", {{"idTag", id_tag}}, now); }

void SimulatedChargePoint::plug_in(const std::string& vehicle_id, double ev_max_charge_kw, double ev_max_discharge_kw,
                                   TimeMs now) {
    const json payload = {{"connectorId", 1},
                          {"errorCode", "NoError"},
                          {"status", "Preparing"},
                          {"timestamp", to_iso8601(now)},
                          {"x_vehicleId", vehicle_id},
                          {"x_maxChargeKw", ev_max_charge_kw},
                          {"x_maxDischargeKw", ev_max_discharge_kw}};
    local(CpEvent::PlugIn, "StatusNotification", payload, now);
    ev_charge_ceiling_kw_ = status_.ev_max_charge_kw;
    ev_discharge_ceiling_kw_ = status_.ev_max_discharge_kw;
    call("StatusNotification", payload, now);
}

void SimulatedChargePoint::start_transaction(TimeMs now) {
    meter_.advance(now);
    const json payload = {{"connectorId", 1},
                          {"idTag", status_.connected_vehicle.value_or("")},
                          {"meterStart", static_cast<std::int64_t>(std::llround(meter_.import_kwh() * 1000.0))},
                          {"timestamp", to_iso8601(now)}};
    local(CpEvent::StartTransaction, "StartTransaction", payload, now);
    tx_confirmed_ = false;
    call("StartTransaction", payload, now);
}

void SimulatedChargePoint::stop_transaction(TimeMs now, const std::string& reason) {
    if (!status_.transaction_id) {
        throw OcppError(OcppErrc::ProtocolViolation, status_.cp_id + ": no active transaction");
    }
    meter_.advance(now);
    const json payload = {{"meterStop", static_cast<std::int64_t>(std::llround(meter_.import_kwh() * 1000.0))},
                          {"reason", reason},
                          {"timestamp", to_iso8601(now)},
                          {"transactionData", json::array({meter_value(now)})},
                          {"transactionId", *status_.transaction_id}};
    local(CpEvent::StopTransaction, "StopTransaction", payload, now);
    profile_.reset();
    call("StopTransaction", payload, now);
}

void SimulatedChargePoint::unplug(TimeMs now) {
    const json payload = {{"connectorId", 1}, {"errorCode", "NoError"}, {"status", "Available"}, {"timestamp", to_iso8601(now)}};
    local(CpEvent::Unplug, "StatusNotification", payload, now);
    ev_charge_ceiling_kw_ = ev_discharge_ceiling_kw_ = 0.0;
    call("StatusNotification", payload, now);
}

void SimulatedChargePoint::fault(TimeMs now, const std::string& error_code) {
    const json payload = {{"connectorId", 1}, {"errorCode", error_code}, {"status", "Faulted"}, {"timestamp", to_iso8601(now)}};
    local(CpEvent::Fault, "StatusNotification", payload, now);
    profile_.reset();
    call("StatusNotification", payload, now);
}

void SimulatedChargePoint::reset(TimeMs now) {
    const json payload = {{"connectorId", 1}, {"errorCode", "NoError"}, {"status", "Available"}, {"timestamp", to_iso8601(now)}};
    local(CpEvent::Reset, "StatusNotification", payload, now);
    ev_charge_ceiling_kw_ = ev_discharge_ceiling_kw_ = 0.0;
    call("StatusNotification", payload, now);
}

void SimulatedChargePoint::send_meter_values(TimeMs now) {
    meter_.advance(now);
    json payload = {{"connectorId", 1}, {"meterValue", json::array({meter_value(now)})}};
    // the local id is provisional until the central system assigns one
    if (status_.transaction_id && tx_confirmed_) {
        payload["transactionId"] = *status_.transaction_id;
    }
    call("MeterValues", payload, now);
}

void SimulatedChargePoint::set_ev_limits(double charge_kw, double discharge_kw, TimeMs now) {
    ev_charge_ceiling_kw_ = std::clamp(charge_kw, 0.0, status_.ev_max_charge_kw);
    ev_discharge_ceiling_kw_ = std::clamp(discharge_kw, 0.0, status_.ev_max_discharge_kw);
    set_local(status_, now);
}

void SimulatedChargePoint::on_frame(const std::string& text, TimeMs now) {
    OcppMessage msg;
    try {
        msg = parse_frame(text);
    } catch (const OcppError&) {
        if (auto id = salvage_message_id(text)) {
            send_(serialize(OcppMessage::error(*id, "FormationViolation", "unparseable call")));
        }
        return;
    }
    if (msg.kind != FrameKind::Call) {
        auto taken = pending_.take(msg.message_id);
        if (!taken) {
            return;
        }
        if (msg.kind == FrameKind::CallError) {
            if (on_call_error) {
                on_call_error(msg);
            }
            return;
        }
        if (taken->first == "StartTransaction" && msg.payload.contains("transactionId") && status_.transaction_id) {
            status_.transaction_id = msg.payload["transactionId"].get<std::int64_t>();
            tx_confirmed_ = true;
        }
        return;
    }
    auto reply = [&](const std::string& status) {
        send_(serialize(OcppMessage::result(msg.message_id, {{"status", status}})));
    };
    if (msg.action == "SetChargingProfile") {
        try {
            std::optional<ChargingProfile> candidate = profile_from_payload(status_.cp_id, msg.payload);
            ChargePointStatus next = evaluate_profile(status_, candidate, now);
            if (!candidate || !in_transaction(status_)) {
                reply("Rejected");
                return;
            }
            profile_ = std::move(candidate);
            set_local(std::move(next), now);
            reply("Accepted");
        } catch (const OcppError&) {
            reply("Rejected");
        }
        return;
    }
    if (msg.action == "ReserveNow") {
        if (status_.state == CpState::Faulted) {
            reply("Faulted");
            return;
        }
        try {
            ReservationHold hold{msg.payload.at("reservationId").get<std::int64_t>(),
                                 msg.payload.at("idTag").get<std::string>(),
                                 from_iso8601(msg.payload.at("expiryDate").get<std::string>())};
            set_local(reserve(status_, hold), now);
            reply("Accepted");
        } catch (const OcppError&) {
            reply("Occupied");
        } catch (const std::exception&) {
            send_(serialize(OcppMessage::error(msg.message_id, "FormationViolation", "bad ReserveNow payload")));
        }
        return;
    }
    if (msg.action == "CancelReservation") {
        try {
            set_local(cancel_reservation(status_, msg.payload.at("reservationId").get<std::int64_t>()), now);
            reply("Accepted");
        } catch (const std::exception&) {
            reply("Rejected");
        }
        return;
    }
    send_(serialize(OcppMessage::error(msg.message_id, "NotImplemented", "unsupported action '" + msg.action + "'")));
}

void SimulatedChargePoint::tick(TimeMs now) {
    const ChargePointStatus released = expire_reservation(status_, now);
    if (released != status_) {
        set_local(released, now);
        call("StatusNotification",
             {{"connectorId", 1}, {"errorCode", "NoError"}, {"status", "Available"}, {"timestamp", to_iso8601(now)}}, now);
    }
    if (profile_) {
        set_local(evaluate_profile(status_, profile_, now), now);
    }
}

std::optional<TimeMs> SimulatedChargePoint::next_wakeup(TimeMs now) const {
    std::optional<TimeMs> best;
    if (profile_) {
        best = profile_->next_change_after(now);
    }
    if (status_.reservation && status_.reservation->expiry > now && (!best || status_.reservation->expiry < *best)) {
        best = status_.reservation->expiry;
    }
    return best;
}

} // namespace v2g::ocpp
