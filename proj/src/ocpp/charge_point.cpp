// SPDX-License-Identifier: Apache-2.0
#include "v2g/ocpp/charge_point.hpp"

#include <algorithm>
#include <cmath>

namespace v2g::ocpp {

using nlohmann::json;

namespace {

constexpr double kLimitSlackKw = 1e-9;

} // namespace

std::string_view to_string(CpState s) {
    switch (s) {
    case CpState::Available:
        return "Available";
    case CpState::Reserved:
        return "Reserved";
    case CpState::Preparing:
        return "Preparing";
    case CpState::Charging:
        return "Charging";
    case CpState::Discharging:
        return "Discharging";
    case CpState::Finishing:
        return "Finishing";
    case CpState::Faulted:
        return "Faulted";
    }
    return "?";
}

std::optional<CpState> cp_state_from_string(std::string_view s) {
    for (CpState st : kAllStates) {
        if (to_string(st) == s) {
            return st;
        }
    }
    return std::nullopt;
}

std::string_view to_string(CpEvent e) {
    switch (e) {
    case CpEvent::ReserveNow:
        return "ReserveNow";
    case CpEvent::CancelReservation:
        return "CancelReservation";
    case CpEvent::ReservationExpired:
        return "ReservationExpired";
    case CpEvent::PlugIn:
        return "PlugIn";
    case CpEvent::StartTransaction:
        return "StartTransaction";
    case CpEvent::ProfilePositive:
        return "ProfilePositive";
    case CpEvent::ProfileNegative:
        return "ProfileNegative";
    case CpEvent::StopTransaction:
        return "StopTransaction";
    case CpEvent::Unplug:
        return "Unplug";
    case CpEvent::Fault:
        return "Fault";
    case CpEvent::Reset:
        return "Reset";
    }
    return "?";
}

std::optional<CpState> transition(CpState from, CpEvent event) {
    using S = CpState;
    switch (event) {
    case CpEvent::ReserveNow:
        if (from == S::Available) {
            return S::Reserved;
        }
        break;
    case CpEvent::CancelReservation:
    case CpEvent::ReservationExpired:
        if (from == S::Reserved) {
            return S::Available;
        }
        break;
    case CpEvent::PlugIn:
        if (from == S::Available || from == S::Reserved) {
            return S::Preparing;
        }
        break;
    case CpEvent::StartTransaction:
        if (from == S::Preparing) {
            return S::Charging;
        }
        break;
    case CpEvent::ProfilePositive:
        if (from == S::Charging || from == S::Discharging) {
            return S::Charging;
        }
        break;
    case CpEvent::ProfileNegative:
        if (from == S::Charging || from == S::Discharging) {
            return S::Discharging;
        }
        break;
    case CpEvent::StopTransaction:
        if (from == S::Charging || from == S::Discharging) {
            return S::Finishing;
        }
        break;
    case CpEvent::Unplug:
        if (from == S::Finishing) {
            return S::Available;
        }
        break;
    case CpEvent::Fault:
        return S::Faulted;
    case CpEvent::Reset:
        if (from == S::Faulted) {
            return S::Available;
        }
        break;
    }
    return std::nullopt;
}

std::optional<std::string> check_invariants(const ChargePointStatus& cp) {
    const bool active = cp.state == CpState::Charging || cp.state == CpState::Discharging;
    if (!active && cp.active_setpoint_kw != 0.0) {
        return "non-zero setpoint outside a transaction in state " + std::string(to_string(cp.state));
    }
    if ((cp.state == CpState::Discharging) != (cp.active_setpoint_kw < 0.0)) {
        return "setpoint sign disagrees with state " + std::string(to_string(cp.state));
    }
    if (active != cp.transaction_id.has_value()) {
        return "transaction id presence disagrees with state " + std::string(to_string(cp.state));
    }
    if ((cp.state == CpState::Reserved) != cp.reservation.has_value()) {
        return "reservation presence disagrees with state " + std::string(to_string(cp.state));
    }
    return std::nullopt;
}

bool ChargingProfile::bidirectional() const {
    return std::any_of(periods.begin(), periods.end(), [](const SchedulePeriod& p) { return p.limit_kw < 0.0; });
}

std::optional<double> ChargingProfile::limit_at(TimeMs now) const {
    if (now < valid_from || now >= valid_to || periods.empty()) {
        return std::nullopt;
    }
    const std::int64_t elapsed_ms = now - valid_from;
    double limit = periods.front().limit_kw;
    for (const auto& p : periods) {
        if (p.start_offset_s * kMsPerSecond <= elapsed_ms) {
            limit = p.limit_kw;
        } else {
            break;
        }
    }
    return limit;
}

std::optional<TimeMs> ChargingProfile::next_change_after(TimeMs now) const {
    for (const auto& p : periods) {
        const TimeMs at = valid_from + p.start_offset_s * kMsPerSecond;
        if (at > now && at < valid_to) {
            return at;
        }
    }
    if (valid_to > now) {
        return valid_to;
    }
    return std::nullopt;
}

void validate_profile(const ChargingProfile& profile, double rating_kw) {
    auto reject = [](const std::string& why) { throw OcppError(OcppErrc::ProfileRejected, why); };
    if (profile.periods.empty()) {
        reject("profile has no schedule periods");
    }
    if (profile.periods.front().start_offset_s != 0) {
        reject("first schedule period must start at offset 0");
    }
    for (std::size_t i = 1; i < profile.periods.size(); ++i) {
        if (profile.periods[i].start_offset_s <= profile.periods[i - 1].start_offset_s) {
            reject("schedule period offsets must be strictly increasing");
        }
    }
    if (profile.valid_to <= profile.valid_from) {
        reject("profile validity window is empty");
    }
    for (const auto& p : profile.periods) {
        if (!std::isfinite(p.limit_kw) || std::abs(p.limit_kw) > rating_kw + kLimitSlackKw) {
            reject("period limit exceeds connector rating");
        }
    }
}

ChargePointStatus apply_charging_profile(const ChargePointStatus& cp, const ChargingProfile& profile, TimeMs now) {
    auto reject = [](const std::string& why) { throw OcppError(OcppErrc::ProfileRejected, why); };
    if (profile.cp_id != cp.cp_id) {
        reject("profile addressed to " + profile.cp_id + ", not " + cp.cp_id);
    }
    validate_profile(profile, cp.rating_kw);
    const auto limit = profile.limit_at(now);
    if (!limit) {
        reject(now >= profile.valid_to ? "profile has expired" : "profile is not yet valid");
    }
    if (*limit < 0.0 && !cp.bidirectional) {
        reject("discharge limit on a unidirectional charge point");
    }
    if (!profile.vehicle_id.empty() && cp.connected_vehicle && *cp.connected_vehicle != profile.vehicle_id) {
        reject("profile is for vehicle " + profile.vehicle_id);
    }
    const CpEvent event = *limit < 0.0 ? CpEvent::ProfileNegative : CpEvent::ProfilePositive;
    const auto next = transition(cp.state, event);
    if (!next) {
        throw OcppError(OcppErrc::NotInTransaction,
                        "no active transaction in state " + std::string(to_string(cp.state)));
    }
    if (*limit > cp.ev_max_charge_kw + kLimitSlackKw || -*limit > cp.ev_max_discharge_kw + kLimitSlackKw) {
        reject("limit exceeds the power negotiated with the vehicle");
    }
    ChargePointStatus out = cp;
    out.state = *next;
    // -0.0 would otherwise satisfy neither sign test consistently
    out.active_setpoint_kw = *limit == 0.0 ? 0.0 : *limit;
    return out;
}

json profile_payload(const ChargingProfile& profile, std::optional<std::int64_t> transaction_id) {
    json periods = json::array();
    for (const auto& p : profile.periods) {
        periods.push_back({{"startPeriod", p.start_offset_s}, {"limit", p.limit_kw * 1000.0}});
    }
    json cs = {{"chargingProfileId", profile.profile_id},
               {"stackLevel", 0},
               {"chargingProfilePurpose", "TxProfile"},
               {"chargingProfileKind", "Absolute"},
               {"validFrom", to_iso8601(profile.valid_from)},
               {"validTo", to_iso8601(profile.valid_to)},
               {"chargingSchedule",
                {{"chargingRateUnit", "W"}, {"startSchedule", to_iso8601(profile.valid_from)},
                 {"chargingSchedulePeriod", periods}}}};
    if (transaction_id) {
        cs["transactionId"] = *transaction_id;
    }
    return {{"connectorId", 1},
            {"csChargingProfiles", cs},
            {"x_bidirectional", profile.bidirectional()},
            {"x_vehicleId", profile.vehicle_id}};
}

ChargingProfile profile_from_payload(const std::string& cp_id, const json& payload) {
    try {
        const json& cs = payload.at("csChargingProfiles");
        const json& sched = cs.at("chargingSchedule");
        if (sched.at("chargingRateUnit").get<std::string>() != "W") {
            throw OcppError(OcppErrc::ProfileRejected, "only W charging rate unit is supported");
        }
        ChargingProfile p;
        p.profile_id = cs.at("chargingProfileId").get<std::int64_t>();
        p.cp_id = cp_id;
        p.vehicle_id = payload.value("x_vehicleId", std::string{});
        p.valid_from = from_iso8601(cs.at("validFrom").get<std::string>());
        p.valid_to = from_iso8601(cs.at("validTo").get<std::string>());
        for (const auto& period : sched.at("chargingSchedulePeriod")) {
            p.periods.push_back({period.at("startPeriod").get<std::int64_t>(), period.at("limit").get<double>() / 1000.0});
        }
        if (p.bidirectional() && !payload.value("x_bidirectional", false)) {
            throw OcppError(OcppErrc::ProfileRejected, "negative limits require x_bidirectional");
        }
        return p;
    } catch (const json::exception& e) {
        throw OcppError(OcppErrc::ProfileRejected, std::string("malformed charging profile: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw OcppError(OcppErrc::ProfileRejected, std::string("malformed charging profile: ") + e.what());
    }
}

void Meter::update(TimeMs now, double power_kw) {
    if (started_ && now > last_) {
        const double e = power_kw_ * ms_to_hours(now - last_);
        if (e >= 0.0) {
            import_kwh_ += e;
        } else {
            export_kwh_ -= e;
        }
    }
    if (!started_ || now > last_) {
        last_ = now;
    }
    started_ = true;
    power_kw_ = power_kw;
}

ChargePointStatus reserve(const ChargePointStatus& cp, const ReservationHold& hold) {
    const auto next = transition(cp.state, CpEvent::ReserveNow);
    if (!next) {
        throw OcppError(OcppErrc::ProtocolViolation, "cannot reserve in state " + std::string(to_string(cp.state)));
    }
    ChargePointStatus out = cp;
    out.state = *next;
    out.reservation = hold;
    return out;
}

ChargePointStatus cancel_reservation(const ChargePointStatus& cp, std::int64_t reservation_id) {
    const auto next = transition(cp.state, CpEvent::CancelReservation);
    if (!next || !cp.reservation || cp.reservation->reservation_id != reservation_id) {
        throw OcppError(OcppErrc::ProtocolViolation, "no such reservation on " + cp.cp_id);
    }
    ChargePointStatus out = cp;
    out.state = *next;
    out.reservation.reset();
    return out;
}

ChargePointStatus expire_reservation(const ChargePointStatus& cp, TimeMs now) {
    if (cp.state != CpState::Reserved || !cp.reservation || now < cp.reservation->expiry) {
        return cp;
    }
    ChargePointStatus out = cp;
    out.state = *transition(cp.state, CpEvent::ReservationExpired);
    out.reservation.reset();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

OcppMessage protocol_error(const OcppMessage& call, const std::string& why) {
    return OcppMessage::error(call.message_id, "ProtocolError", why);
}

OcppMessage missing(const OcppMessage& call, const char* field) {
    return OcppMessage::error(call.message_id, "OccurenceConstraintViolation",
                              call.action + " requires field '" + field + "'");
}

bool has_string(const json& p, const char* key) { return p.contains(key) && p[key].is_string(); }

json id_tag_info(const char* status) { return {{"status", status}}; }

} // namespace

DispatchOutcome dispatch(const ChargePointStatus& cp, const OcppMessage& call, DispatchContext& ctx) {
    DispatchOutcome out{cp, {}, std::nullopt};
    auto reject = [&](OcppMessage error) {
        out.status = cp;
        out.response = std::move(error);
        out.event.reset();
        return out;
    };
    if (call.kind != FrameKind::Call) {
        return reject(protocol_error(call, "dispatch expects a Call frame"));
    }
    const json& p = call.payload;
    const auto& action = call.action;
    if (std::find(kClientActions.begin(), kClientActions.end(), action) == kClientActions.end()) {
        return reject(OcppMessage::error(call.message_id, "NotImplemented", "unsupported action '" + action + "'"));
    }
    if (!cp.booted && action != "BootNotification") {
        return reject(protocol_error(call, "BootNotification required before " + action));
    }

    if (action == "BootNotification") {
        if (!has_string(p, "chargePointVendor")) {
            return reject(missing(call, "chargePointVendor"));
        }
        if (!has_string(p, "chargePointModel")) {
            return reject(missing(call, "chargePointModel"));
        }
        out.status.booted = true;
        out.response = OcppMessage::result(call.message_id, {{"currentTime", to_iso8601(ctx.now)},
                                                              {"interval", ctx.heartbeat_interval_s},
                                                              {"status", "Accepted"}});
        return out;
    }
    if (action == "Heartbeat") {
        out.response = OcppMessage::result(call.message_id, {{"currentTime", to_iso8601(ctx.now)}});
        return out;
    }
    if (action == "Authorize") {
        if (!has_string(p, "idTag")) {
            return reject(missing(call, "idTag"));
        }
        const auto tag = p["idTag"].get<std::string>();
        const bool ok = !tag.empty() && (ctx.known_id_tags.empty() ||
                                         std::find(ctx.known_id_tags.begin(), ctx.known_id_tags.end(), tag) !=
                                             ctx.known_id_tags.end());
        out.response = OcppMessage::result(call.message_id, {{"idTagInfo", id_tag_info(ok ? "Accepted" : "Invalid")}});
        return out;
    }
    if (action == "MeterValues") {
        if (!p.contains("meterValue") || !p["meterValue"].is_array()) {
            return reject(missing(call, "meterValue"));
        }
        if (p.contains("transactionId") && (!cp.transaction_id || p["transactionId"] != *cp.transaction_id)) {
            return reject(protocol_error(call, "MeterValues for a transaction that is not active"));
        }
        out.response = OcppMessage::result(call.message_id, json::object());
        return out;
    }
    if (action == "StatusNotification") {
        if (!has_string(p, "status")) {
            return reject(missing(call, "status"));
        }
        if (!has_string(p, "errorCode")) {
            return reject(missing(call, "errorCode"));
        }
        const auto reported = cp_state_from_string(p["status"].get<std::string>());
        if (!reported) {
            return reject(OcppMessage::error(call.message_id, "PropertyConstraintViolation",
                                             "unsupported status '" + p["status"].get<std::string>() + "'"));
        }
        ChargePointStatus& st = out.status;
        if (*reported == cp.state) {
            out.response = OcppMessage::result(call.message_id, json::object());
            return out;
        }
        std::optional<CpEvent> event;
        switch (*reported) {
        case CpState::Preparing:
            event = CpEvent::PlugIn;
            break;
        case CpState::Faulted:
            event = CpEvent::Fault;
            break;
        case CpState::Available:
            if (cp.state == CpState::Finishing) {
                event = CpEvent::Unplug;
            } else if (cp.state == CpState::Faulted) {
                event = CpEvent::Reset;
            } else if (cp.state == CpState::Reserved && cp.reservation && ctx.now >= cp.reservation->expiry) {
                event = CpEvent::ReservationExpired;
            }
            break;
        default:
            break;
        }
        const auto next = event ? transition(cp.state, *event) : std::nullopt;
        if (!next) {
            return reject(protocol_error(call, "status " + std::string(to_string(*reported)) + " not reachable from " +
                                                   std::string(to_string(cp.state))));
        }
        if (*event == CpEvent::PlugIn) {
            const auto vehicle = p.value("x_vehicleId", std::string{});
            if (cp.state == CpState::Reserved && vehicle != cp.reservation->vehicle_id) {
                return reject(protocol_error(call, "connector is reserved for " + cp.reservation->vehicle_id));
            }
            if (!vehicle.empty()) {
                st.connected_vehicle = vehicle;
            }
            st.ev_max_charge_kw = std::min(cp.rating_kw, p.value("x_maxChargeKw", cp.rating_kw));
            st.ev_max_discharge_kw =
                cp.bidirectional ? std::min(cp.rating_kw, p.value("x_maxDischargeKw", cp.rating_kw)) : 0.0;
            st.reservation.reset();
        } else if (*event == CpEvent::Fault) {
            st.active_setpoint_kw = 0.0;
            st.transaction_id.reset();
            st.reservation.reset();
        } else {
            // Unplug, Reset, ReservationExpired all leave an idle connector
            st.connected_vehicle.reset();
            st.ev_max_charge_kw = 0.0;
            st.ev_max_discharge_kw = 0.0;
            st.active_setpoint_kw = 0.0;
            st.transaction_id.reset();
            st.reservation.reset();
        }
        st.state = *next;
        out.event = event;
        out.response = OcppMessage::result(call.message_id, json::object());
        return out;
    }
    if (action == "StartTransaction") {
        if (!has_string(p, "idTag")) {
            return reject(missing(call, "idTag"));
        }
        if (!p.contains("meterStart")) {
            return reject(missing(call, "meterStart"));
        }
        const auto next = transition(cp.state, CpEvent::StartTransaction);
        if (!next) {
            return reject(protocol_error(call, "StartTransaction requires Preparing, not " +
                                                   std::string(to_string(cp.state))));
        }
        const auto tag = p["idTag"].get<std::string>();
        if (cp.connected_vehicle && *cp.connected_vehicle != tag) {
            return reject(protocol_error(call, "idTag does not match the connected vehicle"));
        }
        out.status.connected_vehicle = tag;
        out.status.state = *next;
        out.status.active_setpoint_kw = 0.0;
        out.status.transaction_id = ctx.next_transaction_id++;
        out.event = CpEvent::StartTransaction;
        out.response = OcppMessage::result(
            call.message_id, {{"idTagInfo", id_tag_info("Accepted")}, {"transactionId", *out.status.transaction_id}});
        return out;
    }
    // StopTransaction
    if (!p.contains("transactionId") || !p["transactionId"].is_number_integer()) {
        return reject(missing(call, "transactionId"));
    }
    if (!p.contains("meterStop")) {
        return reject(missing(call, "meterStop"));
    }
    const auto next = transition(cp.state, CpEvent::StopTransaction);
    if (!next) {
        return reject(protocol_error(call, "no active transaction in state " + std::string(to_string(cp.state))));
    }
    if (p["transactionId"].get<std::int64_t>() != *cp.transaction_id) {
        return reject(protocol_error(call, "transactionId does not match the active transaction"));
    }
    out.status.state = *next;
    out.status.active_setpoint_kw = 0.0;
    out.status.transaction_id.reset();
    out.event = CpEvent::StopTransaction;
    out.response = OcppMessage::result(call.message_id, {{"idTagInfo", id_tag_info("Accepted")}});
    return out;
}

} // namespace v2g::ocpp
