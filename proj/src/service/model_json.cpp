// SPDX-License-Identifier: Apache-2.0
#include "v2g/service/model_json.hpp"

#include <stdexcept>

namespace v2g::svc {

using nlohmann::json;

json status_json(const ocpp::ChargePointStatus& st) {
    json j = {{"cp_id", st.cp_id},
              {"state", std::string(ocpp::to_string(st.state))},
              {"connected_vehicle", st.connected_vehicle ? json(*st.connected_vehicle) : json(nullptr)},
              {"active_setpoint_kw", st.active_setpoint_kw},
              {"rating_kw", st.rating_kw},
              {"bidirectional", st.bidirectional},
              {"booted", st.booted},
              {"transaction_id", st.transaction_id ? json(*st.transaction_id) : json(nullptr)},
              {"ev_max_charge_kw", st.ev_max_charge_kw},
              {"ev_max_discharge_kw", st.ev_max_discharge_kw}};
    if (st.reservation) {
        j["reservation"] = {{"reservation_id", st.reservation->reservation_id},
                            {"vehicle_id", st.reservation->vehicle_id},
                            {"expiry_ms", st.reservation->expiry}};
    } else {
        j["reservation"] = nullptr;
    }
    return j;
}

ocpp::ChargePointStatus status_from_json(const json& j) {
    ocpp::ChargePointStatus st;
    st.cp_id = j.at("cp_id").get<std::string>();
    const auto state = ocpp::cp_state_from_string(j.at("state").get<std::string>());
    if (!state) {
        throw std::invalid_argument("unknown charge point state " + j.at("state").dump());
    }
    st.state = *state;
    if (!j.at("connected_vehicle").is_null()) {
        st.connected_vehicle = j["connected_vehicle"].get<std::string>();
    }
    st.active_setpoint_kw = j.at("active_setpoint_kw").get<double>();
    st.rating_kw = j.at("rating_kw").get<double>();
    st.bidirectional = j.at("bidirectional").get<bool>();
    st.booted = j.at("booted").get<bool>();
    if (!j.at("transaction_id").is_null()) {
        st.transaction_id = j["transaction_id"].get<std::int64_t>();
    }
    st.ev_max_charge_kw = j.at("ev_max_charge_kw").get<double>();
    st.ev_max_discharge_kw = j.at("ev_max_discharge_kw").get<double>();
    if (!j.at("reservation").is_null()) {
        const json& r = j["reservation"];
        st.reservation = ocpp::ReservationHold{r.at("reservation_id").get<std::int64_t>(),
                                               r.at("vehicle_id").get<std::string>(), r.at("expiry_ms").get<TimeMs>()};
    }
    return st;
}

json profile_json(const ocpp::ChargingProfile& p) {
    json periods = json::array();
    for (const auto& s : p.periods) {
        periods.push_back({s.start_offset_s, s.limit_kw});
    }
    return {{"profile_id", p.profile_id}, {"cp_id", p.cp_id},         {"vehicle_id", p.vehicle_id},
            {"valid_from", p.valid_from}, {"valid_to", p.valid_to},   {"periods", periods}};
}

ocpp::ChargingProfile profile_from_json(const json& j) {
    ocpp::ChargingProfile p;
    p.profile_id = j.at("profile_id").get<std::int64_t>();
    p.cp_id = j.at("cp_id").get<std::string>();
    p.vehicle_id = j.at("vehicle_id").get<std::string>();
    p.valid_from = j.at("valid_from").get<TimeMs>();
    p.valid_to = j.at("valid_to").get<TimeMs>();
    for (const auto& s : j.at("periods")) {
        p.periods.push_back({s.at(0).get<std::int64_t>(), s.at(1).get<double>()});
    }
    return p;
}

} // namespace v2g::svc
