// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "json.hpp"
#include "v2g/ocpp/charge_point.hpp"

namespace v2g::svc {

// JSON views of gateway types as they appear in the event log and the HTTP API.

nlohmann::json status_json(const ocpp::ChargePointStatus& st);
ocpp::ChargePointStatus status_from_json(const nlohmann::json& j);

/// Times in ms, periods as [offset_s, limit_kw] pairs.
nlohmann::json profile_json(const ocpp::ChargingProfile& p);
ocpp::ChargingProfile profile_from_json(const nlohmann::json& j);

} // namespace v2g::svc
