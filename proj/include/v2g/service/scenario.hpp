// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "v2g/bus/link.hpp"
#include "v2g/core/error.hpp"
#include "v2g/core/time.hpp"
#include "v2g/ev/vehicle.hpp"
#include "v2g/optimizer/imep.hpp"

namespace v2g::svc {

enum class SvcErrc {
    ScenarioInvalid,
    UnknownVehicle,
    UnknownChargePoint,
    UnknownReservation,
    Conflict,
    DepartureInPast,
    InvalidPreference,
    InvalidWindow,
    BadRequest,
    LogInvalid,
};
using SvcError = Error<SvcErrc>;

std::string_view to_string(SvcErrc code);

struct ChargePointSpec {
    std::string id;
    double rating_kw = 11.0;
    bool bidirectional = true;
};

struct VehicleSpec {
    ev::VehicleState state; // presence.charge_point_id set when plugged at t = 0
};

/// One scripted input. `args` keeps the event-specific fields in their JSON
/// form (times already converted to milliseconds).
struct ScriptedEvent {
    TimeMs at = 0;
    std::string type;
    nlohmann::json args = nlohmann::json::object();
};

inline constexpr int kScenarioSchemaVersion = 1;

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 0;
    /// Sim-seconds per wall-second; 0 runs as fast as possible.
    double time_scale = 0.0;
    TimeMs slot_ms = 15 * kMsPerMinute;
    int horizon_slots = 96;
    std::vector<double> site_limit_kw{11.0};
    std::vector<double> price{0.0};
    double peak_step_kw = 0.0;
    TimeMs dispatch_lead_ms = kMsPerMinute;
    TimeMs telemetry_interval_ms = kMsPerMinute;
    /// MeterValues cadence; 0 means one reading per slot boundary.
    TimeMs meter_interval_ms = 0;
    TimeMs duration_ms = 24 * kMsPerHour;
    bool baseline = false;
    opt::TripEnergyTable trips;
    std::string bus_token;
    bus::LinkProfile default_link;
    std::map<std::string, bus::LinkProfile> links; // by client id
    std::vector<ChargePointSpec> charge_points;
    std::vector<VehicleSpec> vehicles;
    std::vector<ScriptedEvent> events;

    const VehicleSpec* vehicle(const std::string& id) const;
    const ChargePointSpec* charge_point(const std::string& id) const;
    bus::LinkProfile link_for(const std::string& client_id) const;
    opt::GridConditions grid() const;
};

/// Scripted event types and their fields:
///   preference         vehicle, departure, required_energy_kwh | trip_class, soc_floor?, v2g_consent?, arrival?
///   reservation        vehicle, charge_point, start, end
///   cancel_reservation reservation_id
///   arrive             vehicle
///   plug_in            vehicle, charge_point
///   unplug             vehicle
///   drive              vehicle, distance_km
///   fault / reset      charge_point
const std::vector<std::string>& scripted_event_types();

/// Throws SvcError(ScenarioInvalid) naming the first offending element.
Scenario scenario_from_toml(const std::string& text);
Scenario load_scenario(const std::string& path);

/// Canonical JSON form, also the payload of the first log record. Times are in ms.
nlohmann::json to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

} // namespace v2g::svc
