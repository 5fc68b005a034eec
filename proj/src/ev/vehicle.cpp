// SPDX-License-Identifier: Apache-2.0
#include "v2g/ev/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace v2g::ev {

namespace {

// Absorbs floating-point noise at the SoC bounds; anything beyond is a real violation.
constexpr double kSocSlack = 1e-12;

double settle_soc(double soc) {
    if (soc < -kSocSlack || soc > 1.0 + kSocSlack || std::isnan(soc)) {
        throw EvError(EvErrc::SocOutOfRange, "state of charge would leave [0,1]: " + std::to_string(soc));
    }
    if (soc < 0.0) {
        return 0.0;
    }
    if (soc > 1.0) {
        return 1.0;
    }
    return soc;
}

} // namespace

std::string_view to_string(PresenceKind kind) {
    switch (kind) {
    case PresenceKind::EnRoute:
        return "EnRoute";
    case PresenceKind::ParkedUnplugged:
        return "ParkedUnplugged";
    case PresenceKind::PluggedIn:
        return "PluggedIn";
    }
    return "?";
}

PresenceKind presence_kind_from_string(std::string_view name) {
    for (auto kind : {PresenceKind::EnRoute, PresenceKind::ParkedUnplugged, PresenceKind::PluggedIn}) {
        if (to_string(kind) == name) {
            return kind;
        }
    }
    throw std::invalid_argument("unknown presence: " + std::string(name));
}

std::string_view to_string(EvErrc code) {
    switch (code) {
    case EvErrc::InvalidParameters:
        return "InvalidParameters";
    case EvErrc::SocOutOfRange:
        return "SocOutOfRange";
    case EvErrc::PowerLimitExceeded:
        return "PowerLimitExceeded";
    case EvErrc::InsufficientEnergy:
        return "InsufficientEnergy";
    case EvErrc::InvalidTransition:
        return "InvalidTransition";
    case EvErrc::MalformedRequest:
        return "MalformedRequest";
    }
    return "?";
}

void validate(const VehicleState& s) {
    auto fail = [&](const char* what) {
        throw EvError(EvErrc::InvalidParameters, s.vehicle_id + ": " + what);
    };
    if (!(s.soc >= 0.0 && s.soc <= 1.0)) {
        fail("soc must lie in [0,1]");
    }
    if (!(s.capacity_kwh > 0.0)) {
        fail("capacity must be positive");
    }
    if (!(s.max_charge_kw > 0.0)) {
        fail("max charge power must be positive");
    }
    if (!(s.max_discharge_kw >= 0.0)) {
        fail("max discharge power must be non-negative");
    }
    if (!(s.charge_efficiency > 0.0 && s.charge_efficiency <= 1.0)) {
        fail("charge efficiency must lie in (0,1]");
    }
    if (!(s.discharge_efficiency > 0.0 && s.discharge_efficiency <= 1.0)) {
        fail("discharge efficiency must lie in (0,1]");
    }
    if (!(s.consumption_kwh_per_km > 0.0)) {
        fail("consumption must be positive");
    }
    if (s.presence.kind == PresenceKind::PluggedIn && s.presence.charge_point_id.empty()) {
        fail("plugged-in vehicle needs a charge point");
    }
}

VehicleState step_soc(const VehicleState& state, double power_kw, double dt_h) {
    if (!(dt_h > 0.0)) {
        throw EvError(EvErrc::InvalidParameters, "time step must be positive");
    }
    if (power_kw > state.max_charge_kw || power_kw < -state.max_discharge_kw) {
        throw EvError(EvErrc::PowerLimitExceeded,
                      state.vehicle_id + ": power " + std::to_string(power_kw) + " kW outside [-" +
                          std::to_string(state.max_discharge_kw) + ", " + std::to_string(state.max_charge_kw) + "]");
    }
    VehicleState next = state;
    const double battery_kwh = power_kw >= 0.0 ? power_kw * dt_h * state.charge_efficiency
                                               : power_kw * dt_h / state.discharge_efficiency;
    next.soc = settle_soc(state.soc + battery_kwh / state.capacity_kwh);
    next.timestamp = state.timestamp + static_cast<TimeMs>(std::llround(dt_h * static_cast<double>(kMsPerHour)));
    return next;
}

VehicleState drive(const VehicleState& state, double distance_km) {
    if (!(distance_km >= 0.0)) {
        throw EvError(EvErrc::InvalidParameters, "distance must be non-negative");
    }
    if (state.presence.kind == PresenceKind::PluggedIn) {
        throw EvError(EvErrc::InvalidTransition, state.vehicle_id + ": cannot drive away while plugged in");
    }
    const double needed = distance_km * state.consumption_kwh_per_km;
    const double available = state.soc * state.capacity_kwh;
    if (needed > available * (1.0 + 1e-12)) {
        throw EvError(EvErrc::InsufficientEnergy, state.vehicle_id + ": trip needs " + std::to_string(needed) +
                                                      " kWh, " + std::to_string(available) + " kWh available");
    }
    VehicleState next = state;
    next.soc = settle_soc(state.soc - needed / state.capacity_kwh);
    next.presence = Presence::en_route();
    return next;
}

VehicleState arrive(const VehicleState& state) {
    if (state.presence.kind == PresenceKind::PluggedIn) {
        throw EvError(EvErrc::InvalidTransition, state.vehicle_id + ": already plugged in");
    }
    VehicleState next = state;
    next.presence = Presence::parked();
    next.speed_kph = 0.0;
    return next;
}

VehicleState plug_in(const VehicleState& state, std::string charge_point_id) {
    if (state.presence.kind != PresenceKind::ParkedUnplugged) {
        throw EvError(EvErrc::InvalidTransition, state.vehicle_id + ": plug-in requires a parked vehicle");
    }
    if (charge_point_id.empty()) {
        throw EvError(EvErrc::InvalidParameters, "charge point id must not be empty");
    }
    VehicleState next = state;
    next.presence = Presence::plugged_in(std::move(charge_point_id));
    next.speed_kph = 0.0;
    return next;
}

VehicleState unplug(const VehicleState& state) {
    if (state.presence.kind != PresenceKind::PluggedIn) {
        throw EvError(EvErrc::InvalidTransition, state.vehicle_id + ": not plugged in");
    }
    VehicleState next = state;
    next.presence = Presence::parked();
    return next;
}

std::uint8_t quantize_soc(double soc) {
    const double scaled = std::floor(soc * 255.0 + 0.5);
    if (scaled <= 0.0) {
        return 0;
    }
    if (scaled >= 255.0) {
        return 255;
    }
    return static_cast<std::uint8_t>(scaled);
}

telemetry::Frame answer_diagnostic(const VehicleState& state, const telemetry::Frame& request) {
    using namespace telemetry;
    if (request.can_id != kFunctionalRequestId) {
        throw EvError(EvErrc::MalformedRequest, "requests use identifier 0x7DF");
    }
    const std::size_t length = request.data[0];
    if (length < 2 || length > 7) {
        throw EvError(EvErrc::MalformedRequest, "request length byte out of range");
    }
    const std::uint8_t mode = request.data[1];
    if (mode == kModeCurrentData) {
        if (length != 2) {
            throw EvError(EvErrc::MalformedRequest, "mode 0x01 request carries exactly one PID");
        }
        switch (request.data[2]) {
        case kPidHybridBatteryRemaining:
            return synthesize_response(ReadingKind::SocPercent, quantize_soc(state.soc));
        case kPidVehicleSpeed: {
            const double speed = state.presence.kind == PresenceKind::EnRoute ? state.speed_kph : 0.0;
            return synthesize_response(ReadingKind::VehicleSpeedKph,
                                       static_cast<std::uint16_t>(std::clamp(std::lround(speed), 0L, 255L)));
        }
        default:
            return negative_response(mode);
        }
    }
    if (mode == kModeReadDataById) {
        if (length != 3) {
            throw EvError(EvErrc::MalformedRequest, "mode 0x22 request carries a two-byte identifier");
        }
        const auto did = static_cast<std::uint16_t>((request.data[2] << 8) | request.data[3]);
        if (did != kDidBatteryCapacity) {
            return negative_response(mode);
        }
        const long raw = std::clamp(std::lround(state.capacity_kwh * 10.0), 1L, 0xFFFFL);
        return synthesize_response(ReadingKind::BatteryCapacityKwh, static_cast<std::uint16_t>(raw));
    }
    return negative_response(mode);
}

} // namespace v2g::ev
